// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "rtrec/content.hpp"
#include "rtrec/ingest.hpp"
#include "rtrec/recommendation.hpp"
#include "rtrec/store.hpp"
#include "rtrec/trainer.hpp"

namespace rtrec {

using Clock = std::chrono::steady_clock;

/// Key-value cache whose entries expire `ttl` after they were loaded.
template <typename Key, typename Value>
class TtlCache {
 public:
  explicit TtlCache(std::chrono::duration<double> ttl) : ttl_(ttl) {}

  std::optional<Value> get(const Key& key) {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end() || Clock::now() - it->second.loaded_at >= ttl_) {
      if (it != entries_.end()) entries_.erase(it);
      misses_.fetch_add(1, std::memory_order_relaxed);
      return std::nullopt;
    }
    hits_.fetch_add(1, std::memory_order_relaxed);
    return it->second.value;
  }

  void put(const Key& key, Value value) {
    std::lock_guard lock(mutex_);
    entries_.insert_or_assign(key, Entry{std::move(value), Clock::now()});
  }

  void erase(const Key& key) {
    std::lock_guard lock(mutex_);
    entries_.erase(key);
  }

  void clear() {
    std::lock_guard lock(mutex_);
    entries_.clear();
  }

  std::uint64_t hits() const noexcept { return hits_.load(std::memory_order_relaxed); }
  std::uint64_t misses() const noexcept { return misses_.load(std::memory_order_relaxed); }

 private:
  struct Entry {
    Value value;
    Clock::time_point loaded_at;
  };

  std::chrono::duration<double> ttl_;
  std::mutex mutex_;
  std::map<Key, Entry> entries_;
  std::atomic<std::uint64_t> hits_{0};
  std::atomic<std::uint64_t> misses_{0};
};

enum class Algorithm { Collab, Content, Top };

std::string_view to_string(Algorithm algo) noexcept;
std::optional<Algorithm> parse_algorithm(std::string_view text) noexcept;

struct RecommendationRequest {
  std::string user_id;
  std::size_t n = 10;
  Algorithm algorithm = Algorithm::Collab;
  /// Only articles ingested within this many seconds are candidates.
  std::optional<double> candidate_window_seconds;
};

struct RecommendationResponse {
  RecommendationList items;
  Algorithm served_by = Algorithm::Top;
  bool fallback = false;
};

struct ServeConfig {
  std::filesystem::path store_dir = "rtrec-store";
  Durability durability = Durability::Sync;
  TrainerConfig trainer;
  RankerConfig ranker;
  SignificanceRule rule;
  double flush_interval_seconds = 60.0;
  double model_ttl_seconds = 5.0;
  double top_ttl_seconds = 30.0;
  std::size_t queue_capacity = 100000;
  bool train_content = true;

  void validate() const;
};

struct LatencySummary {
  std::uint64_t count = 0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double p99_ms = 0.0;
};

struct MetricsSnapshot {
  std::map<std::string, LatencySummary> endpoints;
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
  double cache_hit_ratio = 0.0;
  std::uint64_t events_ingested = 0;
  std::uint64_t events_trained = 0;
  std::uint64_t trainer_lag = 0;
  std::uint64_t batches_trained = 0;
};

/// Per-endpoint latency samples.
class LatencyRecorder {
 public:
  void record(const std::string& endpoint, double seconds);
  std::map<std::string, LatencySummary> summarize() const;

 private:
  static constexpr std::size_t kMaxSamples = 1 << 20;
  mutable std::mutex mutex_;
  std::map<std::string, std::vector<double>> samples_;
  std::map<std::string, std::uint64_t> counts_;
};

/// The whole engine in one process: ingestion, a background trainer,
/// cached model access and recommendation serving. State shared with
/// request threads goes through the store, the trainer's locked state or
/// the caches.
class Engine {
 public:
  explicit Engine(ServeConfig config);
  ~Engine();

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  /// Persists the event and queues it for training. Returns its sequence
  /// number. Throws ValidationError or OrderingError for a rejected event
  /// and QueueFullError when the trainer is too far behind.
  std::uint64_t ingest_event(const InteractionEvent& event);

  /// Extracts and persists features; the article is recommendable at once.
  void ingest_article(const ArticleDocument& doc);

  RecommendationResponse recommend(const RecommendationRequest& request);

  MetricsSnapshot metrics() const;

  /// Trains everything queued so far and waits for it.
  void flush();

  /// Records a latency sample under `endpoint` (used by the HTTP layer).
  void record_latency(const std::string& endpoint, double seconds);

  Store& store() noexcept { return *store_; }
  const IncrementalTrainer& trainer() const noexcept { return *trainer_; }
  const ServeConfig& config() const noexcept { return config_; }

 private:
  struct ArticleEntry {
    FeatureVector features;
    std::int64_t ingested_at = 0;  // wall-clock seconds
  };
  struct ItemMatrix {
    std::vector<std::string> ids;
    Eigen::MatrixXd Y;
  };

  void load_from_store();
  void trainer_loop(std::stop_token stop);
  void train_pending(std::vector<SignificantAction> actions);
  void persist_commit(const BatchCommit& commit);
  void train_content_models(const std::set<std::string>& users);

  std::set<std::string> seen_items(const std::string& user) const;
  std::set<std::string> candidate_articles(std::optional<double> window) const;
  RecommendationList top_items(const std::set<std::string>& exclude, std::size_t n,
                               std::optional<double> window);
  std::optional<RecommendationList> collab_items(const std::string& user,
                                                 const std::set<std::string>& exclude,
                                                 std::size_t n, std::optional<double> window);
  std::optional<RecommendationList> content_items(const std::string& user,
                                                  const std::set<std::string>& exclude,
                                                  std::size_t n, std::optional<double> window);

  ServeConfig config_;
  std::unique_ptr<Store> store_;
  std::unique_ptr<IncrementalTrainer> trainer_;

  // ingestion
  std::mutex ingest_mutex_;
  std::condition_variable_any ingest_cv_;
  std::deque<InteractionEvent> queue_;
  std::map<std::string, std::int64_t> last_timestamp_;
  std::uint64_t next_event_sequence_ = 0;
  std::uint64_t flush_requested_ = 0;
  std::uint64_t flush_completed_ = 0;
  std::condition_variable_any flushed_cv_;
  std::atomic<std::uint64_t> events_ingested_{0};
  std::atomic<std::uint64_t> events_trained_{0};
  std::atomic<std::uint64_t> batches_trained_{0};

  // trainer-thread only
  StreamAggregator aggregator_;
  std::vector<SignificantAction> pending_;

  mutable std::shared_mutex articles_mutex_;
  std::map<std::string, ArticleEntry> articles_;

  TtlCache<std::string, std::shared_ptr<const Eigen::VectorXd>> user_vector_cache_;
  TtlCache<std::string, std::shared_ptr<const ContentModel>> content_model_cache_;
  TtlCache<int, std::shared_ptr<const ItemMatrix>> item_matrix_cache_;
  TtlCache<int, std::shared_ptr<const RecommendationList>> top_cache_;

  LatencyRecorder latency_;
  std::jthread trainer_thread_;
};

/// HTTP front end over an Engine (cpp-httplib).
///   POST /events           one event object or an array of them
///   POST /articles         one article object
///   GET  /recommendations  ?user=<id>&n=<k>&algo=<collab|content|top>[&window=<s>]
///   GET  /metrics
class HttpServer {
 public:
  explicit HttpServer(Engine& engine);
  ~HttpServer();

  /// Binds and serves on a background thread; returns the bound port
  /// (pass 0 for an ephemeral one).
  int start(const std::string& host, int port);
  /// Serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace rtrec
