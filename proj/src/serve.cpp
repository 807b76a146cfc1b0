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

#include "rtrec/serve.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include <httplib.h>
#include <json.hpp>

#include "rtrec/codec.hpp"
#include "rtrec/error.hpp"

namespace rtrec {

using json = nlohmann::json;

std::string_view to_string(Algorithm algo) noexcept {
  switch (algo) {
    case Algorithm::Collab:
      return "collab";
    case Algorithm::Content:
      return "content";
    case Algorithm::Top:
      return "top";
  }
  return "top";
}

std::optional<Algorithm> parse_algorithm(std::string_view text) noexcept {
  if (text == "collab") return Algorithm::Collab;
  if (text == "content") return Algorithm::Content;
  if (text == "top") return Algorithm::Top;
  return std::nullopt;
}

void ServeConfig::validate() const {
  trainer.validate();
  ranker.validate();
  rule.validate();
  if (!(flush_interval_seconds > 0.0)) throw ValidationError("flush interval must be positive");
  if (!(model_ttl_seconds >= 0.0) || !(top_ttl_seconds >= 0.0)) {
    throw ValidationError("cache TTLs must be non-negative");
  }
  if (queue_capacity == 0) throw ValidationError("queue capacity must be positive");
}

void LatencyRecorder::record(const std::string& endpoint, double seconds) {
  std::lock_guard lock(mutex_);
  ++counts_[endpoint];
  auto& samples = samples_[endpoint];
  if (samples.size() < kMaxSamples) samples.push_back(seconds);
}

std::map<std::string, LatencySummary> LatencyRecorder::summarize() const {
  std::lock_guard lock(mutex_);
  std::map<std::string, LatencySummary> out;
  for (const auto& [endpoint, raw] : samples_) {
    auto sorted = raw;
    std::sort(sorted.begin(), sorted.end());
    auto quantile = [&](double q) {
      if (sorted.empty()) return 0.0;
      // Nearest rank.
      const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
      return 1000.0 * sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
    };
    out[endpoint] = {counts_.at(endpoint), quantile(0.50), quantile(0.95), quantile(0.99)};
  }
  return out;
}

namespace {

std::int64_t wall_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::chrono::duration<double> seconds(double s) { return std::chrono::duration<double>(s); }

json article_json(const ArticleDocument& doc, std::int64_t ingested_at) {
  return {{"item_id", doc.item_id}, {"section", doc.section}, {"author", doc.author},
          {"title", doc.title},     {"body", doc.body},       {"ingested_at", ingested_at}};
}

class Stopwatch {
 public:
  Stopwatch(LatencyRecorder& recorder, std::string endpoint)
      : recorder_(recorder), endpoint_(std::move(endpoint)), start_(Clock::now()) {}
  ~Stopwatch() {
    recorder_.record(endpoint_, std::chrono::duration<double>(Clock::now() - start_).count());
  }

 private:
  LatencyRecorder& recorder_;
  std::string endpoint_;
  Clock::time_point start_;
};

}  // namespace

Engine::Engine(ServeConfig config)
    : config_(std::move(config)),
      aggregator_(config_.rule),
      user_vector_cache_(seconds(config_.model_ttl_seconds)),
      content_model_cache_(seconds(config_.model_ttl_seconds)),
      item_matrix_cache_(seconds(config_.model_ttl_seconds)),
      top_cache_(seconds(config_.top_ttl_seconds)) {
  config_.validate();
  store_ = Store::recover(config_.store_dir, {config_.durability});
  load_from_store();
  trainer_thread_ = std::jthread([this](std::stop_token stop) { trainer_loop(stop); });
}

Engine::~Engine() {
  trainer_thread_.request_stop();
  ingest_cv_.notify_all();
  if (trainer_thread_.joinable()) trainer_thread_.join();
}

void Engine::load_from_store() {
  const auto& als = config_.trainer.als;
  ModelState state;
  for (const auto& [user, bytes] : store_->scan(Namespace::Ratings)) {
    auto items = codec::decode_ratings(bytes);
    state.ratings[user].insert(items.begin(), items.end());
  }
  auto load_vectors = [&](Namespace ns, std::map<std::string, Eigen::VectorXd>& into) {
    for (auto& [id, bytes] : store_->scan(ns)) {
      auto v = codec::decode_vector(bytes);
      if (v.size() != als.k) {
        throw ValidationError("stored vector for " + id + " has dimension " +
                              std::to_string(v.size()) + ", configured k is " +
                              std::to_string(als.k));
      }
      into.emplace(id, std::move(v));
    }
  };
  load_vectors(Namespace::UserVec, state.users);
  load_vectors(Namespace::ItemVec, state.items);
  // A crash between record writes can leave a rating without its vector.
  for (const auto& [user, items] : state.ratings) {
    if (!state.users.contains(user)) {
      state.users.emplace(user, initial_vector(EntitySide::User, user, als));
    }
    for (const auto& item : items) {
      if (!state.items.contains(item)) {
        state.items.emplace(item, initial_vector(EntitySide::Item, item, als));
      }
      ++state.popularity[item];
    }
  }

  for (const auto& [id, bytes] : store_->scan(Namespace::Article)) {
    const auto j = json::parse(bytes);
    ArticleDocument doc{id, j.value("section", ""), j.value("author", ""), j.value("title", ""),
                        j.value("body", "")};
    articles_[id] = {extract_features(doc, config_.ranker), j.value("ingested_at", std::int64_t{0})};
  }

  // Replaying the whole event log rebuilds the dwell aggregates. Actions
  // already present in the ratings are trained; the rest are queued.
  std::uint64_t events = 0;
  for (const auto& [key, line] : store_->scan(Namespace::Events)) {
    const auto event = parse_event_line(line);
    last_timestamp_[event.user_id] = event.timestamp;
    for (auto& [user, item] : aggregator_.add(event)) {
      auto it = state.ratings.find(user);
      if (it == state.ratings.end() || !it->second.contains(item)) {
        pending_.push_back({user, item});
      }
    }
    next_event_sequence_ = std::max<std::uint64_t>(next_event_sequence_, std::stoull(key) + 1);
    ++events;
  }
  events_ingested_ = events;
  events_trained_ = events;

  std::uint64_t next_batch = 0;
  if (auto checkpoints = store_->scan(Namespace::Checkpoint); !checkpoints.empty()) {
    next_batch = std::stoull(checkpoints.back().first) + 1;
  }
  trainer_ = std::make_unique<IncrementalTrainer>(config_.trainer, std::move(state), next_batch);
  trainer_->set_commit_sink([this](const BatchCommit& commit) { persist_commit(commit); });
}

std::uint64_t Engine::ingest_event(const InteractionEvent& event) {
  Stopwatch watch(latency_, "events");
  validate(event);
  std::uint64_t seq = 0;
  {
    std::lock_guard lock(ingest_mutex_);
    if (auto it = last_timestamp_.find(event.user_id);
        it != last_timestamp_.end() && event.timestamp < it->second) {
      throw OrderingError("timestamp precedes the previous event of user " + event.user_id);
    }
    if (queue_.size() >= config_.queue_capacity) {
      throw QueueFullError("ingest queue is full; retry later");
    }
    seq = next_event_sequence_;
    store_->put(Namespace::Events, codec::sequence_key(seq), format_event_line(event));
    ++next_event_sequence_;
    last_timestamp_[event.user_id] = event.timestamp;
    queue_.push_back(event);
    events_ingested_.fetch_add(1);
  }
  ingest_cv_.notify_all();
  return seq;
}

void Engine::ingest_article(const ArticleDocument& doc) {
  Stopwatch watch(latency_, "articles");
  if (doc.item_id.empty()) throw ValidationError("article without item_id");
  if (doc.item_id.find_first_of("\t\r\n") != std::string::npos) {
    throw ValidationError("item_id must not contain tab or newline characters");
  }
  const auto now = wall_seconds();
  auto features = extract_features(doc, config_.ranker);
  store_->put(Namespace::Article, doc.item_id, article_json(doc, now).dump());
  {
    std::unique_lock lock(articles_mutex_);
    articles_[doc.item_id] = {std::move(features), now};
  }
  top_cache_.clear();
  item_matrix_cache_.clear();
}

void Engine::flush() {
  std::unique_lock lock(ingest_mutex_);
  const auto target = ++flush_requested_;
  ingest_cv_.notify_all();
  flushed_cv_.wait(lock, [&] { return flush_completed_ >= target; });
}

void Engine::trainer_loop(std::stop_token stop) {
  auto last_flush = Clock::now();
  std::uint64_t consumed = 0;
  const auto interval = std::chrono::duration_cast<Clock::duration>(seconds(config_.flush_interval_seconds));
  while (!stop.stop_requested()) {
    std::deque<InteractionEvent> events;
    std::uint64_t flush_target = 0;
    {
      std::unique_lock lock(ingest_mutex_);
      ingest_cv_.wait_until(lock, stop, last_flush + interval, [&] {
        return !queue_.empty() || flush_requested_ > flush_completed_;
      });
      if (stop.stop_requested()) break;
      events.swap(queue_);
      flush_target = flush_requested_;
    }
    for (const auto& event : events) {
      try {
        for (auto& [user, item] : aggregator_.add(event)) pending_.push_back({user, item});
      } catch (const Error& e) {
        std::cerr << "rtrec: dropping event during training: " << e.what() << '\n';
      }
    }
    consumed += events.size();

    const bool due = Clock::now() - last_flush >= interval || flush_target > flush_completed_;
    std::vector<SignificantAction> batch;
    if (pending_.size() >= config_.trainer.batch_size || (due && !pending_.empty())) {
      const auto take = due ? pending_.size()
                            : pending_.size() - pending_.size() % config_.trainer.batch_size;
      batch.assign(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(take));
      pending_.erase(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(take));
    }
    if (!batch.empty()) train_pending(std::move(batch));
    if (pending_.empty()) {
      events_trained_.fetch_add(consumed);
      consumed = 0;
    }
    if (due) last_flush = Clock::now();
    if (flush_target > 0) {
      std::lock_guard lock(ingest_mutex_);
      flush_completed_ = std::max(flush_completed_, flush_target);
    }
    flushed_cv_.notify_all();
  }
  std::lock_guard lock(ingest_mutex_);
  flush_completed_ = flush_requested_;
  flushed_cv_.notify_all();
}

void Engine::train_pending(std::vector<SignificantAction> actions) {
  std::set<std::string> users;
  for (const auto& a : actions) users.insert(a.user_id);
  const auto b = config_.trainer.batch_size;
  for (std::size_t begin = 0; begin < actions.size(); begin += b) {
    const auto end = std::min(actions.size(), begin + b);
    trainer_->submit({actions.begin() + static_cast<std::ptrdiff_t>(begin),
                      actions.begin() + static_cast<std::ptrdiff_t>(end)});
  }
  try {
    trainer_->drain();
  } catch (const StreamError& e) {
    std::cerr << "rtrec: training failed, replay batch " << e.batch_sequence() << ": " << e.what()
              << '\n';
  }
  if (config_.train_content) train_content_models(users);
}

void Engine::persist_commit(const BatchCommit& commit) {
  std::vector<Store::Write> writes;
  writes.reserve(commit.user_vectors.size() + commit.item_vectors.size() + commit.ratings.size() +
                 commit.popularity.size() + 1);
  for (const auto& [id, v] : commit.user_vectors) {
    writes.push_back({Namespace::UserVec, id, codec::encode_vector(v)});
  }
  for (const auto& [id, v] : commit.item_vectors) {
    writes.push_back({Namespace::ItemVec, id, codec::encode_vector(v)});
  }
  for (const auto& [id, items] : commit.ratings) {
    writes.push_back({Namespace::Ratings, id, codec::encode_ratings(items)});
  }
  for (const auto& [id, count] : commit.popularity) {
    writes.push_back({Namespace::Popularity, id, codec::encode_count(count)});
  }
  writes.push_back({Namespace::Checkpoint, codec::sequence_key(commit.sequence),
                    codec::encode_count(commit.actions)});
  store_->put_batch(writes);
  batches_trained_.fetch_add(1);
}

void Engine::train_content_models(const std::set<std::string>& users) {
  std::map<std::string, FeatureVector> articles;
  std::set<std::string> corpus;
  {
    std::shared_lock lock(articles_mutex_);
    for (const auto& [id, entry] : articles_) {
      articles.emplace(id, entry.features);
      corpus.insert(id);
    }
  }
  if (corpus.empty()) return;
  for (const auto& user : users) {
    const auto rated = seen_items(user);
    std::vector<FeatureVector> positives, negatives;
    std::set<std::string> known;
    for (const auto& item : rated) {
      if (auto it = articles.find(item); it != articles.end()) {
        positives.push_back(it->second);
        known.insert(item);
      }
    }
    if (positives.empty()) continue;
    Rng rng(derive_seed(config_.trainer.als.seed, "negatives:" + user + ":" +
                                                      std::to_string(rated.size())));
    for (const auto& item : sample_negatives(known, corpus, config_.ranker.negative_ratio, rng)) {
      if (!rated.contains(item)) negatives.push_back(articles.at(item));
    }
    if (negatives.empty()) continue;
    try {
      auto model = train_user_model(positives, negatives, config_.ranker);
      model.owner = user;
      store_->put(Namespace::ContentModel, user, codec::encode_content_model(model));
      content_model_cache_.erase(user);
    } catch (const Error& e) {
      std::cerr << "rtrec: content model for " << user << " not updated: " << e.what() << '\n';
    }
  }
}

std::set<std::string> Engine::seen_items(const std::string& user) const {
  return trainer_->read([&](const ModelState& state) {
    auto it = state.ratings.find(user);
    return it == state.ratings.end() ? std::set<std::string>{} : it->second;
  });
}

std::set<std::string> Engine::candidate_articles(std::optional<double> window) const {
  std::set<std::string> out;
  const auto now = wall_seconds();
  std::shared_lock lock(articles_mutex_);
  for (const auto& [id, entry] : articles_) {
    if (!window || static_cast<double>(now - entry.ingested_at) <= *window) out.insert(id);
  }
  return out;
}

RecommendationList Engine::top_items(const std::set<std::string>& exclude, std::size_t n,
                                     std::optional<double> window) {
  std::shared_ptr<const RecommendationList> ranking;
  if (auto cached = top_cache_.get(0)) {
    ranking = *cached;
  } else {
    std::map<std::string, double> score;
    for (const auto& [item, bytes] : store_->scan(Namespace::Popularity)) {
      score[item] = static_cast<double>(codec::decode_count(bytes));
    }
    for (const auto& item : candidate_articles(std::nullopt)) score.try_emplace(item, 0.0);
    auto list = std::make_shared<RecommendationList>();
    for (const auto& [item, s] : score) list->push_back({item, s});
    std::stable_sort(list->begin(), list->end(),
                     [](const ScoredItem& a, const ScoredItem& b) { return a.score > b.score; });
    ranking = list;
    top_cache_.put(0, ranking);
  }
  std::optional<std::set<std::string>> allowed;
  if (window) allowed = candidate_articles(window);
  RecommendationList out;
  for (const auto& entry : *ranking) {
    if (out.size() >= n) break;
    if (exclude.contains(entry.item_id)) continue;
    if (allowed && !allowed->contains(entry.item_id)) continue;
    out.push_back(entry);
  }
  return out;
}

std::optional<RecommendationList> Engine::collab_items(const std::string& user,
                                                       const std::set<std::string>& exclude,
                                                       std::size_t n,
                                                       std::optional<double> window) {
  std::shared_ptr<const Eigen::VectorXd> vector;
  if (auto cached = user_vector_cache_.get(user)) {
    vector = *cached;
  } else {
    auto bytes = store_->get(Namespace::UserVec, user);
    if (!bytes) return std::nullopt;
    vector = std::make_shared<const Eigen::VectorXd>(codec::decode_vector(*bytes));
    user_vector_cache_.put(user, vector);
  }

  std::shared_ptr<const ItemMatrix> matrix;
  if (auto cached = item_matrix_cache_.get(0)) {
    matrix = *cached;
  } else {
    auto fresh = std::make_shared<ItemMatrix>();
    trainer_->read([&](const ModelState& state) {
      fresh->ids.reserve(state.items.size());
      fresh->Y.resize(static_cast<Eigen::Index>(state.items.size()), config_.trainer.als.k);
      Eigen::Index row = 0;
      for (const auto& [id, v] : state.items) {
        fresh->ids.push_back(id);
        fresh->Y.row(row++) = v.transpose();
      }
    });
    matrix = fresh;
    item_matrix_cache_.put(0, matrix);
  }
  if (vector->size() != matrix->Y.cols()) return std::nullopt;

  std::optional<std::set<std::string>> allowed;
  if (window) allowed = candidate_articles(window);
  std::vector<std::uint8_t> mask(matrix->ids.size(), 0);
  for (std::size_t i = 0; i < matrix->ids.size(); ++i) {
    const auto& id = matrix->ids[i];
    mask[i] = exclude.contains(id) || (allowed && !allowed->contains(id));
  }
  RecommendationList out;
  for (const auto& hit : recommend_collaborative(*vector, matrix->Y, mask, n)) {
    out.push_back({matrix->ids[hit.index], hit.score});
  }
  return out;
}

std::optional<RecommendationList> Engine::content_items(const std::string& user,
                                                        const std::set<std::string>& exclude,
                                                        std::size_t n,
                                                        std::optional<double> window) {
  std::shared_ptr<const ContentModel> model;
  if (auto cached = content_model_cache_.get(user)) {
    model = *cached;
  } else {
    auto bytes = store_->get(Namespace::ContentModel, user);
    if (!bytes) return std::nullopt;
    auto decoded = codec::decode_content_model(*bytes);
    decoded.owner = user;
    model = std::make_shared<const ContentModel>(std::move(decoded));
    content_model_cache_.put(user, model);
  }
  const auto allowed = candidate_articles(window);
  std::map<std::string, FeatureVector> candidates;
  {
    std::shared_lock lock(articles_mutex_);
    for (const auto& id : allowed) {
      if (!exclude.contains(id)) candidates.emplace(id, articles_.at(id).features);
    }
  }
  const auto popularity = trainer_->read([](const ModelState& s) { return s.popularity; });
  return rank_articles(*model, candidates, popularity, exclude, n, config_.ranker.beta);
}

RecommendationResponse Engine::recommend(const RecommendationRequest& request) {
  Stopwatch all(latency_, "recommendations");
  Stopwatch per_algo(latency_, "recommendations/" + std::string(to_string(request.algorithm)));
  if (request.user_id.empty()) throw ValidationError("missing user");
  if (request.n == 0) throw ValidationError("n must be at least 1");
  if (request.candidate_window_seconds && !(*request.candidate_window_seconds >= 0.0)) {
    throw ValidationError("candidate window must be non-negative");
  }
  const auto seen = seen_items(request.user_id);
  const auto window = request.candidate_window_seconds;

  RecommendationResponse response;
  std::optional<RecommendationList> items;
  switch (request.algorithm) {
    case Algorithm::Collab:
      items = collab_items(request.user_id, seen, request.n, window);
      break;
    case Algorithm::Content:
      items = content_items(request.user_id, seen, request.n, window);
      break;
    case Algorithm::Top:
      break;
  }
  if (items) {
    response.items = std::move(*items);
    response.served_by = request.algorithm;
  } else {
    response.items = top_items(seen, request.n, window);
    response.served_by = Algorithm::Top;
    response.fallback = request.algorithm != Algorithm::Top;
  }
  return response;
}

void Engine::record_latency(const std::string& endpoint, double seconds) {
  latency_.record(endpoint, seconds);
}

MetricsSnapshot Engine::metrics() const {
  MetricsSnapshot m;
  m.endpoints = latency_.summarize();
  m.cache_hits = user_vector_cache_.hits() + content_model_cache_.hits() +
                 item_matrix_cache_.hits() + top_cache_.hits();
  m.cache_misses = user_vector_cache_.misses() + content_model_cache_.misses() +
                   item_matrix_cache_.misses() + top_cache_.misses();
  const auto lookups = m.cache_hits + m.cache_misses;
  m.cache_hit_ratio = lookups ? static_cast<double>(m.cache_hits) / static_cast<double>(lookups) : 0.0;
  m.events_ingested = events_ingested_.load();
  m.events_trained = events_trained_.load();
  m.trainer_lag = m.events_ingested - std::min(m.events_ingested, m.events_trained);
  m.batches_trained = batches_trained_.load();
  return m;
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

InteractionEvent event_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("event must be an object");
  auto text = [&](const char* field) {
    if (!j.contains(field) || !j[field].is_string()) {
      throw ValidationError(std::string("missing string field '") + field + "'");
    }
    return j[field].get<std::string>();
  };
  InteractionEvent e;
  e.user_id = text("user_id");
  e.item_id = text("item_id");
  const auto kind = parse_event_kind(text("kind"));
  if (!kind) throw ValidationError("kind must be one of click, share, comment");
  e.kind = *kind;
  if (!j.contains("timestamp") || !j["timestamp"].is_number_integer()) {
    throw ValidationError("missing integer field 'timestamp'");
  }
  e.timestamp = j["timestamp"].get<std::int64_t>();
  validate(e);
  return e;
}

ArticleDocument article_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("article must be an object");
  auto text = [&](const char* field) -> std::string {
    if (!j.contains(field)) return {};
    if (!j[field].is_string()) throw ValidationError(std::string("field '") + field + "' must be a string");
    return j[field].get<std::string>();
  };
  ArticleDocument doc{text("item_id"), text("section"), text("author"), text("title"), text("body")};
  if (doc.item_id.empty()) throw ValidationError("missing item_id");
  return doc;
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& message) {
  reply(res, status, json{{"error", message}});
}

}  // namespace

struct HttpServer::Impl {
  explicit Impl(Engine& e) : engine(e) {}

  Engine& engine;
  httplib::Server server;
  std::thread thread;

  void install() {
    server.Post("/events", [this](const httplib::Request& req, httplib::Response& res) {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception& e) {
        return reply_error(res, 400, std::string("malformed JSON: ") + e.what());
      }
      std::vector<InteractionEvent> events;
      try {
        if (body.is_array()) {
          for (const auto& item : body) events.push_back(event_from_json(item));
        } else {
          events.push_back(event_from_json(body));
        }
      } catch (const ValidationError& e) {
        return reply_error(res, 400, e.what());
      }
      json acks = json::array();
      try {
        for (const auto& event : events) acks.push_back(engine.ingest_event(event));
      } catch (const QueueFullError& e) {
        res.set_header("Retry-After", "1");
        return reply(res, 503, json{{"error", e.what()}, {"acks", acks}});
      } catch (const OrderingError& e) {
        return reply(res, 409, json{{"error", e.what()}, {"acks", acks}});
      } catch (const ValidationError& e) {
        return reply(res, 400, json{{"error", e.what()}, {"acks", acks}});
      } catch (const StoreError& e) {
        return reply(res, 500, json{{"error", e.what()}, {"acks", acks}});
      }
      reply(res, 200, json{{"acks", acks}});
    });

    server.Post("/articles", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        const auto doc = article_from_json(json::parse(req.body));
        engine.ingest_article(doc);
        reply(res, 200, json{{"item_id", doc.item_id}});
      } catch (const json::exception& e) {
        reply_error(res, 400, std::string("malformed JSON: ") + e.what());
      } catch (const ValidationError& e) {
        reply_error(res, 400, e.what());
      } catch (const StoreError& e) {
        reply_error(res, 500, e.what());
      }
    });

    server.Get("/recommendations", [this](const httplib::Request& req, httplib::Response& res) {
      RecommendationRequest request;
      request.user_id = req.get_param_value("user");
      if (request.user_id.empty()) return reply_error(res, 400, "missing user parameter");
      try {
        if (req.has_param("n")) {
          const long long n = std::stoll(req.get_param_value("n"));
          if (n < 1) return reply_error(res, 400, "n must be at least 1");
          request.n = static_cast<std::size_t>(n);
        }
        if (req.has_param("window")) request.candidate_window_seconds = std::stod(req.get_param_value("window"));
      } catch (const std::logic_error&) {
        return reply_error(res, 400, "n and window must be numbers");
      }
      const auto algo = parse_algorithm(req.has_param("algo") ? req.get_param_value("algo") : "collab");
      if (!algo) return reply_error(res, 400, "algo must be one of collab, content, top");
      request.algorithm = *algo;
      try {
        const auto response = engine.recommend(request);
        json items = json::array();
        for (const auto& item : response.items) {
          items.push_back({{"item_id", item.item_id}, {"score", item.score}});
        }
        reply(res, 200,
              json{{"user", request.user_id},
                   {"algo", to_string(request.algorithm)},
                   {"served_by", to_string(response.served_by)},
                   {"fallback", response.fallback},
                   {"items", items}});
      } catch (const ValidationError& e) {
        reply_error(res, 400, e.what());
      } catch (const Error& e) {
        reply_error(res, 500, e.what());
      }
    });

    server.Get("/metrics", [this](const httplib::Request&, httplib::Response& res) {
      const auto start = Clock::now();
      const auto m = engine.metrics();
      json endpoints = json::object();
      for (const auto& [name, s] : m.endpoints) {
        endpoints[name] = {{"count", s.count}, {"p50_ms", s.p50_ms}, {"p95_ms", s.p95_ms}, {"p99_ms", s.p99_ms}};
      }
      reply(res, 200,
            json{{"endpoints", endpoints},
                 {"cache_hits", m.cache_hits},
                 {"cache_misses", m.cache_misses},
                 {"cache_hit_ratio", m.cache_hit_ratio},
                 {"events_ingested", m.events_ingested},
                 {"events_trained", m.events_trained},
                 {"trainer_lag", m.trainer_lag},
                 {"batches_trained", m.batches_trained}});
      engine.record_latency("metrics", std::chrono::duration<double>(Clock::now() - start).count());
    });
  }
};

HttpServer::HttpServer(Engine& engine) : impl_(std::make_unique<Impl>(engine)) { impl_->install(); }

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void HttpServer::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

void HttpServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace rtrec
