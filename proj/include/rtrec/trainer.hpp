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

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "rtrec/als.hpp"
#include "rtrec/random.hpp"

namespace rtrec {

/// Everything the incremental trainer keeps between batches.
///
/// Invariants: every key of `ratings` has a user vector, every rated item
/// has an item vector, and popularity[i] is the number of users whose
/// rating set holds i.
struct ModelState {
  std::map<std::string, Eigen::VectorXd> users;
  std::map<std::string, Eigen::VectorXd> items;
  std::map<std::string, std::set<std::string>> ratings;
  std::map<std::string, std::size_t> popularity;
};

struct TrainerConfig {
  std::size_t batch_size = 10000;  // significant actions per batch
  std::size_t min_batch_users = 100;
  unsigned parallelism = 1;  // batches in flight
  AlsParams als;

  void validate() const;
};

struct SignificantAction {
  std::string user_id;
  std::string item_id;

  friend bool operator==(const SignificantAction&, const SignificantAction&) = default;
};

enum class EntitySide { User, Item };

/// Deterministic starting vector for an entity: uniform in [0, init_scale)
/// from a stream keyed by (seed, side, id), so the same entity starts from
/// the same point no matter which batch first sees it.
Eigen::VectorXd initial_vector(EntitySide side, const std::string& id, const AlsParams& params);

/// initial_vector() for each id, stacked in the given order.
FactorMatrices initial_factors(std::span<const std::string> user_ids,
                               std::span<const std::string> item_ids, const AlsParams& params);

/// Tops the batch up to `min_batch_users` with a uniform sample (without
/// replacement) of other known users that have ratings.
std::set<std::string> pad_batch(const std::set<std::string>& batch_users, const ModelState& state,
                                const TrainerConfig& cfg, Rng& rng);

/// The sub-problem for one batch: rows are the padded batch users, columns
/// the union of their full rating histories, both in key order.
struct BatchProblem {
  std::uint64_t sequence = 0;
  std::vector<SignificantAction> actions;
  std::vector<std::string> user_ids;
  std::vector<std::string> item_ids;
  std::vector<std::string> batch_users;  // unpadded, sorted
  std::vector<std::string> batch_items;  // sorted
  SparseRatings ratings;
  FactorMatrices factors;
};

/// Snapshots the sub-problem: padded batch users with their committed
/// histories plus the batch, and every item those histories touch. Unseen
/// entities start from initial_vector. `state` is not modified. Returns
/// nullopt for an empty batch.
std::optional<BatchProblem> prepare_batch(std::span<const SignificantAction> batch,
                                          const ModelState& state, const TrainerConfig& cfg,
                                          std::uint64_t sequence);

/// Merges the batch into the rating sets and popularity counts (new pairs
/// only) and writes the solved vectors back, last writer wins.
void commit_batch(const BatchProblem& problem, const FactorMatrices& solved, ModelState& state);

/// prepare_batch, latent_factor_update, commit_batch.
void process_batch(std::span<const SignificantAction> batch, ModelState& state,
                   const TrainerConfig& cfg, std::uint64_t sequence = 0);

/// What a committed batch changed, for persistence.
struct BatchCommit {
  std::uint64_t sequence = 0;
  std::size_t actions = 0;
  std::vector<std::pair<std::string, Eigen::VectorXd>> user_vectors;
  std::vector<std::pair<std::string, Eigen::VectorXd>> item_vectors;
  std::vector<std::pair<std::string, std::vector<std::string>>> ratings;
  std::vector<std::pair<std::string, std::size_t>> popularity;
};

using CommitSink = std::function<void(const BatchCommit&)>;

/// Applies batches on up to `parallelism` worker threads. Consecutive groups
/// of `parallelism` batches solve concurrently against the state committed
/// before the group started, then write back in sequence order, so the
/// later batch wins on shared entities. With parallelism 1 batches apply
/// strictly one after another.
class IncrementalTrainer {
 public:
  explicit IncrementalTrainer(TrainerConfig cfg, ModelState state = {},
                              std::uint64_t first_sequence = 0);
  ~IncrementalTrainer();

  IncrementalTrainer(const IncrementalTrainer&) = delete;
  IncrementalTrainer& operator=(const IncrementalTrainer&) = delete;

  /// Called on a worker thread after each commit, outside the state lock.
  /// An exception thrown here fails that batch.
  void set_commit_sink(CommitSink sink);

  /// Queues a batch and returns its sequence number. Blocks while the
  /// queue is full. Empty batches are skipped and return nullopt.
  std::optional<std::uint64_t> submit(std::vector<SignificantAction> batch);

  /// Waits for every submitted batch, letting a short final wave commit.
  /// Rethrows the first failure as a StreamError naming the batch.
  void drain();

  /// Runs `fn(const ModelState&)` under a shared lock.
  template <typename Fn>
  decltype(auto) read(Fn&& fn) const {
    std::shared_lock lock(state_mutex_);
    return fn(static_cast<const ModelState&>(state_));
  }

  ModelState snapshot() const;
  /// Drains, then moves the state out. The trainer must not be used again.
  ModelState take_state();
  const TrainerConfig& config() const noexcept { return cfg_; }
  std::size_t actions_applied() const;

 private:
  struct Job {
    std::uint64_t sequence;
    std::vector<SignificantAction> actions;
  };

  void worker_loop();
  void run_job(const Job& job);
  std::uint64_t wave_start(std::uint64_t sequence) const noexcept;
  bool wave_prepared(std::uint64_t sequence) const;

  TrainerConfig cfg_;
  mutable std::shared_mutex state_mutex_;
  ModelState state_;

  mutable std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::condition_variable idle_cv_;
  std::deque<Job> queue_;
  std::size_t running_ = 0;
  std::uint64_t wave_base_;  // waves are counted from here
  std::uint64_t next_sequence_;
  std::uint64_t next_commit_;
  std::set<std::uint64_t> prepared_;
  std::size_t actions_applied_ = 0;
  bool stopping_ = false;
  bool sealed_ = false;  // drain() in progress: a short final wave may commit
  std::optional<std::pair<std::uint64_t, std::string>> failure_;
  CommitSink sink_;
  std::vector<std::jthread> workers_;
};

/// Splits `actions` into consecutive batches of `cfg.batch_size`, applies
/// them with at most `cfg.parallelism` in flight and returns once all are
/// applied.
void run_stream(std::span<const SignificantAction> actions, ModelState& state,
                const TrainerConfig& cfg, const CommitSink& sink = {},
                std::uint64_t first_sequence = 0);

}  // namespace rtrec
