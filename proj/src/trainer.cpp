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

#include "rtrec/trainer.hpp"

#include <algorithm>
#include <utility>

#include "rtrec/error.hpp"

namespace rtrec {

void TrainerConfig::validate() const {
  if (batch_size < 1) throw ValidationError("batch size must be at least 1");
  if (min_batch_users < 1) throw ValidationError("min_batch_users must be at least 1");
  if (parallelism < 1) throw ValidationError("parallelism must be at least 1");
  als.validate();
}

Eigen::VectorXd initial_vector(EntitySide side, const std::string& id, const AlsParams& params) {
  const std::string tag = (side == EntitySide::User ? "user:" : "item:") + id;
  Rng rng(derive_seed(params.seed, tag));
  Eigen::VectorXd v(params.k);
  for (int j = 0; j < params.k; ++j) v[j] = params.init_scale * uniform01(rng);
  return v;
}

FactorMatrices initial_factors(std::span<const std::string> user_ids,
                               std::span<const std::string> item_ids, const AlsParams& params) {
  FactorMatrices F{Eigen::MatrixXd(static_cast<Eigen::Index>(user_ids.size()), params.k),
                   Eigen::MatrixXd(static_cast<Eigen::Index>(item_ids.size()), params.k)};
  for (std::size_t u = 0; u < user_ids.size(); ++u) {
    F.X.row(static_cast<Eigen::Index>(u)) = initial_vector(EntitySide::User, user_ids[u], params);
  }
  for (std::size_t i = 0; i < item_ids.size(); ++i) {
    F.Y.row(static_cast<Eigen::Index>(i)) = initial_vector(EntitySide::Item, item_ids[i], params);
  }
  return F;
}

std::set<std::string> pad_batch(const std::set<std::string>& batch_users, const ModelState& state,
                                const TrainerConfig& cfg, Rng& rng) {
  if (batch_users.size() >= cfg.min_batch_users) return batch_users;
  std::vector<const std::string*> pool;
  for (const auto& [user, items] : state.ratings) {
    if (!items.empty() && !batch_users.contains(user)) pool.push_back(&user);
  }
  const std::size_t want = std::min(cfg.min_batch_users - batch_users.size(), pool.size());
  std::set<std::string> out = batch_users;
  // Partial Fisher-Yates: the first `want` slots become a uniform sample.
  for (std::size_t j = 0; j < want; ++j) {
    const std::size_t pick = j + uniform_index(rng, pool.size() - j);
    std::swap(pool[j], pool[pick]);
    out.insert(*pool[j]);
  }
  return out;
}

std::optional<BatchProblem> prepare_batch(std::span<const SignificantAction> batch,
                                          const ModelState& state, const TrainerConfig& cfg,
                                          std::uint64_t sequence) {
  if (batch.empty()) return std::nullopt;
  const auto& als = cfg.als;

  // Histories as committed, plus this batch. Batches still in flight are
  // invisible here.
  std::map<std::string, std::set<std::string>> merged;
  std::set<std::string> batch_users, batch_items;
  for (const auto& action : batch) {
    if (action.user_id.empty() || action.item_id.empty()) {
      throw ValidationError("significant action with empty id");
    }
    batch_users.insert(action.user_id);
    batch_items.insert(action.item_id);
    auto [it, fresh] = merged.try_emplace(action.user_id);
    if (fresh) {
      if (auto known = state.ratings.find(action.user_id); known != state.ratings.end()) {
        it->second = known->second;
      }
    }
    it->second.insert(action.item_id);
  }

  Rng rng(derive_seed(als.seed, "pad:" + std::to_string(sequence)));
  const auto rows = pad_batch(batch_users, state, cfg, rng);
  auto history = [&](const std::string& user) -> const std::set<std::string>& {
    if (auto it = merged.find(user); it != merged.end()) return it->second;
    return state.ratings.at(user);
  };

  std::set<std::string> cols;
  for (const auto& user : rows) {
    const auto& rated = history(user);
    cols.insert(rated.begin(), rated.end());
  }

  BatchProblem problem;
  problem.sequence = sequence;
  problem.actions.assign(batch.begin(), batch.end());
  problem.user_ids.assign(rows.begin(), rows.end());
  problem.item_ids.assign(cols.begin(), cols.end());
  problem.batch_users.assign(batch_users.begin(), batch_users.end());
  problem.batch_items.assign(batch_items.begin(), batch_items.end());

  std::map<std::string_view, std::size_t> col_index;
  for (std::size_t i = 0; i < problem.item_ids.size(); ++i) col_index.emplace(problem.item_ids[i], i);

  auto vector_of = [&](const std::map<std::string, Eigen::VectorXd>& known, EntitySide side,
                       const std::string& id) {
    auto it = known.find(id);
    return it != known.end() ? it->second : initial_vector(side, id, als);
  };
  problem.ratings.rows = problem.user_ids.size();
  problem.ratings.cols = problem.item_ids.size();
  problem.factors.X.resize(static_cast<Eigen::Index>(problem.user_ids.size()), als.k);
  problem.factors.Y.resize(static_cast<Eigen::Index>(problem.item_ids.size()), als.k);
  for (std::size_t u = 0; u < problem.user_ids.size(); ++u) {
    const auto& user = problem.user_ids[u];
    for (const auto& item : history(user)) {
      problem.ratings.entries.push_back({u, col_index.at(item), 1.0});
    }
    problem.factors.X.row(static_cast<Eigen::Index>(u)) =
        vector_of(state.users, EntitySide::User, user).transpose();
  }
  for (std::size_t i = 0; i < problem.item_ids.size(); ++i) {
    problem.factors.Y.row(static_cast<Eigen::Index>(i)) =
        vector_of(state.items, EntitySide::Item, problem.item_ids[i]).transpose();
  }
  return problem;
}

void commit_batch(const BatchProblem& problem, const FactorMatrices& solved, ModelState& state) {
  for (const auto& action : problem.actions) {
    if (state.ratings[action.user_id].insert(action.item_id).second) {
      ++state.popularity[action.item_id];
    }
  }
  for (std::size_t u = 0; u < problem.user_ids.size(); ++u) {
    state.users[problem.user_ids[u]] = solved.X.row(static_cast<Eigen::Index>(u)).transpose();
  }
  for (std::size_t i = 0; i < problem.item_ids.size(); ++i) {
    state.items[problem.item_ids[i]] = solved.Y.row(static_cast<Eigen::Index>(i)).transpose();
  }
}

void process_batch(std::span<const SignificantAction> batch, ModelState& state,
                   const TrainerConfig& cfg, std::uint64_t sequence) {
  cfg.validate();
  auto problem = prepare_batch(batch, state, cfg, sequence);
  if (!problem) return;
  const auto solved = latent_factor_update(problem->ratings, problem->factors, cfg.als);
  commit_batch(*problem, solved, state);
}

IncrementalTrainer::IncrementalTrainer(TrainerConfig cfg, ModelState state,
                                       std::uint64_t first_sequence)
    : cfg_(std::move(cfg)),
      state_(std::move(state)),
      wave_base_(first_sequence),
      next_sequence_(first_sequence),
      next_commit_(first_sequence) {
  cfg_.validate();
  workers_.reserve(cfg_.parallelism);
  for (unsigned t = 0; t < cfg_.parallelism; ++t) workers_.emplace_back([this] { worker_loop(); });
}

IncrementalTrainer::~IncrementalTrainer() {
  {
    std::lock_guard lock(queue_mutex_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  workers_.clear();
}

void IncrementalTrainer::set_commit_sink(CommitSink sink) {
  std::lock_guard lock(queue_mutex_);
  sink_ = std::move(sink);
}

std::optional<std::uint64_t> IncrementalTrainer::submit(std::vector<SignificantAction> batch) {
  if (batch.empty()) return std::nullopt;
  std::unique_lock lock(queue_mutex_);
  idle_cv_.wait(lock, [&] { return queue_.size() < cfg_.parallelism || stopping_; });
  if (stopping_) throw Error("trainer is shutting down");
  const auto seq = next_sequence_++;
  queue_.push_back({seq, std::move(batch)});
  lock.unlock();
  queue_cv_.notify_one();
  return seq;
}

void IncrementalTrainer::drain() {
  std::unique_lock lock(queue_mutex_);
  sealed_ = true;
  idle_cv_.notify_all();
  idle_cv_.wait(lock, [&] { return queue_.empty() && running_ == 0; });
  sealed_ = false;
  wave_base_ = next_sequence_;
  if (failure_) {
    auto failure = std::move(*failure_);
    failure_.reset();
    throw StreamError(failure.first, failure.second);
  }
}

ModelState IncrementalTrainer::snapshot() const {
  std::shared_lock lock(state_mutex_);
  return state_;
}

ModelState IncrementalTrainer::take_state() {
  drain();
  std::unique_lock lock(state_mutex_);
  return std::move(state_);
}

std::size_t IncrementalTrainer::actions_applied() const {
  std::lock_guard lock(queue_mutex_);
  return actions_applied_;
}

void IncrementalTrainer::worker_loop() {
  while (true) {
    Job job;
    {
      std::unique_lock lock(queue_mutex_);
      queue_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;
      job = std::move(queue_.front());
      queue_.pop_front();
      ++running_;
    }
    idle_cv_.notify_all();
    run_job(job);
    {
      std::lock_guard lock(queue_mutex_);
      --running_;
    }
    idle_cv_.notify_all();
  }
}

std::uint64_t IncrementalTrainer::wave_start(std::uint64_t sequence) const noexcept {
  return sequence - (sequence - wave_base_) % cfg_.parallelism;
}

bool IncrementalTrainer::wave_prepared(std::uint64_t sequence) const {
  const auto begin = wave_start(sequence);
  auto end = begin + cfg_.parallelism;
  if (sealed_ || stopping_) end = std::min(end, next_sequence_);
  const auto have = std::distance(prepared_.lower_bound(begin), prepared_.lower_bound(end));
  return static_cast<std::uint64_t>(have) >= end - begin;
}

// Batches run in waves of `parallelism` consecutive sequences. A wave reads
// the state left by the previous waves, and its members commit in sequence
// order once all of them have their snapshot, so results do not depend on
// thread timing. A short final wave commits only once drain() seals it.
void IncrementalTrainer::run_job(const Job& job) {
  CommitSink sink;
  {
    std::unique_lock lock(queue_mutex_);
    sink = sink_;
    idle_cv_.wait(lock, [&] { return next_commit_ >= wave_start(job.sequence); });
  }

  std::string error;
  std::optional<BatchProblem> problem;
  try {
    std::shared_lock lock(state_mutex_);
    problem = prepare_batch(job.actions, state_, cfg_, job.sequence);
  } catch (const std::exception& e) {
    error = e.what();
  }
  {
    std::lock_guard lock(queue_mutex_);
    prepared_.insert(job.sequence);
  }
  idle_cv_.notify_all();

  std::optional<FactorMatrices> solved;
  if (problem) {
    try {
      solved = latent_factor_update(problem->ratings, problem->factors, cfg_.als);
    } catch (const std::exception& e) {
      error = e.what();
    }
  }

  {
    std::unique_lock lock(queue_mutex_);
    idle_cv_.wait(lock, [&] { return next_commit_ == job.sequence && wave_prepared(job.sequence); });
  }
  if (solved) {
    BatchCommit commit;
    {
      std::unique_lock lock(state_mutex_);
      commit_batch(*problem, *solved, state_);
      if (sink) {
        commit.sequence = problem->sequence;
        commit.actions = problem->actions.size();
        for (const auto& user : problem->user_ids) {
          commit.user_vectors.emplace_back(user, state_.users.at(user));
        }
        for (const auto& item : problem->item_ids) {
          commit.item_vectors.emplace_back(item, state_.items.at(item));
        }
        for (const auto& user : problem->batch_users) {
          const auto& rated = state_.ratings.at(user);
          commit.ratings.emplace_back(user, std::vector<std::string>(rated.begin(), rated.end()));
        }
        for (const auto& item : problem->batch_items) {
          commit.popularity.emplace_back(item, state_.popularity.at(item));
        }
      }
    }
    if (sink) {
      try {
        sink(commit);
      } catch (const std::exception& e) {
        error = e.what();
      }
    }
  }
  {
    std::lock_guard lock(queue_mutex_);
    if (error.empty()) {
      actions_applied_ += job.actions.size();
    } else if (!failure_ || job.sequence < failure_->first) {
      failure_ = std::make_pair(job.sequence, error);
    }
    ++next_commit_;
    prepared_.erase(prepared_.begin(), prepared_.lower_bound(wave_start(job.sequence)));
  }
  idle_cv_.notify_all();
}

void run_stream(std::span<const SignificantAction> actions, ModelState& state,
                const TrainerConfig& cfg, const CommitSink& sink, std::uint64_t first_sequence) {
  cfg.validate();
  IncrementalTrainer trainer(cfg, std::move(state), first_sequence);
  if (sink) trainer.set_commit_sink(sink);
  for (std::size_t begin = 0; begin < actions.size(); begin += cfg.batch_size) {
    const auto count = std::min(cfg.batch_size, actions.size() - begin);
    const auto chunk = actions.subspan(begin, count);
    trainer.submit({chunk.begin(), chunk.end()});
  }
  try {
    trainer.drain();
  } catch (...) {
    state = trainer.take_state();
    throw;
  }
  state = trainer.take_state();
}

}  // namespace rtrec
