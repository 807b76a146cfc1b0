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

#include "rtrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "rtrec/als.hpp"
#include "rtrec/error.hpp"
#include "rtrec/random.hpp"

namespace rtrec {

Dataset Dataset::from_aggregates(const AggregateMap& aggregates, const SignificanceRule& rule) {
  Dataset out;
  for (const auto& [key, agg] : aggregates) {
    if (is_significant(agg, rule)) out.tuples.push_back({key.first, key.second, agg});
  }
  return out;
}

void Dataset::validate() const {
  std::set<std::pair<std::string_view, std::string_view>> seen;
  for (const auto& t : tuples) {
    if (!seen.emplace(t.user_id, t.item_id).second) {
      throw ValidationError("duplicate tuple (" + t.user_id + ", " + t.item_id + ")");
    }
  }
}

std::vector<SignificantAction> Dataset::actions() const {
  std::vector<SignificantAction> out;
  out.reserve(tuples.size());
  for (const auto& t : tuples) out.push_back({t.user_id, t.item_id});
  return out;
}

std::set<std::string> Dataset::items() const {
  std::set<std::string> out;
  for (const auto& t : tuples) out.insert(t.item_id);
  return out;
}

std::map<std::string, std::set<std::string>> Dataset::items_by_user() const {
  std::map<std::string, std::set<std::string>> out;
  for (const auto& t : tuples) out[t.user_id].insert(t.item_id);
  return out;
}

namespace {

template <typename T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = uniform_index(rng, i);
    std::swap(v[i - 1], v[j]);
  }
}

RecommendationList take_unexcluded(const RecommendationList& ranking,
                                   const std::set<std::string>& exclude, std::size_t n) {
  RecommendationList out;
  for (const auto& entry : ranking) {
    if (out.size() >= n) break;
    if (!exclude.contains(entry.item_id)) out.push_back(entry);
  }
  return out;
}

}  // namespace

std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError("train fraction must lie strictly between 0 and 1");
  }
  std::vector<std::size_t> order(data.tuples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, "split"));
  shuffle_in_place(order, rng);
  const auto n_train = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(data.tuples.size())));
  Dataset train, test;
  train.tuples.reserve(n_train);
  test.tuples.reserve(order.size() - n_train);
  for (std::size_t j = 0; j < order.size(); ++j) {
    (j < n_train ? train : test).tuples.push_back(data.tuples[order[j]]);
  }
  return {std::move(train), std::move(test)};
}

RecommendationList global_top(const Dataset& train, std::size_t n) {
  std::map<std::string, std::set<std::string_view>> users_of;
  for (const auto& t : train.tuples) users_of[t.item_id].insert(t.user_id);
  RecommendationList ranking;
  for (const auto& [item, users] : users_of) {
    ranking.push_back({item, static_cast<double>(users.size())});
  }
  std::stable_sort(ranking.begin(), ranking.end(),
                   [](const ScoredItem& a, const ScoredItem& b) { return a.score > b.score; });
  if (ranking.size() > n) ranking.resize(n);
  return ranking;
}

namespace {

RecommendationList shuffled_catalog(std::vector<std::string> items, std::size_t n,
                                    std::uint64_t seed) {
  Rng rng(seed);
  shuffle_in_place(items, rng);
  if (items.size() > n) items.resize(n);
  RecommendationList out;
  out.reserve(items.size());
  // Scores descend so the list reads as a ranking.
  for (std::size_t j = 0; j < items.size(); ++j) {
    out.push_back({items[j], static_cast<double>(items.size() - j)});
  }
  return out;
}

std::vector<std::string> catalog_of(const Dataset& train) {
  const auto items = train.items();
  return {items.begin(), items.end()};
}

}  // namespace

RecommendationList random_rank(const Dataset& train, std::size_t n, std::uint64_t seed) {
  return shuffled_catalog(catalog_of(train), n, seed);
}

GlobalTopRecommender::GlobalTopRecommender(const Dataset& train)
    : ranking_(global_top(train, train.size())) {}

RecommendationList GlobalTopRecommender::recommend(const std::string&,
                                                   const std::set<std::string>& exclude,
                                                   std::size_t n) const {
  return take_unexcluded(ranking_, exclude, n);
}

RandomRecommender::RandomRecommender(const Dataset& train, std::uint64_t seed)
    : catalog_(catalog_of(train)), seed_(seed) {}

RecommendationList RandomRecommender::recommend(const std::string& user,
                                                const std::set<std::string>& exclude,
                                                std::size_t n) const {
  const auto shuffled = shuffled_catalog(catalog_, catalog_.size(), derive_seed(seed_, user));
  return take_unexcluded(shuffled, exclude, n);
}

CollaborativeRecommender::CollaborativeRecommender(const ModelState& state,
                                                   const std::set<std::string>& catalog)
    : users_(state.users) {
  for (const auto& item : catalog) {
    if (state.items.contains(item)) item_ids_.push_back(item);
  }
  const Eigen::Index k = state.items.empty() ? 0 : state.items.begin()->second.size();
  Y_.resize(static_cast<Eigen::Index>(item_ids_.size()), k);
  for (std::size_t i = 0; i < item_ids_.size(); ++i) {
    Y_.row(static_cast<Eigen::Index>(i)) = state.items.at(item_ids_[i]).transpose();
  }
}

RecommendationList CollaborativeRecommender::recommend(const std::string& user,
                                                       const std::set<std::string>& exclude,
                                                       std::size_t n) const {
  auto it = users_.find(user);
  if (it == users_.end()) throw ColdUserError("no factors for user " + user);
  std::vector<std::uint8_t> mask(item_ids_.size(), 0);
  for (std::size_t i = 0; i < item_ids_.size(); ++i) mask[i] = exclude.contains(item_ids_[i]);
  RecommendationList out;
  for (const auto& hit : recommend_collaborative(it->second, Y_, mask, n)) {
    out.push_back({item_ids_[hit.index], hit.score});
  }
  return out;
}

ContentRecommender::ContentRecommender(std::map<std::string, ContentModel> models,
                                       std::map<std::string, FeatureVector> articles,
                                       std::map<std::string, std::size_t> popularity, double beta)
    : models_(std::move(models)),
      articles_(std::move(articles)),
      popularity_(std::move(popularity)),
      beta_(beta) {}

RecommendationList ContentRecommender::recommend(const std::string& user,
                                                 const std::set<std::string>& exclude,
                                                 std::size_t n) const {
  return recommend_content(user, models_, articles_, popularity_, exclude, n, beta_);
}

EvalReport precision_at_10(const Recommender& recommender, const Dataset& train,
                           const Dataset& test, const EvalOptions& options) {
  if (options.cutoff == 0) throw ValidationError("cutoff must be positive");
  const auto catalog = train.items();
  const auto train_items = train.items_by_user();
  const auto test_items = test.items_by_user();
  const GlobalTopRecommender fallback(train);
  static const std::set<std::string> kNone;

  EvalReport report;
  report.system = recommender.name();
  double total = 0.0;
  for (const auto& [user, wanted] : test_items) {
    auto seen_it = train_items.find(user);
    const auto& seen = seen_it == train_items.end() ? kNone : seen_it->second;
    if (std::all_of(wanted.begin(), wanted.end(),
                    [&](const std::string& item) { return seen.contains(item); })) {
      ++report.skipped_users;
      continue;
    }

    RecommendationList recs;
    try {
      recs = recommender.recommend(user, seen, options.cutoff);
    } catch (const Error&) {
      ++report.fallback_users;
      recs = fallback.recommend(user, seen, options.cutoff);
    }

    std::size_t produced = 0, hits = 0;
    for (const auto& rec : recs) {
      if (produced == options.cutoff) break;
      if (!catalog.contains(rec.item_id) || seen.contains(rec.item_id)) continue;
      ++produced;
      if (wanted.contains(rec.item_id)) ++hits;
    }
    const double denom = options.normalized ? static_cast<double>(std::max<std::size_t>(produced, 1))
                                            : static_cast<double>(options.cutoff);
    total += static_cast<double>(hits) / denom;
    ++report.users_evaluated;
  }
  if (report.users_evaluated > 0) {
    report.precision_at_10 = total / static_cast<double>(report.users_evaluated);
  }
  return report;
}

ModelState train_collaborative(const Dataset& train, const TrainerConfig& cfg) {
  ModelState state;
  const auto actions = train.actions();
  run_stream(actions, state, cfg);
  return state;
}

std::map<std::string, ContentModel> train_content_models(
    const Dataset& train, const std::map<std::string, FeatureVector>& articles,
    const RankerConfig& cfg, std::uint64_t seed) {
  std::set<std::string> corpus;
  for (const auto& [item, _] : articles) corpus.insert(item);
  std::map<std::string, ContentModel> models;
  for (const auto& [user, rated] : train.items_by_user()) {
    std::vector<FeatureVector> positives, negatives;
    std::set<std::string> known;
    for (const auto& item : rated) {
      if (auto it = articles.find(item); it != articles.end()) {
        positives.push_back(it->second);
        known.insert(item);
      }
    }
    if (positives.empty()) continue;
    Rng rng(derive_seed(seed, "negatives:" + user));
    for (const auto& item : sample_negatives(known, corpus, cfg.negative_ratio, rng)) {
      if (!rated.contains(item)) negatives.push_back(articles.at(item));
    }
    if (negatives.empty()) continue;
    try {
      auto model = train_user_model(positives, negatives, cfg);
      model.owner = user;
      models.emplace(user, std::move(model));
    } catch (const DegenerateTrainingError&) {
    }
  }
  return models;
}

namespace {

SweepRow evaluate_run(const Dataset& train, const Dataset& test, const TrainerConfig& cfg,
                      std::size_t parameter) {
  const auto state = train_collaborative(train, cfg);
  const CollaborativeRecommender rec(state, train.items());
  const auto report = precision_at_10(rec, train, test);
  return {parameter, report.precision_at_10, report.users_evaluated, false};
}

}  // namespace

std::vector<SweepRow> sweep_batch_size(const Dataset& data, std::span<const std::size_t> sizes,
                                       const TrainerConfig& cfg, std::uint64_t seed,
                                       double train_fraction) {
  std::vector<SweepRow> rows;
  if (sizes.empty()) return rows;
  const auto [train, test] = split(data, train_fraction, seed);
  TrainerConfig run = cfg;
  run.als.seed = seed;
  for (auto size : sizes) {
    run.batch_size = std::max<std::size_t>(size, 1);
    rows.push_back(evaluate_run(train, test, run, size));
  }
  run.batch_size = std::max<std::size_t>(train.size(), 1);
  run.parallelism = 1;
  auto reference = evaluate_run(train, test, run, train.size());
  reference.reference = true;
  rows.push_back(reference);
  return rows;
}

std::vector<SweepRow> sweep_parallelism(const Dataset& data, std::span<const unsigned> levels,
                                        std::size_t batch_size, const TrainerConfig& cfg,
                                        std::uint64_t seed, double train_fraction) {
  std::vector<SweepRow> rows;
  if (levels.empty()) return rows;
  const auto [train, test] = split(data, train_fraction, seed);
  TrainerConfig run = cfg;
  run.als.seed = seed;
  run.batch_size = std::max<std::size_t>(batch_size, 1);
  for (auto level : levels) {
    run.parallelism = level;
    rows.push_back(evaluate_run(train, test, run, level));
  }
  return rows;
}

void write_report_csv(std::ostream& out, std::span<const EvalReport> reports) {
  out << "system,precision_at_10,users_evaluated\n";
  for (const auto& r : reports) {
    out << r.system << ',' << std::setprecision(6) << std::fixed << r.precision_at_10 << ','
        << r.users_evaluated << '\n';
  }
  out.unsetf(std::ios::floatfield);
}

void write_sweep_csv(std::ostream& out, std::string_view parameter_name,
                     std::span<const SweepRow> rows) {
  out << parameter_name << ",precision_at_10\n";
  for (const auto& r : rows) {
    out << r.parameter << ',' << std::setprecision(6) << std::fixed << r.precision_at_10 << '\n';
  }
  out.unsetf(std::ios::floatfield);
}

}  // namespace rtrec
