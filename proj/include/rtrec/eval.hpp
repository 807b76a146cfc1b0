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

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rtrec/content.hpp"
#include "rtrec/ingest.hpp"
#include "rtrec/recommendation.hpp"
#include "rtrec/trainer.hpp"

namespace rtrec {

struct DatasetTuple {
  std::string user_id;
  std::string item_id;
  UserItemAggregate interactions;
};

/// Significant (user, item, interactions) tuples, at most one per pair.
struct Dataset {
  std::vector<DatasetTuple> tuples;

  /// Keeps the significant aggregates, in key order.
  static Dataset from_aggregates(const AggregateMap& aggregates, const SignificanceRule& rule);

  /// Throws ValidationError on a duplicate (user, item).
  void validate() const;
  std::vector<SignificantAction> actions() const;
  std::set<std::string> items() const;
  std::map<std::string, std::set<std::string>> items_by_user() const;
  std::size_t size() const noexcept { return tuples.size(); }
  bool empty() const noexcept { return tuples.empty(); }
};

/// Seeded uniform partition; the training side gets round(fraction * n)
/// tuples. Both halves keep the shuffled order.
std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction, std::uint64_t seed);

/// Items by number of users with a significant action, ties by item id.
RecommendationList global_top(const Dataset& train, std::size_t n);

/// A seeded uniform shuffle of the training catalog, truncated to n.
RecommendationList random_rank(const Dataset& train, std::size_t n, std::uint64_t seed);

/// Per-user ranking over the training catalog.
class Recommender {
 public:
  virtual ~Recommender() = default;
  virtual std::string name() const = 0;
  /// Best-first list of at most n items, none of them in `exclude`. May
  /// throw for users it cannot serve.
  virtual RecommendationList recommend(const std::string& user,
                                       const std::set<std::string>& exclude,
                                       std::size_t n) const = 0;
};

class GlobalTopRecommender final : public Recommender {
 public:
  explicit GlobalTopRecommender(const Dataset& train);
  std::string name() const override { return "global_top"; }
  RecommendationList recommend(const std::string& user, const std::set<std::string>& exclude,
                               std::size_t n) const override;

 private:
  RecommendationList ranking_;
};

/// Independent shuffle per user, seeded by (seed, user).
class RandomRecommender final : public Recommender {
 public:
  RandomRecommender(const Dataset& train, std::uint64_t seed);
  std::string name() const override { return "random"; }
  RecommendationList recommend(const std::string& user, const std::set<std::string>& exclude,
                               std::size_t n) const override;

 private:
  std::vector<std::string> catalog_;
  std::uint64_t seed_;
};

/// Dot-product ranking from trained factors over a fixed catalog.
class CollaborativeRecommender final : public Recommender {
 public:
  CollaborativeRecommender(const ModelState& state, const std::set<std::string>& catalog);
  std::string name() const override { return "collaborative"; }
  /// Throws ColdUserError for users without a vector.
  RecommendationList recommend(const std::string& user, const std::set<std::string>& exclude,
                               std::size_t n) const override;

 private:
  std::map<std::string, Eigen::VectorXd> users_;
  std::vector<std::string> item_ids_;
  Eigen::MatrixXd Y_;
};

class ContentRecommender final : public Recommender {
 public:
  ContentRecommender(std::map<std::string, ContentModel> models,
                     std::map<std::string, FeatureVector> articles,
                     std::map<std::string, std::size_t> popularity, double beta);
  std::string name() const override { return "content"; }
  RecommendationList recommend(const std::string& user, const std::set<std::string>& exclude,
                               std::size_t n) const override;

 private:
  std::map<std::string, ContentModel> models_;
  std::map<std::string, FeatureVector> articles_;
  std::map<std::string, std::size_t> popularity_;
  double beta_;
};

struct EvalOptions {
  std::size_t cutoff = 10;
  /// Divide hits by the number of recommendations produced instead of the
  /// cutoff. Off for the headline figure.
  bool normalized = false;
};

struct EvalReport {
  std::string system;
  double precision_at_10 = 0.0;
  std::size_t users_evaluated = 0;
  std::size_t fallback_users = 0;  // served by global top after a failure
  std::size_t skipped_users = 0;   // test users with nothing new to find
  std::string config;
};

/// Mean over test users of |top-10 ∩ test items| / 10. Candidates are
/// training items minus the user's own training items; a recommender
/// failure falls back to global top and is counted.
EvalReport precision_at_10(const Recommender& recommender, const Dataset& train,
                           const Dataset& test, const EvalOptions& options = {});

/// Trains factors on the dataset's actions streamed in dataset order.
ModelState train_collaborative(const Dataset& train, const TrainerConfig& cfg);

/// Per-user content models: positives are the user's training items,
/// negatives a 5:1 sample of other articles. Users whose training fails
/// are left out.
std::map<std::string, ContentModel> train_content_models(
    const Dataset& train, const std::map<std::string, FeatureVector>& articles,
    const RankerConfig& cfg, std::uint64_t seed);

struct SweepRow {
  std::size_t parameter = 0;
  double precision_at_10 = 0.0;
  std::size_t users_evaluated = 0;
  bool reference = false;  // the single-batch row
};

/// One evaluation per batch size over the seeded split, then a reference
/// row trained as a single batch. `seed` drives the split and the factor
/// initialization. Empty `sizes` gives an empty table.
std::vector<SweepRow> sweep_batch_size(const Dataset& data, std::span<const std::size_t> sizes,
                                       const TrainerConfig& cfg, std::uint64_t seed,
                                       double train_fraction = 0.8);

/// One evaluation per parallelism level at a fixed batch size.
std::vector<SweepRow> sweep_parallelism(const Dataset& data, std::span<const unsigned> levels,
                                        std::size_t batch_size, const TrainerConfig& cfg,
                                        std::uint64_t seed, double train_fraction = 0.8);

/// `system,precision_at_10,users_evaluated` with a header line.
void write_report_csv(std::ostream& out, std::span<const EvalReport> reports);

/// Two columns, `<parameter_name>,precision_at_10`.
void write_sweep_csv(std::ostream& out, std::string_view parameter_name,
                     std::span<const SweepRow> rows);

}  // namespace rtrec
