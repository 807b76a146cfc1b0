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
#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rtrec/random.hpp"
#include "rtrec/recommendation.hpp"

namespace rtrec {

struct ArticleDocument {
  std::string item_id;
  std::string section;
  std::string author;
  std::string title;
  std::string body;

  friend bool operator==(const ArticleDocument&, const ArticleDocument&) = default;
};

/// Set of binary features. Ids carry a type prefix: `s:` section,
/// `a:` author term, `t:` title or body term.
class FeatureVector {
 public:
  FeatureVector() = default;
  FeatureVector(std::initializer_list<std::string> ids);
  explicit FeatureVector(std::vector<std::string> ids);

  void insert(std::string id);
  bool contains(std::string_view id) const;
  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  auto begin() const noexcept { return ids_.begin(); }
  auto end() const noexcept { return ids_.end(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;

 private:
  std::vector<std::string> ids_;  // sorted, unique
};

struct RankerConfig {
  std::vector<double> costs{10.0, 20.0, 50.0};
  std::size_t negative_ratio = 5;
  std::size_t keep_top = 2500;
  std::size_t keep_bottom = 2500;
  double beta = 10.0;
  std::size_t cv_folds = 5;
  std::set<std::string, std::less<>> stopwords;

  RankerConfig();
  void validate() const;
};

/// The built-in English stop-word list (also shipped as data/stopwords.txt).
const std::set<std::string, std::less<>>& default_stopwords();

/// One word per line; blank lines and `#` comments are skipped.
std::set<std::string, std::less<>> load_stopwords(std::istream& in);

/// Lower-cased ASCII tokens split on every non-alphanumeric byte. Bytes
/// outside ASCII are kept inside tokens so UTF-8 words survive intact.
std::vector<std::string> tokenize(std::string_view text);

FeatureVector extract_features(const ArticleDocument& doc, const RankerConfig& cfg);

/// Uniform sample without replacement from corpus minus user_ratings of
/// size min(ratio * |user_ratings|, |corpus minus user_ratings|).
std::set<std::string> sample_negatives(const std::set<std::string>& user_ratings,
                                       const std::set<std::string>& corpus, std::size_t ratio,
                                       Rng& rng);

struct LabeledExample {
  FeatureVector features;
  int label = 0;  // 0 or 1
};

/// Linear logistic model. The intercept is trained as the weight of an
/// always-present bias feature and is regularized like every other weight.
struct LogisticModel {
  std::map<std::string, double, std::less<>> coefficients;
  double intercept = 0.0;
};

/// 0.5 |w|^2 + cost * sum log(1 + exp(-y w.x)), y in {-1, +1}, with the
/// intercept counted in w.
double logistic_loss(std::span<const LabeledExample> examples, const LogisticModel& model,
                     double cost);

/// Gradient of logistic_loss. Keys are every feature seen in `examples`;
/// the second member is the intercept derivative.
std::pair<std::map<std::string, double, std::less<>>, double> logistic_gradient(
    std::span<const LabeledExample> examples, const LogisticModel& model, double cost);

/// Newton-CG on logistic_loss. Stops once the gradient norm falls below
/// 1e-7 (1 + |loss|). Throws DegenerateTrainingError unless both labels
/// are present.
LogisticModel train_logreg(std::span<const LabeledExample> examples, double cost);

struct ContentModel {
  std::string owner;
  std::map<std::string, double, std::less<>> coefficients;
  double intercept = 0.0;
  double cost = 0.0;
};

struct CostScore {
  double cost = 0.0;
  double mean_f1 = 0.0;
};

struct TrainingDiagnostics {
  std::vector<CostScore> cv;  // empty when there were too few examples to fold
  std::size_t folds = 0;
  std::size_t features_before_pruning = 0;
};

/// Keeps the `keep_top` largest and `keep_bottom` smallest non-zero
/// coefficients and drops the rest. Equal values order by feature id.
std::map<std::string, double, std::less<>> prune_coefficients(
    const std::map<std::string, double, std::less<>>& coefficients, std::size_t keep_top,
    std::size_t keep_bottom);

/// Cost search by stratified k-fold F1 of the positive class, a refit at
/// the best cost (ties go to the smaller cost) and coefficient pruning.
ContentModel train_user_model(std::span<const FeatureVector> positives,
                              std::span<const FeatureVector> negatives, const RankerConfig& cfg,
                              TrainingDiagnostics* diagnostics = nullptr);

double score(const ContentModel& model, const FeatureVector& features);

inline double boosted_score(double p, double popularity, double beta) noexcept {
  return p * (popularity + beta);
}

/// Articles ranked by boosted_score, excluded ids skipped, ties by item id.
/// Throws ColdUserError when `user` has no model.
RecommendationList recommend_content(const std::string& user,
                                     const std::map<std::string, ContentModel>& models,
                                     const std::map<std::string, FeatureVector>& articles,
                                     const std::map<std::string, std::size_t>& popularity,
                                     const std::set<std::string>& exclude, std::size_t n,
                                     double beta = 10.0);

/// Same ranking for an already loaded model.
RecommendationList rank_articles(const ContentModel& model,
                                 const std::map<std::string, FeatureVector>& articles,
                                 const std::map<std::string, std::size_t>& popularity,
                                 const std::set<std::string>& exclude, std::size_t n,
                                 double beta);

}  // namespace rtrec
