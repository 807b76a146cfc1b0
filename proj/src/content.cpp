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

#include "rtrec/content.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <numeric>

#include <Eigen/Dense>

#include "rtrec/error.hpp"

namespace rtrec {

FeatureVector::FeatureVector(std::initializer_list<std::string> ids)
    : FeatureVector(std::vector<std::string>(ids)) {}

FeatureVector::FeatureVector(std::vector<std::string> ids) : ids_(std::move(ids)) {
  std::sort(ids_.begin(), ids_.end());
  ids_.erase(std::unique(ids_.begin(), ids_.end()), ids_.end());
}

void FeatureVector::insert(std::string id) {
  auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
  if (it == ids_.end() || *it != id) ids_.insert(it, std::move(id));
}

bool FeatureVector::contains(std::string_view id) const {
  return std::binary_search(ids_.begin(), ids_.end(), id, std::less<>{});
}

const std::set<std::string, std::less<>>& default_stopwords() {
  static const std::set<std::string, std::less<>> words{
      "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any",
      "are", "as", "at", "be", "because", "been", "before", "being", "below", "between",
      "both", "but", "by", "can", "could", "did", "do", "does", "doing", "down", "during",
      "each", "few", "for", "from", "further", "had", "has", "have", "having", "he", "her",
      "here", "hers", "herself", "him", "himself", "his", "how", "i", "if", "in", "into", "is",
      "it", "its", "itself", "just", "me", "more", "most", "my", "myself", "no", "nor", "not",
      "now", "of", "off", "on", "once", "only", "or", "other", "our", "ours", "ourselves",
      "out", "over", "own", "same", "she", "should", "so", "some", "such", "than", "that",
      "the", "their", "theirs", "them", "themselves", "then", "there", "these", "they", "this",
      "those", "through", "to", "too", "under", "until", "up", "very", "was", "we", "were",
      "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with", "would",
      "you", "your", "yours", "yourself", "yourselves",
  };
  return words;
}

RankerConfig::RankerConfig() : stopwords(default_stopwords()) {}

void RankerConfig::validate() const {
  if (costs.empty()) throw ValidationError("at least one candidate cost is required");
  for (double c : costs) {
    if (!(c > 0.0) || !std::isfinite(c)) throw ValidationError("costs must be positive");
  }
  if (negative_ratio < 1) throw ValidationError("negative_ratio must be at least 1");
  if (keep_top < 1 || keep_bottom < 1) throw ValidationError("keep counts must be positive");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ValidationError("beta must be positive");
  if (cv_folds < 2) throw ValidationError("cv_folds must be at least 2");
}

std::set<std::string, std::less<>> load_stopwords(std::istream& in) {
  std::set<std::string, std::less<>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    for (auto& token : tokenize(line)) out.insert(std::move(token));
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

FeatureVector extract_features(const ArticleDocument& doc, const RankerConfig& cfg) {
  std::vector<std::string> ids;
  std::string section;
  for (unsigned char c : doc.section) section.push_back(static_cast<char>(std::tolower(c)));
  const auto first = section.find_first_not_of(" \t\r\n");
  if (first != std::string::npos) {
    const auto last = section.find_last_not_of(" \t\r\n");
    ids.push_back("s:" + section.substr(first, last - first + 1));
  }
  auto add_terms = [&](std::string_view text, std::string_view prefix) {
    for (auto& token : tokenize(text)) {
      if (cfg.stopwords.contains(token)) continue;
      ids.push_back(std::string(prefix) + token);
    }
  };
  add_terms(doc.author, "a:");
  add_terms(doc.title, "t:");
  add_terms(doc.body, "t:");
  return FeatureVector(std::move(ids));
}

std::set<std::string> sample_negatives(const std::set<std::string>& user_ratings,
                                       const std::set<std::string>& corpus, std::size_t ratio,
                                       Rng& rng) {
  if (ratio < 1) throw ValidationError("negative ratio must be at least 1");
  std::vector<const std::string*> pool;
  for (const auto& item : corpus) {
    if (!user_ratings.contains(item)) pool.push_back(&item);
  }
  const std::size_t want = std::min(ratio * user_ratings.size(), pool.size());
  std::set<std::string> out;
  for (std::size_t j = 0; j < want; ++j) {
    const std::size_t pick = j + uniform_index(rng, pool.size() - j);
    std::swap(pool[j], pool[pick]);
    out.insert(*pool[j]);
  }
  return out;
}

namespace {

double sigmoid(double z) noexcept {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + exp(t)) without overflow.
double softplus(double t) noexcept {
  return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

/// Examples over a dense feature index; the last column is the bias.
struct IndexedProblem {
  std::vector<std::string> vocabulary;
  std::vector<std::vector<std::size_t>> rows;
  std::vector<double> y;  // -1 or +1
  std::size_t dim = 0;
};

IndexedProblem index_examples(std::span<const LabeledExample> examples) {
  IndexedProblem p;
  std::set<std::string_view> vocab;
  for (const auto& ex : examples) vocab.insert(ex.features.begin(), ex.features.end());
  p.vocabulary.assign(vocab.begin(), vocab.end());
  p.dim = p.vocabulary.size() + 1;
  std::map<std::string_view, std::size_t> lookup;
  for (std::size_t j = 0; j < p.vocabulary.size(); ++j) lookup.emplace(p.vocabulary[j], j);
  for (const auto& ex : examples) {
    std::vector<std::size_t> row;
    row.reserve(ex.features.size() + 1);
    for (const auto& f : ex.features) row.push_back(lookup.at(f));
    row.push_back(p.dim - 1);
    p.rows.push_back(std::move(row));
    p.y.push_back(ex.label == 1 ? 1.0 : -1.0);
  }
  return p;
}

double margin(const std::vector<std::size_t>& row, const Eigen::VectorXd& w) {
  double z = 0.0;
  for (auto j : row) z += w[static_cast<Eigen::Index>(j)];
  return z;
}

struct Evaluation {
  double loss = 0.0;
  Eigen::VectorXd grad;
  std::vector<double> curvature;  // sigma(1 - sigma) per example
};

Evaluation evaluate(const IndexedProblem& p, const Eigen::VectorXd& w, double cost) {
  Evaluation ev;
  ev.loss = 0.5 * w.squaredNorm();
  ev.grad = w;
  ev.curvature.resize(p.rows.size());
  for (std::size_t j = 0; j < p.rows.size(); ++j) {
    const double yz = p.y[j] * margin(p.rows[j], w);
    ev.loss += cost * softplus(-yz);
    const double s = sigmoid(yz);
    const double coef = cost * (s - 1.0) * p.y[j];
    for (auto f : p.rows[j]) ev.grad[static_cast<Eigen::Index>(f)] += coef;
    ev.curvature[j] = s * (1.0 - s);
  }
  return ev;
}

double loss_only(const IndexedProblem& p, const Eigen::VectorXd& w, double cost) {
  double loss = 0.5 * w.squaredNorm();
  for (std::size_t j = 0; j < p.rows.size(); ++j) {
    loss += cost * softplus(-p.y[j] * margin(p.rows[j], w));
  }
  return loss;
}

Eigen::VectorXd hessian_times(const IndexedProblem& p, const std::vector<double>& curvature,
                              double cost, const Eigen::VectorXd& v) {
  Eigen::VectorXd out = v;
  for (std::size_t j = 0; j < p.rows.size(); ++j) {
    const double xv = margin(p.rows[j], v);
    const double coef = cost * curvature[j] * xv;
    for (auto f : p.rows[j]) out[static_cast<Eigen::Index>(f)] += coef;
  }
  return out;
}

Eigen::VectorXd solve_logistic(const IndexedProblem& p, double cost) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.dim));
  constexpr int kMaxNewton = 200;
  for (int iter = 0; iter < kMaxNewton; ++iter) {
    const auto ev = evaluate(p, w, cost);
    const double gnorm = ev.grad.norm();
    if (gnorm <= 1e-7 * (1.0 + std::abs(ev.loss))) break;

    // Truncated CG for H d = -g.
    Eigen::VectorXd d = Eigen::VectorXd::Zero(w.size());
    Eigen::VectorXd r = -ev.grad;
    Eigen::VectorXd dir = r;
    double rs = r.squaredNorm();
    const double cg_tol = std::min(0.1, std::sqrt(gnorm)) * gnorm;
    for (int cg = 0; cg < 2 * static_cast<int>(p.dim) + 10; ++cg) {
      if (std::sqrt(rs) <= cg_tol) break;
      const Eigen::VectorXd Hd = hessian_times(p, ev.curvature, cost, dir);
      const double step = rs / dir.dot(Hd);
      d += step * dir;
      r -= step * Hd;
      const double rs_new = r.squaredNorm();
      dir = r + (rs_new / rs) * dir;
      rs = rs_new;
    }

    // Armijo backtracking.
    const double slope = ev.grad.dot(d);
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Eigen::VectorXd candidate = w + t * d;
      if (loss_only(p, candidate, cost) <= ev.loss + 1e-4 * t * slope) {
        w = candidate;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved) break;
  }
  return w;
}

LogisticModel to_model(const IndexedProblem& p, const Eigen::VectorXd& w) {
  LogisticModel m;
  for (std::size_t j = 0; j < p.vocabulary.size(); ++j) {
    m.coefficients.emplace(p.vocabulary[j], w[static_cast<Eigen::Index>(j)]);
  }
  m.intercept = w[static_cast<Eigen::Index>(p.dim - 1)];
  return m;
}

double linear_score(const std::map<std::string, double, std::less<>>& coefficients,
                    double intercept, const FeatureVector& features) {
  double z = intercept;
  for (const auto& f : features) {
    auto it = coefficients.find(f);
    if (it != coefficients.end()) z += it->second;
  }
  return z;
}

void check_labels(std::span<const LabeledExample> examples) {
  bool pos = false, neg = false;
  for (const auto& ex : examples) {
    if (ex.label != 0 && ex.label != 1) throw ValidationError("labels must be 0 or 1");
    (ex.label == 1 ? pos : neg) = true;
  }
  if (!pos || !neg) throw DegenerateTrainingError("training examples contain a single class");
}

}  // namespace

double logistic_loss(std::span<const LabeledExample> examples, const LogisticModel& model,
                     double cost) {
  double loss = 0.5 * model.intercept * model.intercept;
  for (const auto& [_, c] : model.coefficients) loss += 0.5 * c * c;
  for (const auto& ex : examples) {
    const double y = ex.label == 1 ? 1.0 : -1.0;
    loss += cost * softplus(-y * linear_score(model.coefficients, model.intercept, ex.features));
  }
  return loss;
}

std::pair<std::map<std::string, double, std::less<>>, double> logistic_gradient(
    std::span<const LabeledExample> examples, const LogisticModel& model, double cost) {
  std::map<std::string, double, std::less<>> grad;
  for (const auto& [f, c] : model.coefficients) grad[f] = c;
  for (const auto& ex : examples) {
    for (const auto& f : ex.features) grad.try_emplace(f, 0.0);
  }
  double bias = model.intercept;
  for (const auto& ex : examples) {
    const double y = ex.label == 1 ? 1.0 : -1.0;
    const double yz = y * linear_score(model.coefficients, model.intercept, ex.features);
    const double coef = cost * (sigmoid(yz) - 1.0) * y;
    for (const auto& f : ex.features) grad[f] += coef;
    bias += coef;
  }
  return {std::move(grad), bias};
}

LogisticModel train_logreg(std::span<const LabeledExample> examples, double cost) {
  if (!(cost > 0.0)) throw ValidationError("cost must be positive");
  check_labels(examples);
  const auto problem = index_examples(examples);
  return to_model(problem, solve_logistic(problem, cost));
}

std::map<std::string, double, std::less<>> prune_coefficients(
    const std::map<std::string, double, std::less<>>& coefficients, std::size_t keep_top,
    std::size_t keep_bottom) {
  std::vector<std::pair<std::string, double>> entries;
  for (const auto& [f, c] : coefficients) {
    if (c != 0.0) entries.emplace_back(f, c);
  }
  if (entries.size() <= keep_top + keep_bottom) return {entries.begin(), entries.end()};
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::map<std::string, double, std::less<>> out(entries.begin(),
                                                 entries.begin() + static_cast<std::ptrdiff_t>(keep_top));
  out.insert(entries.end() - static_cast<std::ptrdiff_t>(keep_bottom), entries.end());
  return out;
}

namespace {

double f1_score(std::size_t tp, std::size_t fp, std::size_t fn) {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

}  // namespace

ContentModel train_user_model(std::span<const FeatureVector> positives,
                              std::span<const FeatureVector> negatives, const RankerConfig& cfg,
                              TrainingDiagnostics* diagnostics) {
  cfg.validate();
  if (positives.empty() || negatives.empty()) {
    throw DegenerateTrainingError("a user model needs at least one positive and one negative");
  }
  std::vector<double> costs = cfg.costs;
  std::sort(costs.begin(), costs.end());
  costs.erase(std::unique(costs.begin(), costs.end()), costs.end());

  // Stratified folds: the j-th example of each class lands in fold j mod k.
  const std::size_t folds = std::min({cfg.cv_folds, positives.size(), negatives.size()});
  std::vector<LabeledExample> pooled;
  std::vector<std::size_t> fold_of;
  for (std::size_t j = 0; j < positives.size(); ++j) {
    pooled.push_back({positives[j], 1});
    fold_of.push_back(folds ? j % folds : 0);
  }
  for (std::size_t j = 0; j < negatives.size(); ++j) {
    pooled.push_back({negatives[j], 0});
    fold_of.push_back(folds ? j % folds : 0);
  }

  TrainingDiagnostics diag;
  double best_cost = costs.front();
  if (folds >= 2) {
    diag.folds = folds;
    double best_f1 = -1.0;
    for (double cost : costs) {
      double total = 0.0;
      for (std::size_t fold = 0; fold < folds; ++fold) {
        std::vector<LabeledExample> train, test;
        for (std::size_t j = 0; j < pooled.size(); ++j) {
          (fold_of[j] == fold ? test : train).push_back(pooled[j]);
        }
        const auto model = train_logreg(train, cost);
        std::size_t tp = 0, fp = 0, fn = 0;
        for (const auto& ex : test) {
          const bool predicted = linear_score(model.coefficients, model.intercept, ex.features) >= 0.0;
          if (predicted && ex.label == 1) ++tp;
          if (predicted && ex.label == 0) ++fp;
          if (!predicted && ex.label == 1) ++fn;
        }
        total += f1_score(tp, fp, fn);
      }
      const double mean = total / static_cast<double>(folds);
      diag.cv.push_back({cost, mean});
      if (mean > best_f1) {
        best_f1 = mean;
        best_cost = cost;
      }
    }
  }

  const auto full = train_logreg(pooled, best_cost);
  diag.features_before_pruning = full.coefficients.size();
  ContentModel out;
  out.coefficients = prune_coefficients(full.coefficients, cfg.keep_top, cfg.keep_bottom);
  out.intercept = full.intercept;
  out.cost = best_cost;
  if (diagnostics) *diagnostics = std::move(diag);
  return out;
}

double score(const ContentModel& model, const FeatureVector& features) {
  return sigmoid(linear_score(model.coefficients, model.intercept, features));
}

RecommendationList rank_articles(const ContentModel& model,
                                 const std::map<std::string, FeatureVector>& articles,
                                 const std::map<std::string, std::size_t>& popularity,
                                 const std::set<std::string>& exclude, std::size_t n,
                                 double beta) {
  if (n == 0) throw ValidationError("n must be at least 1");
  RecommendationList pool;
  for (const auto& [item, features] : articles) {
    if (exclude.contains(item)) continue;
    const auto pop = popularity.find(item);
    const double f = pop == popularity.end() ? 0.0 : static_cast<double>(pop->second);
    pool.push_back({item, boosted_score(score(model, features), f, beta)});
  }
  const std::size_t take = std::min(n, pool.size());
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take), pool.end(),
                    [](const ScoredItem& a, const ScoredItem& b) {
                      if (a.score != b.score) return a.score > b.score;
                      return a.item_id < b.item_id;
                    });
  pool.resize(take);
  return pool;
}

RecommendationList recommend_content(const std::string& user,
                                     const std::map<std::string, ContentModel>& models,
                                     const std::map<std::string, FeatureVector>& articles,
                                     const std::map<std::string, std::size_t>& popularity,
                                     const std::set<std::string>& exclude, std::size_t n,
                                     double beta) {
  auto it = models.find(user);
  if (it == models.end()) throw ColdUserError("no content model for user " + user);
  return rank_articles(it->second, articles, popularity, exclude, n, beta);
}

}  // namespace rtrec
