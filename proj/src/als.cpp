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

#include "rtrec/als.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <thread>
#include <utility>

#include "rtrec/error.hpp"
#include "rtrec/random.hpp"

namespace rtrec {

void AlsParams::validate() const {
  if (k < 1) throw ValidationError("k must be at least 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ValidationError("alpha must be positive");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ValidationError("lambda must be positive");
  if (cg_steps < 1) throw ValidationError("cg_steps must be at least 1");
  if (epochs < 1) throw ValidationError("epochs must be at least 1");
  if (!(init_scale >= 0.0) || !std::isfinite(init_scale)) {
    throw ValidationError("init_scale must be non-negative");
  }
}

void SparseRatings::validate() const {
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& e : entries) {
    if (e.row >= rows || e.col >= cols) {
      throw DimensionError("rating (" + std::to_string(e.row) + ", " + std::to_string(e.col) +
                           ") outside " + std::to_string(rows) + "x" + std::to_string(cols));
    }
    if (!std::isfinite(e.value)) throw NonFiniteError("non-finite rating");
    if (!(e.value > 0.0)) throw ValidationError("stored ratings must be positive");
    if (!seen.emplace(e.row, e.col).second) throw ValidationError("duplicate rating cell");
  }
}

FactorMatrices random_factors(std::size_t users, std::size_t items, const AlsParams& params) {
  Rng rng(params.seed);
  FactorMatrices F{Eigen::MatrixXd(users, params.k), Eigen::MatrixXd(items, params.k)};
  for (Eigen::MatrixXd* m : {&F.X, &F.Y}) {
    for (Eigen::Index r = 0; r < m->rows(); ++r) {
      for (Eigen::Index c = 0; c < m->cols(); ++c) (*m)(r, c) = params.init_scale * uniform01(rng);
    }
  }
  return F;
}

namespace {

void check_shapes(const SparseRatings& R, const FactorMatrices& F, const AlsParams& params) {
  if (static_cast<std::size_t>(F.X.rows()) != R.rows ||
      static_cast<std::size_t>(F.Y.rows()) != R.cols) {
    throw DimensionError("factor rows do not match ratings shape");
  }
  if (F.X.cols() != params.k || F.Y.cols() != params.k) {
    throw DimensionError("factor width does not match k");
  }
}

template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) fn(i);
    });
  }
}

}  // namespace

double objective(const SparseRatings& R, const FactorMatrices& F, const AlsParams& params) {
  check_shapes(R, F, params);
  // Every cell contributes (x_u.y_i)^2 as if p = 0, c = 1 ...
  const Eigen::MatrixXd xtx = F.X.transpose() * F.X;
  const Eigen::MatrixXd yty = F.Y.transpose() * F.Y;
  double loss = xtx.cwiseProduct(yty).sum();

  // ... and the stored cells swap that term for their real one.
  std::vector<double> row_count(R.rows, 0.0), col_count(R.cols, 0.0);
  for (const auto& e : R.entries) {
    const double s = F.X.row(e.row).dot(F.Y.row(e.col));
    const double c = confidence(e.value, params.alpha);
    loss += c * (1.0 - s) * (1.0 - s) - s * s;
    row_count[e.row] += 1.0;
    col_count[e.col] += 1.0;
  }

  double penalty = 0.0;
  for (std::size_t u = 0; u < R.rows; ++u) penalty += row_count[u] * F.X.row(u).squaredNorm();
  for (std::size_t i = 0; i < R.cols; ++i) penalty += col_count[i] * F.Y.row(i).squaredNorm();
  return loss + params.lambda * penalty;
}

namespace detail {

CompressedRows compress(const SparseRatings& R, bool by_row) {
  const std::size_t n = by_row ? R.rows : R.cols;
  CompressedRows out;
  out.offsets.assign(n + 1, 0);
  for (const auto& e : R.entries) ++out.offsets[(by_row ? e.row : e.col) + 1];
  for (std::size_t i = 0; i < n; ++i) out.offsets[i + 1] += out.offsets[i];
  out.index.resize(R.entries.size());
  out.value.resize(R.entries.size());
  std::vector<std::size_t> cursor(out.offsets.begin(), out.offsets.end() - 1);
  for (const auto& e : R.entries) {
    const std::size_t slot = cursor[by_row ? e.row : e.col]++;
    out.index[slot] = by_row ? e.col : e.row;
    out.value[slot] = e.value;
  }
  // Sorted neighbour lists keep the floating-point summation order
  // independent of the order entries were supplied in.
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<std::size_t, double>> tmp;
    for (std::size_t s = out.offsets[i]; s < out.offsets[i + 1]; ++s) {
      tmp.emplace_back(out.index[s], out.value[s]);
    }
    std::sort(tmp.begin(), tmp.end());
    for (std::size_t s = 0; s < tmp.size(); ++s) {
      out.index[out.offsets[i] + s] = tmp[s].first;
      out.value[out.offsets[i] + s] = tmp[s].second;
    }
  }
  return out;
}

void cg_solve_one(const Eigen::MatrixXd& fixed, const Eigen::MatrixXd& gram,
                  std::span<const std::size_t> cols, std::span<const double> values,
                  const AlsParams& params, Eigen::Ref<Eigen::VectorXd> x) {
  const double reg = params.lambda * static_cast<double>(cols.size());

  // A v = gram v + sum (c - 1)(y.v) y + reg v
  auto apply = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd out = gram * v + reg * v;
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const auto y = fixed.row(static_cast<Eigen::Index>(cols[j]));
      const double c = confidence(values[j], params.alpha);
      out.noalias() += ((c - 1.0) * y.dot(v)) * y.transpose();
    }
    return out;
  };

  // r = b - A x with b = sum c y
  Eigen::VectorXd r = -(gram * x) - reg * x;
  double rhs_norm = 0.0;
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const auto y = fixed.row(static_cast<Eigen::Index>(cols[j]));
    const double c = confidence(values[j], params.alpha);
    r.noalias() += (c - (c - 1.0) * y.dot(x)) * y.transpose();
    rhs_norm += c * y.norm();
  }

  const double floor = 1e-30 * std::max(1.0, rhs_norm * rhs_norm);
  Eigen::VectorXd p = r;
  double rs_old = r.squaredNorm();
  for (int it = 0; it < params.cg_steps; ++it) {
    if (rs_old <= floor) break;
    const Eigen::VectorXd Ap = apply(p);
    const double pAp = p.dot(Ap);
    if (!(pAp > 0.0)) break;
    const double step = rs_old / pAp;
    x.noalias() += step * p;
    r.noalias() -= step * Ap;
    const double rs_new = r.squaredNorm();
    p = r + (rs_new / rs_old) * p;
    rs_old = rs_new;
  }
}

void solve_side(const CompressedRows& side, const Eigen::MatrixXd& fixed, Eigen::MatrixXd& target,
                const AlsParams& params) {
  const Eigen::MatrixXd gram = fixed.transpose() * fixed;
  const std::size_t n = side.offsets.size() - 1;
  parallel_for(n, params.threads, [&](std::size_t row) {
    const std::size_t count = side.count(row);
    if (count == 0) return;
    const std::size_t begin = side.offsets[row];
    Eigen::VectorXd x = target.row(static_cast<Eigen::Index>(row)).transpose();
    cg_solve_one(fixed, gram, std::span(side.index).subspan(begin, count),
                 std::span(side.value).subspan(begin, count), params, x);
    target.row(static_cast<Eigen::Index>(row)) = x.transpose();
  });
}

}  // namespace detail

FactorMatrices latent_factor_update(const SparseRatings& R, FactorMatrices F,
                                    const AlsParams& params) {
  params.validate();
  R.validate();
  check_shapes(R, F, params);
  if (!F.X.allFinite() || !F.Y.allFinite()) throw NonFiniteError("non-finite factor values");

  const auto by_user = detail::compress(R, true);
  const auto by_item = detail::compress(R, false);
  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    detail::solve_side(by_user, F.Y, F.X, params);
    detail::solve_side(by_item, F.X, F.Y, params);
  }
  return F;
}

std::vector<ScoredIndex> recommend_collaborative(const Eigen::Ref<const Eigen::VectorXd>& user,
                                                 const Eigen::MatrixXd& Y,
                                                 std::span<const std::uint8_t> exclude, std::size_t n) {
  if (n == 0) throw ValidationError("n must be at least 1");
  if (user.size() != Y.cols()) throw DimensionError("user vector width does not match Y");
  const Eigen::VectorXd scores = Y * user;
  std::vector<ScoredIndex> pool;
  pool.reserve(static_cast<std::size_t>(Y.rows()));
  for (Eigen::Index i = 0; i < Y.rows(); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    if (idx < exclude.size() && exclude[idx] != 0) continue;
    pool.push_back({idx, scores[i]});
  }
  auto better = [](const ScoredIndex& a, const ScoredIndex& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.index < b.index;
  };
  const std::size_t take = std::min(n, pool.size());
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take), pool.end(),
                    better);
  pool.resize(take);
  return pool;
}

std::vector<ScoredIndex> recommend_collaborative(const Eigen::Ref<const Eigen::VectorXd>& user,
                                                 const Eigen::MatrixXd& Y,
                                                 const std::vector<std::size_t>& exclude,
                                                 std::size_t n) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(Y.rows()), 0);
  for (auto i : exclude) {
    if (i < mask.size()) mask[i] = 1;
  }
  return recommend_collaborative(user, Y, std::span<const std::uint8_t>(mask), n);
}

}  // namespace rtrec
