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
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace rtrec {

/// Hyper-parameters of the confidence-weighted factorization.
struct AlsParams {
  int k = 50;
  double alpha = 40.0;
  double lambda = 0.01;
  int cg_steps = 3;
  int epochs = 15;
  double init_scale = 0.01;
  std::uint64_t seed = 0;
  /// Worker threads for the per-entity solves; 0 picks hardware concurrency.
  unsigned threads = 1;

  void validate() const;
};

/// Implicit ratings in coordinate form. Absent entries are r = 0.
struct SparseRatings {
  struct Entry {
    std::size_t row = 0;
    std::size_t col = 0;
    double value = 1.0;
  };

  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Entry> entries;

  /// Indices in range, values positive and finite, no duplicate cells.
  void validate() const;
};

struct FactorMatrices {
  Eigen::MatrixXd X;  // users x k
  Eigen::MatrixXd Y;  // items x k
};

/// Entries uniform in [0, init_scale) drawn from `seed`.
FactorMatrices random_factors(std::size_t users, std::size_t items, const AlsParams& params);

inline double confidence(double r, double alpha) noexcept { return 1.0 + alpha * r; }

/// Sum over every (u, i) cell of c_ui (p_ui - x_u.y_i)^2 plus the weighted
/// penalty lambda (sum_u n_u |x_u|^2 + sum_i n_i |y_i|^2), where n_u and n_i
/// count the non-zero ratings of the row and column. The dense part is
/// folded into trace(X'X Y'Y) so the cost is linear in the non-zeros.
double objective(const SparseRatings& R, const FactorMatrices& F, const AlsParams& params);

/// Runs `params.epochs` alternating sweeps (users, then items). Each vector
/// solve is `params.cg_steps` conjugate-gradient iterations on
///   (Y'Y + Y'(C_u - I)Y + lambda n_u I) x_u = Y' C_u p_u,
/// warm-started from the current vector. Rows or columns without ratings
/// are left untouched.
FactorMatrices latent_factor_update(const SparseRatings& R, FactorMatrices F,
                                    const AlsParams& params);

struct ScoredIndex {
  std::size_t index = 0;
  double score = 0.0;

  friend bool operator==(const ScoredIndex&, const ScoredIndex&) = default;
};

/// Top-n rows of Y by descending dot product with `user`, skipping indices
/// whose `exclude` byte is non-zero (the mask may be shorter than Y). Ties resolve to
/// the lower index.
std::vector<ScoredIndex> recommend_collaborative(const Eigen::Ref<const Eigen::VectorXd>& user,
                                                 const Eigen::MatrixXd& Y,
                                                 std::span<const std::uint8_t> exclude, std::size_t n);

/// Convenience overload for an explicit index list.
std::vector<ScoredIndex> recommend_collaborative(const Eigen::Ref<const Eigen::VectorXd>& user,
                                                 const Eigen::MatrixXd& Y,
                                                 const std::vector<std::size_t>& exclude,
                                                 std::size_t n);

namespace detail {

/// Compressed view of one side of the ratings: for each row, its columns
/// and values.
struct CompressedRows {
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> index;
  std::vector<double> value;

  std::size_t count(std::size_t row) const { return offsets[row + 1] - offsets[row]; }
};

CompressedRows compress(const SparseRatings& R, bool by_row);

/// One half-sweep: solves every row of `target` against `fixed`.
void solve_side(const CompressedRows& side, const Eigen::MatrixXd& fixed, Eigen::MatrixXd& target,
                const AlsParams& params);

/// Solve for a single vector; exposed for tests.
void cg_solve_one(const Eigen::MatrixXd& fixed, const Eigen::MatrixXd& gram,
                  std::span<const std::size_t> cols, std::span<const double> values,
                  const AlsParams& params, Eigen::Ref<Eigen::VectorXd> x);

}  // namespace detail

}  // namespace rtrec
