// Design matrices of a linear mixed model y = X beta + Z b + eps: the dense
// fixed-effects block X and the grouping-factor-blocked sparse Z.
#pragma once

#include <Eigen/QR>
#include <Eigen/SparseCore>

#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include "rlmm/manifold.hpp"

namespace rlmm {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Fixed-effects design X (n x p). Full column rank is checked once on
/// construction via a rank-revealing QR factorization.
class FixedDesign {
 public:
  explicit FixedDesign(Matrix x) : x_(std::move(x)) {
    detail::require(x_.rows() > x_.cols() && x_.cols() > 0, "FixedDesign: requires n > p >= 1");
    detail::require(x_.allFinite(), "FixedDesign: non-finite entries");
    Eigen::ColPivHouseholderQR<Matrix> qr(x_);
    qr.setThreshold(1e-10);
    if (qr.rank() < x_.cols()) throw std::invalid_argument("FixedDesign: X is rank deficient");
  }

  int n() const { return static_cast<int>(x_.rows()); }
  int p() const { return static_cast<int>(x_.cols()); }
  const Matrix& x() const { return x_; }

 private:
  Matrix x_;
};

/// One grouping factor: M_j levels, q_j columns per level, the level index of
/// each observation, and the dense per-row content of Z^{(j)} (all-ones for an
/// intercept column, covariate values for a slope). The assembled Z^{(j)T} is
/// kept in compressed sparse column layout.
class GroupFactor {
 public:
  GroupFactor(int levels, int q, std::vector<int> level_of_obs, Matrix z_rows)
      : levels_(levels), q_(q), level_of_obs_(std::move(level_of_obs)), z_rows_(std::move(z_rows)) {
    detail::require(levels_ >= 1 && q_ >= 1, "GroupFactor: levels and q must be positive");
    const auto n = static_cast<Eigen::Index>(level_of_obs_.size());
    detail::require(n > 0 && z_rows_.rows() == n && z_rows_.cols() == q_,
                    "GroupFactor: z_rows shape must be n x q");
    detail::require(z_rows_.allFinite(), "GroupFactor: non-finite z_rows");
    for (int lev : level_of_obs_)
      detail::require(lev >= 0 && lev < levels_, "GroupFactor: level index out of range");

    zt_.resize(static_cast<Eigen::Index>(levels_) * q_, n);
    zt_.reserve(Eigen::VectorXi::Constant(static_cast<int>(n), q_));
    for (Eigen::Index i = 0; i < n; ++i) {
      const int base = level_of_obs_[static_cast<std::size_t>(i)] * q_;
      for (int c = 0; c < q_; ++c) zt_.insert(base + c, i) = z_rows_(i, c);
    }
    zt_.makeCompressed();
  }

  int levels() const { return levels_; }
  int q() const { return q_; }
  int cols() const { return levels_ * q_; }
  const std::vector<int>& level_of_obs() const { return level_of_obs_; }
  const Matrix& z_rows() const { return z_rows_; }
  /// Z^{(j)T} in CSC storage, (M_j q_j) x n.
  const SparseMatrix& zt() const { return zt_; }

 private:
  int levels_;
  int q_;
  std::vector<int> level_of_obs_;
  Matrix z_rows_;
  SparseMatrix zt_;
};

/// The random-effects design: K grouping factors over a common set of n
/// observations. K = 0 (no random effects, H = I) is allowed.
class GroupedDesign {
 public:
  GroupedDesign(int n, std::vector<GroupFactor> factors) : n_(n), factors_(std::move(factors)) {
    detail::require(n_ > 0, "GroupedDesign: n must be positive");
    for (const auto& f : factors_)
      detail::require(static_cast<int>(f.level_of_obs().size()) == n_,
                      "GroupedDesign: factor observation count mismatch");
  }

  int n() const { return n_; }
  int factor_count() const { return static_cast<int>(factors_.size()); }
  const GroupFactor& factor(int j) const { return factors_[static_cast<std::size_t>(j)]; }
  const std::vector<GroupFactor>& factors() const { return factors_; }

  /// Total random-effects dimension q = sum_j M_j q_j.
  int total_q() const {
    return std::accumulate(factors_.begin(), factors_.end(), 0,
                           [](int acc, const GroupFactor& f) { return acc + f.cols(); });
  }

  /// Structural zeros per row of Z: sum_j (M_j - 1) q_j.
  int structural_zeros_per_row() const {
    return std::accumulate(factors_.begin(), factors_.end(), 0,
                           [](int acc, const GroupFactor& f) { return acc + (f.levels() - 1) * f.q(); });
  }

  std::vector<int> block_dims() const {
    std::vector<int> d;
    d.reserve(factors_.size());
    for (const auto& f : factors_) d.push_back(f.q());
    return d;
  }

 private:
  int n_;
  std::vector<GroupFactor> factors_;
};

/// A complete estimation problem: fixed design, grouped random design, and
/// the response vector. Immutable and shareable across threads.
class LmmProblem {
 public:
  LmmProblem(FixedDesign fixed, GroupedDesign grouped, Vector y)
      : fixed_(std::move(fixed)), grouped_(std::move(grouped)), y_(std::move(y)) {
    detail::require(fixed_.n() == grouped_.n() && y_.size() == fixed_.n(),
                    "LmmProblem: row counts of X, Z and y must agree");
    detail::require(y_.allFinite(), "LmmProblem: non-finite response");
  }

  int n() const { return fixed_.n(); }
  int p() const { return fixed_.p(); }
  const FixedDesign& fixed() const { return fixed_; }
  const GroupedDesign& grouped() const { return grouped_; }
  const Vector& y() const { return y_; }

  /// Checks that a point has one SPD block per factor with matching dimension.
  void check_theta(const ThetaPoint& theta) const {
    detail::require(static_cast<int>(theta.psi.size()) == grouped_.factor_count(),
                    "theta: block count does not match the design");
    for (int j = 0; j < grouped_.factor_count(); ++j)
      detail::require(theta.psi[static_cast<std::size_t>(j)].dim() == grouped_.factor(j).q(),
                      "theta: block dimension does not match the design");
  }

 private:
  FixedDesign fixed_;
  GroupedDesign grouped_;
  Vector y_;
};

}  // namespace rlmm
