// Sparse assembly and Cholesky factorization of H = I + sum_j Z^(j) G_j Z^(j)T.
// The sparsity pattern is fixed by the design, so it is computed once together
// with scatter maps from per-level dense blocks into the CSC value array; each
// iteration only rewrites the numeric values and refactorizes on the frozen
// symbolic analysis.
#pragma once

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <memory>
#include <stdexcept>
#include <vector>

#include "rlmm/design.hpp"

namespace rlmm {

/// Fixed sparsity pattern of H plus scatter maps. Immutable; share one
/// instance per design across workspaces and solver runs.
class HPattern {
 public:
  struct LevelBlock {
    std::vector<int> obs;    // observations of this level, ascending
    Matrix z;                // gathered z-rows, |obs| x q
    std::vector<int> slots;  // slots[a + b*|obs|] -> index into H value array
  };

  explicit HPattern(const GroupedDesign& design) : n_(design.n()) {
    const int n = n_;
    blocks_.resize(static_cast<std::size_t>(design.factor_count()));
    for (int j = 0; j < design.factor_count(); ++j) {
      const GroupFactor& f = design.factor(j);
      auto& factor_blocks = blocks_[static_cast<std::size_t>(j)];
      factor_blocks.resize(static_cast<std::size_t>(f.levels()));
      for (int i = 0; i < n; ++i)
        factor_blocks[static_cast<std::size_t>(f.level_of_obs()[static_cast<std::size_t>(i)])].obs.push_back(i);
      for (int l = 0; l < f.levels(); ++l) {
        auto& blk = factor_blocks[static_cast<std::size_t>(l)];
        const int m = static_cast<int>(blk.obs.size());
        blk.z.resize(m, f.q());
        for (int a = 0; a < m; ++a) blk.z.row(a) = f.z_rows().row(blk.obs[static_cast<std::size_t>(a)]);
      }
    }

    std::vector<Eigen::Triplet<double>> trips;
    std::size_t estimate = static_cast<std::size_t>(n);
    for (const auto& factor_blocks : blocks_)
      for (const auto& blk : factor_blocks) estimate += blk.obs.size() * blk.obs.size();
    trips.reserve(estimate);
    for (int i = 0; i < n; ++i) trips.emplace_back(i, i, 1.0);
    for (const auto& factor_blocks : blocks_)
      for (const auto& blk : factor_blocks)
        for (int b = 0; b < static_cast<int>(blk.obs.size()); ++b)
          for (int a = 0; a < static_cast<int>(blk.obs.size()); ++a)
            trips.emplace_back(blk.obs[static_cast<std::size_t>(a)], blk.obs[static_cast<std::size_t>(b)], 1.0);
    skeleton_.resize(n, n);
    skeleton_.setFromTriplets(trips.begin(), trips.end());
    skeleton_.makeCompressed();

    diag_slots_.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) diag_slots_[static_cast<std::size_t>(i)] = find_slot(i, i);
    for (auto& factor_blocks : blocks_)
      for (auto& blk : factor_blocks) {
        const int m = static_cast<int>(blk.obs.size());
        blk.slots.resize(static_cast<std::size_t>(m) * m);
        for (int b = 0; b < m; ++b)
          for (int a = 0; a < m; ++a)
            blk.slots[static_cast<std::size_t>(a) + static_cast<std::size_t>(b) * m] =
                find_slot(blk.obs[static_cast<std::size_t>(a)], blk.obs[static_cast<std::size_t>(b)]);
      }
  }

  int n() const { return n_; }
  const SparseMatrix& skeleton() const { return skeleton_; }
  const std::vector<int>& diag_slots() const { return diag_slots_; }
  const std::vector<LevelBlock>& factor_blocks(int j) const { return blocks_[static_cast<std::size_t>(j)]; }
  int factor_count() const { return static_cast<int>(blocks_.size()); }

 private:
  int find_slot(int row, int col) const {
    const int* outer = skeleton_.outerIndexPtr();
    const int* inner = skeleton_.innerIndexPtr();
    const int* begin = inner + outer[col];
    const int* end = inner + outer[col + 1];
    const int* it = std::lower_bound(begin, end, row);
    if (it == end || *it != row) throw std::logic_error("HPattern: missing slot");
    return static_cast<int>(it - inner);
  }

  int n_;
  SparseMatrix skeleton_;
  std::vector<int> diag_slots_;
  std::vector<std::vector<LevelBlock>> blocks_;
};

/// Numeric H with its sparse Cholesky factor. The symbolic analysis (AMD
/// fill-reducing ordering) is performed once on the pattern and reused across
/// iterations; assemble() only rewrites values and refactorizes.
class HFactorization {
 public:
  explicit HFactorization(std::shared_ptr<const HPattern> pattern)
      : pattern_(std::move(pattern)), h_(pattern_->skeleton()) {
    ldlt_.analyzePattern(h_);
  }

  void assemble(const ThetaPoint& theta) {
    detail::require(static_cast<int>(theta.psi.size()) == pattern_->factor_count(),
                    "assemble_H: theta block count does not match the design");
    double* vals = h_.valuePtr();
    std::fill(vals, vals + h_.nonZeros(), 0.0);
    for (int slot : pattern_->diag_slots()) vals[slot] += 1.0;
    for (int j = 0; j < pattern_->factor_count(); ++j) {
      const Matrix& psi = theta.psi[static_cast<std::size_t>(j)].mat();
      detail::require(psi.rows() == pattern_->factor_blocks(j).front().z.cols(),
                      "assemble_H: theta block dimension does not match the design");
      for (const auto& blk : pattern_->factor_blocks(j)) {
        const int m = static_cast<int>(blk.obs.size());
        if (m == 0) continue;
        scratch_.noalias() = blk.z * psi * blk.z.transpose();
        for (int b = 0; b < m; ++b)
          for (int a = 0; a < m; ++a)
            vals[blk.slots[static_cast<std::size_t>(a) + static_cast<std::size_t>(b) * m]] += scratch_(a, b);
      }
    }
    ldlt_.factorize(h_);
    if (ldlt_.info() != Eigen::Success)
      throw std::runtime_error("assemble_H: Cholesky factorization of H failed (internal invariant violation)");
    logdet_ = ldlt_.vectorD().array().log().sum();
  }

  const SparseMatrix& matrix() const { return h_; }
  double logdet() const { return logdet_; }

  template <class Rhs>
  auto solve(const Rhs& rhs) const {
    return ldlt_.solve(rhs);
  }

 private:
  std::shared_ptr<const HPattern> pattern_;
  SparseMatrix h_;
  Eigen::SimplicialLDLT<SparseMatrix> ldlt_;
  Matrix scratch_;
  double logdet_ = 0.0;
};

}  // namespace rlmm
