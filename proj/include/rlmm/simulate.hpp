// Synthetic dataset generation: balanced crossed designs with grouping-factor
// random intercepts and slopes, deterministic per (seed, replication index).
#pragma once

#include <Eigen/Cholesky>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include "rlmm/design.hpp"
#include "rlmm/manifold.hpp"
#include "rlmm/rng.hpp"

namespace rlmm {

struct FactorScenario {
  int levels = 1;   // M_j
  int q = 1;        // per-level dimension
  Matrix psi_true;  // q x q SPD covariance of the level effects
};

/// A simulation design: fixed effects [intercept, standard-normal covariates],
/// K crossed grouping factors with equal (or near-equal) level counts.
struct Scenario {
  int n = 1000;
  Vector beta_true = (Vector(2) << 1.0, 2.0).finished();
  double sigma2_true = 0.1;
  std::vector<FactorScenario> factors;
  int n_datasets = 100;
  std::uint64_t seed = 0;
  /// If set, n is snapped to the nearest multiple of lcm(M_1..M_K) so every
  /// level count is exactly equal; otherwise counts may differ by one.
  bool strict_balance = false;

  int p() const { return static_cast<int>(beta_true.size()); }

  int effective_n() const {
    if (!strict_balance || factors.empty()) return n;
    long long l = 1;
    for (const auto& f : factors) l = std::lcm(l, static_cast<long long>(f.levels));
    long long snapped = (n + l / 2) / l * l;
    if (snapped <= 0) snapped = l;
    return static_cast<int>(snapped);
  }

  void validate() const {
    detail::require(n > p() && p() >= 1, "Scenario: need n > p >= 1");
    detail::require(sigma2_true > 0.0, "Scenario: sigma2 must be positive");
    detail::require(n_datasets >= 1, "Scenario: n_datasets must be positive");
    for (const auto& f : factors) {
      detail::require(f.levels >= 1 && f.q >= 1, "Scenario: factor levels and q must be positive");
      detail::require(f.psi_true.rows() == f.q && f.psi_true.cols() == f.q,
                      "Scenario: psi_true must be q x q");
      SpdPoint check(f.psi_true);  // SPD validation
    }
  }
};

/// Two crossed random intercepts: tau_1 = 1.2, tau_2 = 0.9, M = (15, 10).
inline Scenario scenario_random_intercepts() {
  Scenario s;
  s.factors = {FactorScenario{15, 1, (Matrix(1, 1) << 1.44).finished()},
               FactorScenario{10, 1, (Matrix(1, 1) << 0.81).finished()}};
  return s;
}

/// Random intercept for factor 1, correlated intercept + slope for factor 2:
/// Psi_2 = [[1, 0.1], [0.1, 1]].
inline Scenario scenario_random_slope() {
  Scenario s;
  Matrix psi2(2, 2);
  psi2 << 1.0, 0.1, 0.1, 1.0;
  s.factors = {FactorScenario{15, 1, (Matrix(1, 1) << 1.0).finished()}, FactorScenario{10, 2, psi2}};
  return s;
}

/// Data-generating parameters and realized noise of one dataset.
struct DatasetTruth {
  Vector beta;
  double sigma2 = 1.0;
  std::vector<Matrix> psi;  // absolute covariances
  std::vector<Matrix> b;    // realized level effects, M_j x q_j
  Vector eps;
};

struct SimulatedDataset {
  LmmProblem problem;
  DatasetTruth truth;
};

/// The data-generating point expressed in the optimizer's parameterization:
/// eta = log sigma^2 and Psi_j scaled relative to sigma^2.
inline ThetaPoint truth_theta(const DatasetTruth& truth) {
  std::vector<SpdPoint> psi;
  psi.reserve(truth.psi.size());
  for (const auto& m : truth.psi) psi.push_back(SpdPoint(m / truth.sigma2));
  return ThetaPoint(std::log(truth.sigma2), std::move(psi));
}

/// Generates dataset `replication_index` of a scenario. Deterministic per
/// (scenario.seed, replication_index); replications use independent streams.
/// Draw order: fixed covariates, per-factor level shuffles, per-factor slope
/// covariates, per-factor level effects, residual noise.
inline SimulatedDataset generate_dataset(const Scenario& scenario, int replication_index) {
  scenario.validate();
  const int n = scenario.effective_n();
  const int p = scenario.p();
  if (scenario.strict_balance)
    for (const auto& f : scenario.factors)
      detail::require(n % f.levels == 0, "generate_dataset: n not divisible by M_j under strict balance");

  RandomStream rng(stream_seed(scenario.seed, static_cast<std::uint64_t>(replication_index)));

  Matrix x(n, p);
  x.col(0).setOnes();
  for (int c = 1; c < p; ++c)
    for (int i = 0; i < n; ++i) x(i, c) = rng.normal();

  const int kfac = static_cast<int>(scenario.factors.size());
  std::vector<std::vector<int>> levels(static_cast<std::size_t>(kfac));
  for (int j = 0; j < kfac; ++j) {
    auto& lev = levels[static_cast<std::size_t>(j)];
    lev.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) lev[static_cast<std::size_t>(i)] = i % scenario.factors[static_cast<std::size_t>(j)].levels;
    rng.shuffle(lev);
  }

  std::vector<Matrix> z_rows(static_cast<std::size_t>(kfac));
  for (int j = 0; j < kfac; ++j) {
    const auto& f = scenario.factors[static_cast<std::size_t>(j)];
    Matrix zr = Matrix::Ones(n, f.q);
    for (int c = 1; c < f.q; ++c)
      for (int i = 0; i < n; ++i) zr(i, c) = rng.normal();
    z_rows[static_cast<std::size_t>(j)] = std::move(zr);
  }

  std::vector<Matrix> b(static_cast<std::size_t>(kfac));
  for (int j = 0; j < kfac; ++j) {
    const auto& f = scenario.factors[static_cast<std::size_t>(j)];
    Eigen::LLT<Matrix> llt(f.psi_true);
    Matrix chol = llt.matrixL();
    Matrix bj(f.levels, f.q);
    for (int l = 0; l < f.levels; ++l) {
      Vector z(f.q);
      for (int c = 0; c < f.q; ++c) z(c) = rng.normal();
      bj.row(l) = (chol * z).transpose();
    }
    b[static_cast<std::size_t>(j)] = std::move(bj);
  }

  Vector eps(n);
  const double sigma = std::sqrt(scenario.sigma2_true);
  for (int i = 0; i < n; ++i) eps(i) = sigma * rng.normal();

  Vector y = x * scenario.beta_true + eps;
  for (int j = 0; j < kfac; ++j) {
    const auto& zr = z_rows[static_cast<std::size_t>(j)];
    const auto& bj = b[static_cast<std::size_t>(j)];
    const auto& lev = levels[static_cast<std::size_t>(j)];
    for (int i = 0; i < n; ++i) y(i) += zr.row(i).dot(bj.row(lev[static_cast<std::size_t>(i)]));
  }

  std::vector<GroupFactor> factors;
  factors.reserve(static_cast<std::size_t>(kfac));
  for (int j = 0; j < kfac; ++j)
    factors.emplace_back(scenario.factors[static_cast<std::size_t>(j)].levels,
                         scenario.factors[static_cast<std::size_t>(j)].q,
                         levels[static_cast<std::size_t>(j)], z_rows[static_cast<std::size_t>(j)]);

  DatasetTruth truth;
  truth.beta = scenario.beta_true;
  truth.sigma2 = scenario.sigma2_true;
  for (const auto& f : scenario.factors) truth.psi.push_back(f.psi_true);
  truth.b = std::move(b);
  truth.eps = std::move(eps);

  return SimulatedDataset{LmmProblem(FixedDesign(x), GroupedDesign(n, std::move(factors)), std::move(y)),
                          std::move(truth)};
}

}  // namespace rlmm
