// Riemannian Newton trust-region solver with the truncated-CG subsolver.
#pragma once

#include <chrono>
#include <cmath>
#include <concepts>
#include <limits>
#include <utility>

#include "rlmm/stopping.hpp"
#include "rlmm/tcg.hpp"

namespace rlmm {

/// What the solvers require of an objective: evaluation handles exposing the
/// value, derivatives, and the tangent-space geometry at one point.
template <class F>
concept ManifoldObjective = requires(const F f, const typename F::Point& p, const typename F::Tangent& t) {
  { f.evaluate(p).value() } -> std::convertible_to<double>;
  { f.evaluate(p).gradient() } -> std::convertible_to<typename F::Tangent>;
  { f.evaluate(p).hess_vec(t) } -> std::convertible_to<typename F::Tangent>;
  { f.evaluate(p).inner(t, t) } -> std::convertible_to<double>;
  { f.evaluate(p).retract(t) } -> std::convertible_to<typename F::Point>;
  { f.evaluate(p).zero_tangent() } -> std::convertible_to<typename F::Tangent>;
  { f.evaluate(p).tangent_dimension() } -> std::convertible_to<int>;
};

struct TrustRegionConfig {
  double delta0 = 1.0;
  double delta_max = 16.0;
  double rho_prime = 0.1;  // acceptance threshold, in [0, 1/4)
  double omega1 = 1e-3;
  double omega2 = 0.99;
  double alpha1 = 0.25;
  double alpha2 = 3.5;
  int tcg_max_inner = 0;  // 0: use the tangent-space dimension
  double tcg_kappa = 0.1;
  double tcg_theta = 1.0;
};

/// Radius update of the trust-region iteration: shrink by alpha1 when the
/// model fit is poor, grow (capped) when it is excellent and the step hit the
/// boundary, keep otherwise. A non-finite rho counts as poor fit.
inline double tr_update_radius(double rho, double step_norm, double delta, const TrustRegionConfig& cfg) {
  if (!std::isfinite(rho) || rho < cfg.omega1) return cfg.alpha1 * delta;
  if (rho > cfg.omega2 && std::abs(step_norm - delta) <= 1e-10 * delta)
    return std::min(cfg.alpha2 * delta, cfg.delta_max);
  return delta;
}

inline bool tr_accept_step(double rho, const TrustRegionConfig& cfg) {
  return std::isfinite(rho) && rho > cfg.rho_prime;
}

/// Riemannian Newton trust-region method. Solves the quadratic subproblem
/// with tCG, evaluates rho = (f(theta) - f(R_theta(s))) / (m(0) - m(s)),
/// updates the radius, and accepts iff rho > rho'. The relative-objective
/// stopping rule applies only to accepted steps.
template <ManifoldObjective F>
RunResult<typename F::Point> rntr_solve(const F& f, const typename F::Point& theta0,
                                        const TrustRegionConfig& tr_cfg = {},
                                        const StoppingConfig& stop_cfg = {}) {
  using Tangent = typename F::Tangent;
  const auto t_start = std::chrono::steady_clock::now();

  RunResult<typename F::Point> result{theta0, {}, {}, 0, {}, Termination::MaxIters, 0.0};
  auto cur = f.evaluate(theta0);
  double delta = tr_cfg.delta0;

  TcgParams tcg_params;
  tcg_params.kappa = tr_cfg.tcg_kappa;
  tcg_params.theta_exp = tr_cfg.tcg_theta;
  tcg_params.max_inner = tr_cfg.tcg_max_inner > 0 ? tr_cfg.tcg_max_inner : cur.tangent_dimension();

  Tangent grad = cur.gradient();
  double grad_norm = std::sqrt(cur.inner(grad, grad));
  result.objective_trace.push_back(cur.value());
  result.grad_norm_trace.push_back(grad_norm);
  if (grad_norm < stop_cfg.grad_norm_tol) {
    result.termination = Termination::GradNormTol;
    result.theta_final = cur.point();
    result.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
  }

  for (int iter = 0; iter < stop_cfg.max_iters; ++iter) {
    auto tcg = tcg_subsolve(
        grad, [&](const Tangent& v) { return cur.hess_vec(v); },
        [&](const Tangent& a, const Tangent& b) { return cur.inner(a, b); }, delta, tcg_params);
    const Tangent& s = tcg.step;
    const double step_norm = std::sqrt(cur.inner(s, s));

    Tangent hs = cur.hess_vec(s);
    const double model_decrease = -(cur.inner(grad, s) + 0.5 * cur.inner(hs, s));

    auto trial = f.evaluate(cur.retract(s));
    const double f_prev = cur.value();
    double rho = std::numeric_limits<double>::quiet_NaN();
    if (model_decrease > 1e-14 * std::abs(f_prev))
      rho = (f_prev - trial.value()) / model_decrease;

    delta = tr_update_radius(rho, step_norm, delta, tr_cfg);
    const bool accepted = tr_accept_step(rho, tr_cfg);
    if (accepted) cur = std::move(trial);

    result.iters = iter + 1;
    result.inner_iters_trace.push_back(tcg.inner_iters);
    if (accepted) {
      grad = cur.gradient();
      grad_norm = std::sqrt(cur.inner(grad, grad));
    }
    result.objective_trace.push_back(cur.value());
    result.grad_norm_trace.push_back(grad_norm);

    if (auto term = check_stopping(f_prev, cur.value(), step_norm, grad_norm, iter + 1, stop_cfg, accepted)) {
      result.termination = *term;
      break;
    }
  }

  result.theta_final = cur.point();
  result.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

}  // namespace rlmm
