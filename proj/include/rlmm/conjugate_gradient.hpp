// Riemannian nonlinear conjugate gradients with Armijo backtracking and
// identity vector transport (the tangent spaces of R x prod P^q coincide as
// vector spaces, only the metric varies).
#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>

#include "rlmm/stopping.hpp"
#include "rlmm/trust_region.hpp"  // ManifoldObjective

namespace rlmm {

enum class BetaRule { PolakRibierePlus, FletcherReeves, HestenesStiefel };

struct RcgConfig {
  BetaRule beta_rule = BetaRule::PolakRibierePlus;
  double armijo_c1 = 1e-4;
  double backtrack_factor = 0.5;
  int max_backtracks = 25;
  double step_norm_cap = 2.0;  // keeps identity transport sensible
};

/// Riemannian nonlinear CG: d0 = -grad; theta_{t+1} = R(alpha_t d_t);
/// d_{t+1} = -grad_{t+1} + beta_{t+1} d_t. The direction resets to steepest
/// descent whenever it fails to be a descent direction. A line-search failure
/// triggers a steepest-descent restart; a second consecutive failure
/// terminates with StepLenTol.
template <ManifoldObjective F>
RunResult<typename F::Point> rcg_solve(const F& f, const typename F::Point& theta0,
                                       const StoppingConfig& stop_cfg = {}, const RcgConfig& cfg = {}) {
  using Tangent = typename F::Tangent;
  const auto t_start = std::chrono::steady_clock::now();

  RunResult<typename F::Point> result{theta0, {}, {}, 0, {}, Termination::MaxIters, 0.0};
  auto cur = f.evaluate(theta0);
  Tangent grad = cur.gradient();
  double gg = cur.inner(grad, grad);
  Tangent dir = -grad;
  double prev_decrease = std::numeric_limits<double>::quiet_NaN();

  const auto finish = [&](Termination why) {
    result.termination = why;
    result.theta_final = cur.point();
    result.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
  };

  result.objective_trace.push_back(cur.value());
  result.grad_norm_trace.push_back(std::sqrt(gg));
  if (std::sqrt(gg) < stop_cfg.grad_norm_tol) return finish(Termination::GradNormTol);

  for (int iter = 0; iter < stop_cfg.max_iters; ++iter) {
    double gd = cur.inner(grad, dir);
    if (gd >= 0.0) {  // not a descent direction: reset
      dir = -grad;
      gd = -gg;
    }

    bool line_search_ok = false;
    bool restarted = false;
    double f_prev = cur.value();
    std::optional<decltype(f.evaluate(theta0))> accepted_eval;
    double step_norm = 0.0;
    while (true) {
      // Interpolation-style initial step from the previous decrease, bounded
      // so the retracted step stays moderate.
      const double dir_norm = std::sqrt(cur.inner(dir, dir));
      double a;
      if (!restarted && std::isfinite(prev_decrease) && prev_decrease > 0.0)
        a = std::min(1.0, 2.0 * prev_decrease / (-gd));
      else
        a = 1.0 / (1.0 + std::sqrt(gg));
      a = std::min(a, cfg.step_norm_cap / std::max(dir_norm, 1e-300));

      for (int k = 0; k < cfg.max_backtracks; ++k) {
        auto trial = f.evaluate(cur.retract(dir * a));
        if (trial.value() <= f_prev + cfg.armijo_c1 * a * gd) {
          accepted_eval.emplace(std::move(trial));
          step_norm = a * dir_norm;
          line_search_ok = true;
          break;
        }
        a *= cfg.backtrack_factor;
      }
      if (line_search_ok || restarted) break;
      // restart from steepest descent and retry once
      restarted = true;
      dir = -grad;
      gd = -gg;
    }
    if (!line_search_ok) return finish(Termination::StepLenTol);

    auto next = std::move(*accepted_eval);
    Tangent grad_new = next.gradient();
    const double gg_new = next.inner(grad_new, grad_new);

    double beta = 0.0;
    switch (cfg.beta_rule) {
      case BetaRule::PolakRibierePlus:
        beta = std::max(0.0, next.inner(grad_new, grad_new - grad) / gg);
        break;
      case BetaRule::FletcherReeves:
        beta = gg_new / gg;
        break;
      case BetaRule::HestenesStiefel: {
        Tangent yk = grad_new - grad;
        const double denom = next.inner(yk, dir);
        beta = denom != 0.0 ? std::max(0.0, next.inner(grad_new, yk) / denom) : 0.0;
        break;
      }
    }
    dir = -grad_new + dir * beta;
    prev_decrease = f_prev - next.value();

    cur = std::move(next);
    grad = std::move(grad_new);
    gg = gg_new;

    result.iters = iter + 1;
    result.objective_trace.push_back(cur.value());
    result.grad_norm_trace.push_back(std::sqrt(gg));
    if (auto term = check_stopping(f_prev, cur.value(), step_norm, std::sqrt(gg), iter + 1, stop_cfg, true)) {
      return finish(*term);
    }
  }
  return finish(Termination::MaxIters);
}

}  // namespace rlmm
