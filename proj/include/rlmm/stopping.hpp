// Shared stopping logic and the per-run result record of the solvers.
#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace rlmm {

enum class Termination { MaxIters, RelObjTol, StepLenTol, GradNormTol };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::MaxIters: return "MaxIters";
    case Termination::RelObjTol: return "RelObjTol";
    case Termination::StepLenTol: return "StepLenTol";
    case Termination::GradNormTol: return "GradNormTol";
  }
  return "unknown";
}

struct StoppingConfig {
  int max_iters = 1000;
  double rel_obj_tol = 1e-5;
  double step_len_tol = 1e-7;
  double grad_norm_tol = 1e-3;
};

/// Evaluates the stopping rules after one completed outer iteration.
/// The relative-objective rule only fires when the tentative step was accepted
/// (rejected trust-region steps leave the objective unchanged and must not
/// terminate the run). Priority when several rules fire:
/// GradNormTol > RelObjTol > StepLenTol > MaxIters.
inline std::optional<Termination> check_stopping(double prev_obj, double cur_obj, double step_norm,
                                                 double grad_norm, int iter, const StoppingConfig& cfg,
                                                 bool step_accepted) {
  if (grad_norm < cfg.grad_norm_tol) return Termination::GradNormTol;
  if (step_accepted && std::isfinite(prev_obj)) {
    const double rel = std::abs(prev_obj - cur_obj) / std::max(std::abs(prev_obj), 1e-12);
    if (rel < cfg.rel_obj_tol) return Termination::RelObjTol;
  }
  if (step_norm < cfg.step_len_tol) return Termination::StepLenTol;
  if (iter >= cfg.max_iters) return Termination::MaxIters;
  return std::nullopt;
}

/// Trace of one solver run.
template <class Point>
struct RunResult {
  Point theta_final;
  std::vector<double> objective_trace;
  std::vector<double> grad_norm_trace;
  int iters = 0;
  std::vector<int> inner_iters_trace;  // tCG counts; empty for R-CG
  Termination termination = Termination::MaxIters;
  double wall_time_seconds = 0.0;
};

}  // namespace rlmm
