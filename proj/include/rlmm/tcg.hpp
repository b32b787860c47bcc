// Steihaug-Toint truncated conjugate gradients for the trust-region
// subproblem min_s <g,s> + <H[s],s>/2 subject to <s,s> <= Delta^2, carried out
// in the tangent space under the Riemannian metric, without preconditioning.
#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>

namespace rlmm {

struct TcgParams {
  int max_inner = 0;       // hard cap on inner iterations
  double kappa = 0.1;      // linear residual factor
  double theta_exp = 1.0;  // superlinear residual exponent
};

template <class Tangent>
struct TcgResult {
  Tangent step;
  int inner_iters = 0;
  bool boundary_hit = false;
};

/// Solves the subproblem. Terminates on negative curvature (step to the
/// boundary), boundary crossing (clip to the boundary), the residual rule
/// ||r_k|| <= ||r_0|| min(kappa, ||r_0||^theta_exp), or the iteration cap.
/// `hess` maps a tangent to a tangent; `inner` is the Riemannian metric at
/// the current point.
template <class Tangent, class HessOp, class InnerProduct>
TcgResult<Tangent> tcg_subsolve(const Tangent& grad, HessOp&& hess, InnerProduct&& inner, double delta,
                                const TcgParams& params) {
  if (delta <= 0.0) throw std::invalid_argument("tcg_subsolve: delta must be positive");

  Tangent s = grad * 0.0;
  Tangent r = grad;
  double rr = inner(r, r);
  const double r0_norm = std::sqrt(rr);
  if (r0_norm == 0.0) return {std::move(s), 0, false};
  const double target = r0_norm * std::min(params.kappa, std::pow(r0_norm, params.theta_exp));

  Tangent d = -grad;
  double ss = 0.0;
  double sd = 0.0;

  const auto boundary_step = [&](double dd) {
    // largest tau with ||s + tau d|| = delta
    const double disc = sd * sd + dd * (delta * delta - ss);
    return (-sd + std::sqrt(std::max(disc, 0.0))) / dd;
  };

  TcgResult<Tangent> out{std::move(s), 0, false};
  for (int k = 0; k < params.max_inner; ++k) {
    Tangent hd = hess(d);
    const double dd = inner(d, d);
    const double d_hd = inner(d, hd);
    if (d_hd <= 0.0) {
      const double tau = boundary_step(dd);
      out.step = out.step + d * tau;
      out.boundary_hit = true;
      return out;
    }
    const double alpha = rr / d_hd;
    const double ss_new = ss + 2.0 * alpha * sd + alpha * alpha * dd;
    if (ss_new >= delta * delta) {
      const double tau = boundary_step(dd);
      out.step = out.step + d * tau;
      out.boundary_hit = true;
      return out;
    }
    out.step = out.step + d * alpha;
    r = r + hd * alpha;
    out.inner_iters = k + 1;
    const double rr_new = inner(r, r);
    sd = sd + alpha * dd;  // <s, d> after the s update (d unchanged yet)
    ss = ss_new;
    if (std::sqrt(rr_new) <= target) return out;
    const double beta = rr_new / rr;
    rr = rr_new;
    d = -r + d * beta;
    sd = beta * sd;  // <s, d_new> = beta <s, d> since <s, r_new> = 0 in exact CG
  }
  return out;
}

}  // namespace rlmm
