// REML objective for linear mixed models over R x prod_j P^{q_j}:
//
//   L_R(theta) = (n-p) eta + log det H + log det(X^T H^-1 X) + y^T P(H) y / exp(eta),
//   H = I + sum_j Z^(j) G_j Z^(j)T,   P(H) = H^-1 - H^-1 X (X^T H^-1 X)^-1 X^T H^-1,
//
// together with its Riemannian gradient and Hessian-vector product. All n x n
// operators (P(H), the Hessian kernels) are evaluated only through their
// actions on vectors and on the tall products H^-1 Z^(j); per-level q_j x q_j
// blocks are folded along the block diagonal, so nothing of size n x n is ever
// materialized.
#pragma once

#include <Eigen/Cholesky>

#include <cmath>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "rlmm/design.hpp"
#include "rlmm/manifold.hpp"
#include "rlmm/sparse_h.hpp"

namespace rlmm {

namespace detail {

/// Sum of the M diagonal q x q blocks of a (Mq) x (Mq) matrix.
inline Matrix block_diag_sum(const Matrix& t, int q) {
  Matrix s = Matrix::Zero(q, q);
  for (Eigen::Index off = 0; off + q <= t.rows(); off += q) s += t.block(off, off, q, q);
  return s;
}

/// y <- blockdiag(xi) u for a (Mq)-vector u.
inline Vector block_diag_apply(const Matrix& xi, const Vector& u) {
  const int q = static_cast<int>(xi.rows());
  Vector out(u.size());
  for (Eigen::Index off = 0; off < u.size(); off += q) out.segment(off, q).noalias() = xi * u.segment(off, q);
  return out;
}

}  // namespace detail

/// Per-iterate cache: the factorized H and every projected quantity the
/// objective, gradient and Hessian-vector product need at one point theta.
/// Single-owner mutable scratch; use one per concurrent solver run.
class ObjectiveWorkspace {
 public:
  ObjectiveWorkspace(const LmmProblem& problem, std::shared_ptr<const HPattern> pattern)
      : problem_(&problem), hfac_(std::move(pattern)) {
    const GroupedDesign& g = problem.grouped();
    z_dense_.reserve(static_cast<std::size_t>(g.factor_count()));
    for (int j = 0; j < g.factor_count(); ++j)
      z_dense_.push_back(Matrix(g.factor(j).zt().transpose()));
  }

  /// Rebuilds the value-level cache at theta: H and its Cholesky factor,
  /// H^-1 X, A = X^T H^-1 X, v2 = H^-1 y, v1 = X beta_gls, Py and y^T P y.
  double evaluate(const ThetaPoint& theta) {
    problem_->check_theta(theta);
    theta_ = theta;
    has_derivatives_ = false;

    const Matrix& x = problem_->fixed().x();
    const Vector& y = problem_->y();
    const int n = problem_->n();
    const int p = problem_->p();

    hfac_.assemble(theta);
    hinv_x_ = hfac_.solve(x);
    Matrix a = x.transpose() * hinv_x_;
    a_llt_.compute(detail::symmetrized(a));
    if (a_llt_.info() != Eigen::Success)
      throw std::runtime_error("evaluate: X^T H^-1 X is not positive definite (X rank deficiency)");
    logdet_a_ = 2.0 * a_llt_.matrixLLT().diagonal().array().log().sum();

    v2_ = hfac_.solve(y);
    xt_v2_ = x.transpose() * v2_;
    beta_gls_ = a_llt_.solve(xt_v2_);
    v1_ = x * beta_gls_;
    py_ = v2_ - hinv_x_ * beta_gls_;
    yt_py_ = y.dot(v2_) - xt_v2_.dot(beta_gls_);
    if (yt_py_ < -1e-8 * y.squaredNorm())
      throw std::runtime_error("evaluate: y^T P(H) y is negative beyond tolerance");

    value_ = (n - p) * theta.eta + hfac_.logdet() + logdet_a_ + std::exp(-theta.eta) * yt_py_;
    return value_;
  }

  bool evaluated() const { return theta_.has_value(); }
  const ThetaPoint& theta() const { return *theta_; }
  double value() const { return value_; }
  double logdet_h() const { return hfac_.logdet(); }
  double logdet_a() const { return logdet_a_; }
  double yt_py() const { return yt_py_; }
  const HFactorization& h_factorization() const { return hfac_; }
  const Vector& py() const { return py_; }

  /// GLS fixed-effects estimate at the current theta: (X^T H^-1 X)^-1 X^T H^-1 y.
  Vector gls_beta() const { return beta_gls_; }

  /// Riemannian gradient at the evaluated point (Euclidean H-gradient folded
  /// per level, then sandwiched by Psi_j). Cached together with the small
  /// projected matrices the Hessian reuses.
  const ThetaTangent& gradient() {
    ensure_derivatives();
    return *grad_;
  }

  /// Riemannian Hessian-vector product at the evaluated point. Pure
  /// small-matrix algebra on the cached projections; no further solves with H.
  ThetaTangent hess_vec(const ThetaTangent& xi) {
    ensure_derivatives();
    const int kfac = problem_->grouped().factor_count();
    detail::require(static_cast<int>(xi.xi_psi.size()) == kfac, "hess_vec: tangent shape mismatch");
    const double exp_neg_eta = std::exp(-theta_->eta);

    // xu_r = blockdiag(xi_r) u_r and the scalar (Py)^T xi_tilde (Py)
    std::vector<Vector> xu(static_cast<std::size_t>(kfac));
    double quad = 0.0;
    for (int r = 0; r < kfac; ++r) {
      xu[static_cast<std::size_t>(r)] =
          detail::block_diag_apply(xi.xi_psi[static_cast<std::size_t>(r)].mat(), u_[static_cast<std::size_t>(r)]);
      quad += u_[static_cast<std::size_t>(r)].dot(xu[static_cast<std::size_t>(r)]);
    }
    const double zeta_eta = exp_neg_eta * (xi.xi_eta * yt_py_ + quad);

    std::vector<SymTangent> zeta_psi;
    zeta_psi.reserve(static_cast<std::size_t>(kfac));
    for (int j = 0; j < kfac; ++j) {
      const int q = problem_->grouped().factor(j).q();
      const Matrix& psi = theta_->psi[static_cast<std::size_t>(j)].mat();
      const auto ju = static_cast<std::size_t>(j);

      // fold_j(-P xi_tilde P): through the cached projections Z_j^T P Z_r
      Matrix fold = Matrix::Zero(q, q);
      Vector m_j = Vector::Zero(u_[ju].size());
      for (int r = 0; r < kfac; ++r) {
        const auto ru = static_cast<std::size_t>(r);
        const Matrix& pjr = ptilde_[ju][ru];
        const int qr = problem_->grouped().factor(r).q();
        Matrix scaled(pjr.rows(), pjr.cols());
        for (Eigen::Index off = 0; off + qr <= pjr.cols(); off += qr)
          scaled.middleCols(off, qr).noalias() = pjr.middleCols(off, qr) * xi.xi_psi[ru].mat();
        fold -= detail::block_diag_sum(scaled * pjr.transpose(), q);
        m_j.noalias() += pjr * xu[ru];
      }
      // + exp(-eta) fold_j(P xi_tilde Py Py^T + Py Py^T xi_tilde P)
      for (Eigen::Index off = 0; off + q <= m_j.size(); off += q)
        fold += exp_neg_eta * (m_j.segment(off, q) * u_[ju].segment(off, q).transpose() +
                               u_[ju].segment(off, q) * m_j.segment(off, q).transpose());
      // eta-derivative of the folded Euclidean gradient
      fold += xi.xi_eta * exp_neg_eta * u_outer_[ju];

      Matrix zeta = psi * detail::symmetrized(fold) * psi +
                    0.5 * (xi.xi_psi[ju].mat() * s_fold_[ju] * psi + psi * s_fold_[ju] * xi.xi_psi[ju].mat());
      zeta_psi.push_back(SymTangent(zeta));
    }
    return ThetaTangent(zeta_eta, std::move(zeta_psi));
  }

 private:
  void ensure_derivatives() {
    detail::require(evaluated(), "workspace: evaluate() must be called first");
    if (has_derivatives_) return;
    const GroupedDesign& g = problem_->grouped();
    const int kfac = g.factor_count();
    const int n = problem_->n();
    const int p = problem_->p();
    const double exp_neg_eta = std::exp(-theta_->eta);

    c_.resize(static_cast<std::size_t>(kfac));
    d_.resize(static_cast<std::size_t>(kfac));
    u_.resize(static_cast<std::size_t>(kfac));
    u_outer_.resize(static_cast<std::size_t>(kfac));
    s_fold_.resize(static_cast<std::size_t>(kfac));
    ptilde_.assign(static_cast<std::size_t>(kfac), std::vector<Matrix>(static_cast<std::size_t>(kfac)));

    for (int j = 0; j < kfac; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      c_[ju] = hfac_.solve(z_dense_[ju]);               // H^-1 Z_j
      d_[ju].noalias() = g.factor(j).zt() * hinv_x_;    // Z_j^T H^-1 X
      u_[ju].noalias() = g.factor(j).zt() * py_;        // Z_j^T P y
    }
    for (int j = 0; j < kfac; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      for (int r = 0; r < kfac; ++r) {
        const auto ru = static_cast<std::size_t>(r);
        // Z_j^T P Z_r = Z_j^T H^-1 Z_r - (Z_j^T H^-1 X) A^-1 (Z_r^T H^-1 X)^T
        Matrix t = g.factor(j).zt() * c_[ru];
        t.noalias() -= d_[ju] * a_llt_.solve(d_[ru].transpose());
        ptilde_[ju][ru] = std::move(t);
      }
    }

    std::vector<SymTangent> chi_psi;
    chi_psi.reserve(static_cast<std::size_t>(kfac));
    for (int j = 0; j < kfac; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      const int q = g.factor(j).q();
      Matrix uo = Matrix::Zero(q, q);
      for (Eigen::Index off = 0; off + q <= u_[ju].size(); off += q)
        uo += u_[ju].segment(off, q) * u_[ju].segment(off, q).transpose();
      u_outer_[ju] = uo;
      // folded Euclidean H-gradient: fold_j(P) - exp(-eta) fold_j(Py Py^T)
      s_fold_[ju] = detail::symmetrized(detail::block_diag_sum(ptilde_[ju][ju], q) - exp_neg_eta * uo);
      const Matrix& psi = theta_->psi[ju].mat();
      chi_psi.push_back(SymTangent(psi * s_fold_[ju] * psi));
    }
    const double chi_eta = (n - p) - yt_py_ * exp_neg_eta;
    grad_.emplace(chi_eta, std::move(chi_psi));
    has_derivatives_ = true;
  }

  const LmmProblem* problem_;
  HFactorization hfac_;
  std::vector<Matrix> z_dense_;

  std::optional<ThetaPoint> theta_;
  double value_ = 0.0;
  Matrix hinv_x_;
  Eigen::LLT<Matrix> a_llt_;
  double logdet_a_ = 0.0;
  Vector v2_, xt_v2_, beta_gls_, v1_, py_;
  double yt_py_ = 0.0;

  bool has_derivatives_ = false;
  std::vector<Matrix> c_;                  // H^-1 Z_j
  std::vector<Matrix> d_;                  // Z_j^T H^-1 X
  std::vector<Vector> u_;                  // Z_j^T P y
  std::vector<Matrix> u_outer_;            // sum_l u_{jl} u_{jl}^T
  std::vector<std::vector<Matrix>> ptilde_;  // Z_j^T P Z_r
  std::vector<Matrix> s_fold_;             // folded Euclidean H-gradient per factor
  std::optional<ThetaTangent> grad_;
};

/// L_R at theta (convenience wrapper around a throwaway workspace).
inline double reml_value(const LmmProblem& problem, const ThetaPoint& theta,
                         std::shared_ptr<const HPattern> pattern = nullptr) {
  if (!pattern) pattern = std::make_shared<HPattern>(problem.grouped());
  ObjectiveWorkspace ws(problem, std::move(pattern));
  return ws.evaluate(theta);
}

/// Starting point: Psi_j = I and eta = log of the OLS residual variance
/// (floored at 1e-10).
inline ThetaPoint init_theta(const LmmProblem& problem) {
  Vector beta = problem.fixed().x().colPivHouseholderQr().solve(problem.y());
  const double rss = (problem.y() - problem.fixed().x() * beta).squaredNorm();
  const double sigma2 = std::max(rss / problem.n(), 1e-10);
  std::vector<SpdPoint> psi;
  psi.reserve(static_cast<std::size_t>(problem.grouped().factor_count()));
  for (int j = 0; j < problem.grouped().factor_count(); ++j)
    psi.push_back(SpdPoint::identity(problem.grouped().factor(j).q()));
  return ThetaPoint(std::log(sigma2), std::move(psi));
}

/// Optimizer-facing adapter: hands out Evaluation handles that combine the
/// objective derivatives with the product-manifold geometry. Workspaces are
/// pooled and recycled as handles are dropped. Not thread-safe; use one
/// RemlFunction per solver run.
class RemlFunction {
  struct Pool {
    std::vector<std::unique_ptr<ObjectiveWorkspace>> free;
  };

 public:
  using Point = ThetaPoint;
  using Tangent = ThetaTangent;

  explicit RemlFunction(const LmmProblem& problem)
      : problem_(&problem),
        pattern_(std::make_shared<HPattern>(problem.grouped())),
        pool_(std::make_shared<Pool>()) {}

  class Evaluation {
   public:
    double value() const { return ws_->value(); }
    const ThetaPoint& point() const { return ws_->theta(); }
    const ThetaTangent& gradient() const { return ws_->gradient(); }
    ThetaTangent hess_vec(const ThetaTangent& xi) const { return ws_->hess_vec(xi); }
    double inner(const ThetaTangent& a, const ThetaTangent& b) const {
      return product_inner(ws_->theta(), a, b);
    }
    double norm(const ThetaTangent& a) const { return product_norm(ws_->theta(), a); }
    ThetaPoint retract(const ThetaTangent& xi) const { return product_retract(ws_->theta(), xi); }
    ThetaTangent zero_tangent() const { return ThetaTangent::zero_like(ws_->theta()); }
    int tangent_dimension() const { return manifold_dimension(ws_->theta()); }

    /// Direct access for tests and metrics (beta_gls, logdets, ...).
    ObjectiveWorkspace& workspace() const { return *ws_; }

   private:
    friend class RemlFunction;
    struct Recycle {
      std::shared_ptr<Pool> pool;
      void operator()(ObjectiveWorkspace* ws) const {
        if (ws) pool->free.emplace_back(ws);
      }
    };
    std::unique_ptr<ObjectiveWorkspace, Recycle> ws_;
  };

  Evaluation evaluate(const ThetaPoint& theta) const {
    std::unique_ptr<ObjectiveWorkspace> ws;
    if (!pool_->free.empty()) {
      ws = std::move(pool_->free.back());
      pool_->free.pop_back();
    } else {
      ws = std::make_unique<ObjectiveWorkspace>(*problem_, pattern_);
    }
    ws->evaluate(theta);
    Evaluation e;
    e.ws_ = {ws.release(), Evaluation::Recycle{pool_}};
    return e;
  }

  const LmmProblem& problem() const { return *problem_; }
  std::shared_ptr<const HPattern> pattern() const { return pattern_; }

 private:
  const LmmProblem* problem_;
  std::shared_ptr<const HPattern> pattern_;
  std::shared_ptr<Pool> pool_;
};

}  // namespace rlmm
