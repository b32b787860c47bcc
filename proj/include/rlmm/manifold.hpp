// Geometry of the SPD manifold P^d and the product manifold R x prod_j P^{q_j}:
// affine-invariant metric, exponential-map retraction, vector transport, and
// Euclidean-to-Riemannian derivative conversions.
#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rlmm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace detail {

inline Matrix symmetrized(const Matrix& a) { return 0.5 * (a + a.transpose()); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace detail

/// A point on P^d: a symmetric positive definite matrix.
/// Symmetrized on construction; positive definiteness is checked via Cholesky.
class SpdPoint {
 public:
  explicit SpdPoint(const Matrix& m) : mat_(detail::symmetrized(m)) {
    detail::require(m.rows() > 0 && m.rows() == m.cols(), "SpdPoint: matrix must be square with positive dimension");
    detail::require(m.allFinite(), "SpdPoint: non-finite entries");
    Eigen::LLT<Matrix> llt(mat_);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("SpdPoint: matrix is not positive definite");
  }

  static SpdPoint identity(int dim) { return SpdPoint(Matrix::Identity(dim, dim)); }

  int dim() const { return static_cast<int>(mat_.rows()); }
  const Matrix& mat() const { return mat_; }

 private:
  Matrix mat_;
};

/// A tangent vector on P^d: a symmetric matrix (no definiteness requirement).
/// Symmetrized on construction to absorb round-off.
class SymTangent {
 public:
  explicit SymTangent(const Matrix& m) : mat_(detail::symmetrized(m)) {
    detail::require(m.rows() > 0 && m.rows() == m.cols(), "SymTangent: matrix must be square with positive dimension");
  }

  static SymTangent zero(int dim) { return SymTangent(Matrix::Zero(dim, dim)); }

  int dim() const { return static_cast<int>(mat_.rows()); }
  const Matrix& mat() const { return mat_; }

  SymTangent operator+(const SymTangent& o) const { return SymTangent(mat_ + o.mat_); }
  SymTangent operator-(const SymTangent& o) const { return SymTangent(mat_ - o.mat_); }
  SymTangent operator-() const { return SymTangent(-mat_); }
  SymTangent operator*(double s) const { return SymTangent(mat_ * s); }

 private:
  Matrix mat_;
};

inline SymTangent operator*(double s, const SymTangent& t) { return t * s; }

/// A point on the product manifold R x P^{q_1} x ... x P^{q_K}.
/// eta is the log of the residual variance; psi holds the SPD blocks.
struct ThetaPoint {
  double eta = 0.0;
  std::vector<SpdPoint> psi;

  ThetaPoint(double eta_in, std::vector<SpdPoint> psi_in) : eta(eta_in), psi(std::move(psi_in)) {
    detail::require(std::isfinite(eta), "ThetaPoint: eta must be finite");
  }

  std::vector<int> dims() const {
    std::vector<int> d;
    d.reserve(psi.size());
    for (const auto& p : psi) d.push_back(p.dim());
    return d;
  }
};

/// A tangent vector on the product manifold: a scalar plus one symmetric
/// matrix per SPD block.
struct ThetaTangent {
  double xi_eta = 0.0;
  std::vector<SymTangent> xi_psi;

  ThetaTangent(double xi_eta_in, std::vector<SymTangent> xi_psi_in)
      : xi_eta(xi_eta_in), xi_psi(std::move(xi_psi_in)) {}

  static ThetaTangent zero_like(const ThetaPoint& theta) {
    std::vector<SymTangent> parts;
    parts.reserve(theta.psi.size());
    for (const auto& p : theta.psi) parts.push_back(SymTangent::zero(p.dim()));
    return ThetaTangent(0.0, std::move(parts));
  }

  ThetaTangent operator+(const ThetaTangent& o) const {
    check_shape(o);
    std::vector<SymTangent> parts;
    parts.reserve(xi_psi.size());
    for (std::size_t j = 0; j < xi_psi.size(); ++j) parts.push_back(xi_psi[j] + o.xi_psi[j]);
    return ThetaTangent(xi_eta + o.xi_eta, std::move(parts));
  }
  ThetaTangent operator-(const ThetaTangent& o) const { return *this + (o * -1.0); }
  ThetaTangent operator-() const { return *this * -1.0; }
  ThetaTangent operator*(double s) const {
    std::vector<SymTangent> parts;
    parts.reserve(xi_psi.size());
    for (const auto& t : xi_psi) parts.push_back(t * s);
    return ThetaTangent(xi_eta * s, std::move(parts));
  }

  void check_shape(const ThetaTangent& o) const {
    detail::require(xi_psi.size() == o.xi_psi.size(), "ThetaTangent: block count mismatch");
    for (std::size_t j = 0; j < xi_psi.size(); ++j)
      detail::require(xi_psi[j].dim() == o.xi_psi[j].dim(), "ThetaTangent: block dimension mismatch");
  }
};

inline ThetaTangent operator*(double s, const ThetaTangent& t) { return t * s; }

namespace detail {

inline void check_dims(const SpdPoint& sigma, const SymTangent& t, const char* op) {
  require(sigma.dim() == t.dim(), std::string(op) + ": dimension mismatch");
}

inline void check_shapes(const ThetaPoint& theta, const ThetaTangent& xi, const char* op) {
  require(theta.psi.size() == xi.xi_psi.size(), std::string(op) + ": block count mismatch");
  for (std::size_t j = 0; j < theta.psi.size(); ++j)
    require(theta.psi[j].dim() == xi.xi_psi[j].dim(), std::string(op) + ": block dimension mismatch");
}

struct SymEig {
  Vector evals;
  Matrix evecs;
};

inline SymEig sym_eig(const Matrix& s) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(s);
  if (es.info() != Eigen::Success) throw std::runtime_error("symmetric eigendecomposition failed");
  return {es.eigenvalues(), es.eigenvectors()};
}

// exp of a symmetric matrix through its eigendecomposition; exactly symmetric result.
inline Matrix sym_exp(const Matrix& s) {
  if (!s.allFinite()) throw std::runtime_error("sym_exp: non-finite entries in exponential argument");
  SymEig e = sym_eig(s);
  Matrix r = e.evecs * e.evals.array().exp().matrix().asDiagonal() * e.evecs.transpose();
  return symmetrized(r);
}

}  // namespace detail

/// Affine-invariant inner product tr(xi Sigma^{-1} chi Sigma^{-1}).
inline double spd_inner(const SpdPoint& sigma, const SymTangent& xi, const SymTangent& chi) {
  detail::check_dims(sigma, xi, "spd_inner");
  detail::check_dims(sigma, chi, "spd_inner");
  Eigen::LLT<Matrix> llt(sigma.mat());
  if (llt.info() != Eigen::Success) throw std::invalid_argument("spd_inner: point is not positive definite");
  Matrix a = llt.solve(xi.mat());
  Matrix b = llt.solve(chi.mat());
  return (a.array() * b.transpose().array()).sum();
}

/// Exponential-map retraction Sigma exp(Sigma^{-1} xi), evaluated in the
/// symmetrized form Sigma^{1/2} exp(Sigma^{-1/2} xi Sigma^{-1/2}) Sigma^{1/2}
/// so the result is exactly symmetric and positive definite for any xi.
inline SpdPoint spd_retract(const SpdPoint& sigma, const SymTangent& xi) {
  detail::check_dims(sigma, xi, "spd_retract");
  detail::SymEig e = detail::sym_eig(sigma.mat());
  Vector sqrt_ev = e.evals.array().sqrt();
  Matrix half = e.evecs * sqrt_ev.asDiagonal() * e.evecs.transpose();
  Matrix inv_half = e.evecs * sqrt_ev.cwiseInverse().asDiagonal() * e.evecs.transpose();
  Matrix inner = detail::symmetrized(inv_half * xi.mat() * inv_half);
  Matrix r = half * detail::sym_exp(inner) * half;
  return SpdPoint(r);
}

enum class TransportMode { Identity, Full };

/// Vector transport of xi along eta. Identity mode returns xi unchanged
/// (the default for this manifold); Full evaluates
/// Sigma^{1/2} E M E Sigma^{1/2} with E = exp(Sigma^{-1/2} eta Sigma^{-1/2} / 2)
/// and M = Sigma^{-1/2} xi Sigma^{-1/2}.
inline SymTangent spd_transport(const SpdPoint& sigma, const SymTangent& eta, const SymTangent& xi,
                                TransportMode mode = TransportMode::Identity) {
  detail::check_dims(sigma, eta, "spd_transport");
  detail::check_dims(sigma, xi, "spd_transport");
  if (mode == TransportMode::Identity) return xi;
  if (eta.mat().isZero(0.0)) return xi;  // transport at the zero vector is the identity map
  detail::SymEig e = detail::sym_eig(sigma.mat());
  Vector sqrt_ev = e.evals.array().sqrt();
  Matrix half = e.evecs * sqrt_ev.asDiagonal() * e.evecs.transpose();
  Matrix inv_half = e.evecs * sqrt_ev.cwiseInverse().asDiagonal() * e.evecs.transpose();
  Matrix expm = detail::sym_exp(detail::symmetrized(0.5 * inv_half * eta.mat() * inv_half));
  Matrix mid = inv_half * xi.mat() * inv_half;
  Matrix r = half * expm * mid * expm * half;
  if (!r.allFinite()) throw std::runtime_error("spd_transport: non-finite intermediate");
  return SymTangent(r);
}

/// Euclidean gradient to Riemannian gradient under the affine-invariant
/// metric: Sigma (egrad + egrad^T)/2 Sigma.
inline SymTangent spd_egrad_to_rgrad(const SpdPoint& sigma, const Matrix& egrad) {
  detail::require(egrad.rows() == sigma.dim() && egrad.cols() == sigma.dim(),
                  "spd_egrad_to_rgrad: dimension mismatch");
  Matrix sym = detail::symmetrized(egrad);
  return SymTangent(sigma.mat() * sym * sigma.mat());
}

/// Riemannian Hessian from the directional derivative of the gradient field:
/// dgrad - (xi Sigma^{-1} rgrad + rgrad Sigma^{-1} xi)/2.
inline SymTangent spd_rhess(const SpdPoint& sigma, const SymTangent& rgrad, const SymTangent& dgrad,
                            const SymTangent& xi) {
  detail::check_dims(sigma, rgrad, "spd_rhess");
  detail::check_dims(sigma, dgrad, "spd_rhess");
  detail::check_dims(sigma, xi, "spd_rhess");
  Eigen::LLT<Matrix> llt(sigma.mat());
  Matrix sig_inv_rgrad = llt.solve(rgrad.mat());
  Matrix corr = xi.mat() * sig_inv_rgrad + sig_inv_rgrad.transpose() * xi.mat();
  return SymTangent(dgrad.mat() - 0.5 * corr);
}

/// Product-manifold inner product: scalar part plus the affine-invariant
/// metrics of the SPD blocks.
inline double product_inner(const ThetaPoint& theta, const ThetaTangent& xi, const ThetaTangent& chi) {
  detail::check_shapes(theta, xi, "product_inner");
  detail::check_shapes(theta, chi, "product_inner");
  double s = xi.xi_eta * chi.xi_eta;
  for (std::size_t j = 0; j < theta.psi.size(); ++j) s += spd_inner(theta.psi[j], xi.xi_psi[j], chi.xi_psi[j]);
  return s;
}

/// Product retraction: eta moves additively, each SPD block through spd_retract.
inline ThetaPoint product_retract(const ThetaPoint& theta, const ThetaTangent& xi) {
  detail::check_shapes(theta, xi, "product_retract");
  std::vector<SpdPoint> psi;
  psi.reserve(theta.psi.size());
  for (std::size_t j = 0; j < theta.psi.size(); ++j) psi.push_back(spd_retract(theta.psi[j], xi.xi_psi[j]));
  return ThetaPoint(theta.eta + xi.xi_eta, std::move(psi));
}

inline double product_norm(const ThetaPoint& theta, const ThetaTangent& xi) {
  return std::sqrt(product_inner(theta, xi, xi));
}

/// Dimension of the tangent space: 1 + sum_j q_j (q_j + 1) / 2.
inline int manifold_dimension(const ThetaPoint& theta) {
  int d = 1;
  for (const auto& p : theta.psi) d += p.dim() * (p.dim() + 1) / 2;
  return d;
}

}  // namespace rlmm
