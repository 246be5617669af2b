#ifndef TGPST_GP_MODEL_HPP
#define TGPST_GP_MODEL_HPP

#include <Eigen/Cholesky>
#include <cmath>
#include <string>
#include <vector>

#include "tgpst/tensor3.hpp"

namespace tgpst {

/// Spatial transformation g(X) = X x1 A x2 B: A is h x H, B is w x W.
struct ContractionFactors {
  Matrix a;
  Matrix b;
};

/// Factors of the multi-linear kernel: K_j = U_j^T U_j.
struct KernelFactors {
  Matrix u1;  // r1 x h
  Matrix u2;  // r2 x w
  Matrix u3;  // r3 x C
};

/// Full trainable state. sigma = exp(log_sigma) keeps the noise scale
/// positive under unconstrained gradient updates.
struct ModelParams {
  ContractionFactors contraction;
  KernelFactors kernels;
  double log_sigma = 0.0;

  double sigma() const { return std::exp(log_sigma); }
  Eigen::Index latent_rows() const { return contraction.a.rows(); }
  Eigen::Index latent_cols() const { return contraction.b.rows(); }
  Eigen::Index rank() const {
    return kernels.u1.rows() * kernels.u2.rows() * kernels.u3.rows();
  }
};

struct Dataset {
  std::vector<Tensor3> tensors;
  Vector labels;

  Eigen::Index size() const { return labels.size(); }

  void validate() const {
    if (labels.size() != static_cast<Eigen::Index>(tensors.size()))
      throw ShapeError("Dataset: " + std::to_string(tensors.size()) +
                       " tensors vs " + std::to_string(labels.size()) +
                       " labels");
    if (tensors.empty()) throw ShapeError("Dataset: empty");
    for (const auto& t : tensors)
      if (!t.sameDims(tensors.front()))
        throw ShapeError("Dataset: tensors have mixed dims");
    if (!labels.allFinite()) throw NumericalError("Dataset: non-finite label");
  }
};

/// k(Z_i, Z_j) = vec(Z_i)^T (K3 (x) K2 (x) K1) vec(Z_j), evaluated through
/// the factored form <Z_i x1 U1 x2 U2 x3 U3, Z_j x1 U1 x2 U2 x3 U3>.
inline double latent_kernel(const Tensor3& z_i, const Tensor3& z_j,
                            const KernelFactors& k) {
  if (!z_i.sameDims(z_j)) throw ShapeError("latent_kernel: dims differ");
  const Tensor3 fi =
      mode_product(mode_product(mode_product(z_i, k.u1, 1), k.u2, 2), k.u3, 3);
  const Tensor3 fj =
      mode_product(mode_product(mode_product(z_j, k.u1, 1), k.u2, 2), k.u3, 3);
  return inner(fi, fj);
}

/// K(X_i, X_j) = k(g(X_i), g(X_j)) with the fitted contraction.
inline double full_kernel(const Tensor3& x_i, const Tensor3& x_j,
                          const ModelParams& p) {
  return latent_kernel(contract(x_i, p.contraction.a, p.contraction.b),
                       contract(x_j, p.contraction.a, p.contraction.b),
                       p.kernels);
}

/// Feature row of one tensor: vec(g(X) x1 U1 x2 U2 x3 U3), length R.
inline Vector feature_row(const Tensor3& x, const ModelParams& p) {
  const Tensor3 z = contract(x, p.contraction.a, p.contraction.b);
  return vectorize(mode_product(
      mode_product(mode_product(z, p.kernels.u1, 1), p.kernels.u2, 2),
      p.kernels.u3, 3));
}

/// N x R matrix with U~ U~^T equal to the pairwise Gram matrix; never
/// materializes any D x D Kronecker product.
inline Matrix build_u_tilde(const std::vector<Tensor3>& tensors,
                            const ModelParams& p) {
  if (tensors.empty()) throw ShapeError("build_u_tilde: no tensors");
  const Eigen::Index n = static_cast<Eigen::Index>(tensors.size());
  Matrix u(n, p.rank());
  for (Eigen::Index i = 0; i < n; ++i)
    u.row(i) = feature_row(tensors[i], p).transpose();
  return u;
}

inline Matrix build_u_tilde(const Dataset& d, const ModelParams& p) {
  return build_u_tilde(d.tensors, p);
}

/// Cholesky of the R x R capacitance Sigma_R = sigma^2 I + U~^T U~, with the
/// derived solves needed by the likelihood, gradients and prediction.
class WoodburyFactor {
 public:
  WoodburyFactor(const Matrix& u_tilde, const Vector& y, double sigma)
      : u_(u_tilde), sigma2_(sigma * sigma) {
    const Eigen::Index r = u_.cols();
    Matrix cap = sigma2_ * Matrix::Identity(r, r) + u_.transpose() * u_;
    llt_.compute(cap);
    if (llt_.info() != Eigen::Success) {
      // Rank-deficient U~ under heavy TV sparsification; jitter and retry.
      cap.diagonal().array() += 1e-10;
      llt_.compute(cap);
      if (llt_.info() != Eigen::Success)
        throw NumericalError("WoodburyFactor: capacitance not PD, sigma^2=" +
                             std::to_string(sigma2_));
    }
    alpha_ = (y - u_ * llt_.solve(u_.transpose() * y)) / sigma2_;
    if (!alpha_.allFinite())
      throw NumericalError("WoodburyFactor: non-finite solve, sigma^2=" +
                           std::to_string(sigma2_));
  }

  const Matrix& u_tilde() const { return u_; }
  double sigma2() const { return sigma2_; }
  /// alpha = (K + sigma^2 I)^{-1} y
  const Vector& alpha() const { return alpha_; }

  double log_det_cov() const {
    const Eigen::Index n = u_.rows(), r = u_.cols();
    const double log_det_cap =
        2.0 * llt_.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return static_cast<double>(n - r) * std::log(sigma2_) + log_det_cap;
  }

  /// tr[(K + sigma^2 I)^{-1}]
  double trace_inv_cov() const {
    const Eigen::Index n = u_.rows(), r = u_.cols();
    const Matrix cap_inv = llt_.solve(Matrix::Identity(r, r));
    return (static_cast<double>(n - r) + sigma2_ * cap_inv.trace()) / sigma2_;
  }

  Matrix capacitance_solve(const Matrix& rhs) const { return llt_.solve(rhs); }

 private:
  Matrix u_;
  double sigma2_;
  Eigen::LLT<Matrix> llt_;
  Vector alpha_;
};

inline double neg_log_likelihood_factored(const WoodburyFactor& f,
                                          const Vector& y) {
  const double n = static_cast<double>(y.size());
  const double value = 0.5 * f.log_det_cov() + 0.5 * y.dot(f.alpha()) +
                       0.5 * n * std::log(2.0 * M_PI);
  if (!std::isfinite(value))
    throw NumericalError("neg_log_likelihood: non-finite value " +
                         std::to_string(value));
  return value;
}

inline double neg_log_likelihood(const Dataset& d, const ModelParams& p) {
  const Matrix u = build_u_tilde(d, p);
  return neg_log_likelihood_factored(WoodburyFactor(u, d.labels, p.sigma()),
                                     d.labels);
}

/// d ell / d U~, using (K + sigma^2 I)^{-1} U~ = U~ Sigma_R^{-1}.
inline Matrix grad_u_tilde(const Matrix& u_tilde, const Vector& y,
                           double sigma) {
  const WoodburyFactor f(u_tilde, y, sigma);
  const Matrix u_cap_inv =
      f.capacitance_solve(u_tilde.transpose()).transpose();  // N x R
  return u_cap_inv - f.alpha() * (f.alpha().transpose() * u_tilde);
}

enum class ParamBlock { A, B, U1, U2, U3, LogSigma };

/// All likelihood gradients at once; fit() consumes these per iteration.
struct LikelihoodGradients {
  Matrix a, b, u1, u2, u3;
  double log_sigma = 0.0;
};

namespace detail {

/// Mode-m unfolding of a tensor whose layout is mode-1 fastest.
inline Matrix unfold(const Tensor3& t, int mode) {
  const Eigen::Index H = t.rows(), W = t.cols(), C = t.channels();
  switch (mode) {
    case 1:
      return Eigen::Map<const Matrix>(t.data().data(), H, W * C);
    case 2: {
      Matrix out(W, H * C);
      for (Eigen::Index k = 0; k < C; ++k)
        out.block(0, k * H, W, H) = t.channel(k).transpose();
      return out;
    }
    case 3:
      return Eigen::Map<const Matrix>(t.data().data(), H * W, C).transpose();
    default:
      throw ShapeError("unfold: bad mode");
  }
}

inline Tensor3 fold_rows_as_tensor(const Vector& row, Eigen::Index r1,
                                   Eigen::Index r2, Eigen::Index r3) {
  return Tensor3(r1, r2, r3, row);
}

}  // namespace detail

/// Analytic gradients of the (unpenalized) negative log-likelihood for all
/// six parameter blocks, via chain rule through U~. Each row i of U~ equals
/// vec(X_i x1 (U1 A) x2 (U2 B) x3 U3), so the block gradients reduce to
/// sums of unfolding products against the reshaped rows of d ell / d U~.
inline LikelihoodGradients likelihood_gradients(const Dataset& d,
                                                const ModelParams& p) {
  const Matrix& a = p.contraction.a;
  const Matrix& b = p.contraction.b;
  const Matrix& u1 = p.kernels.u1;
  const Matrix& u2 = p.kernels.u2;
  const Matrix& u3 = p.kernels.u3;
  const Eigen::Index r1 = u1.rows(), r2 = u2.rows(), r3 = u3.rows();

  const Matrix u_tilde = build_u_tilde(d, p);
  const WoodburyFactor f(u_tilde, d.labels, p.sigma());
  const Matrix g = grad_u_tilde(u_tilde, d.labels, p.sigma());

  const Matrix p1 = u1 * a;  // r1 x H
  const Matrix q2 = u2 * b;  // r2 x W

  LikelihoodGradients out;
  Matrix grad_p1 = Matrix::Zero(r1, a.cols());
  Matrix grad_q2 = Matrix::Zero(r2, b.cols());
  out.u1 = Matrix::Zero(r1, u1.cols());
  out.u2 = Matrix::Zero(r2, u2.cols());
  out.u3 = Matrix::Zero(r3, u3.cols());

  for (Eigen::Index i = 0; i < d.size(); ++i) {
    const Tensor3& x = d.tensors[i];
    const Tensor3 gi = detail::fold_rows_as_tensor(g.row(i).transpose(), r1,
                                                   r2, r3);
    // A block: row_i = (X_i x2 Q2 x3 U3) x1 P1.
    const Tensor3 t1 = mode_product(mode_product(x, q2, 2), u3, 3);
    grad_p1 += detail::unfold(gi, 1) * detail::unfold(t1, 1).transpose();
    // B block: row_i = (X_i x1 P1 x3 U3) x2 Q2.
    const Tensor3 t2 = mode_product(mode_product(x, p1, 1), u3, 3);
    grad_q2 += detail::unfold(gi, 2) * detail::unfold(t2, 2).transpose();

    // U blocks relative to the contracted tensor Z_i.
    const Tensor3 z = contract(x, a, b);
    const Tensor3 y1 = mode_product(mode_product(z, u2, 2), u3, 3);
    out.u1 += detail::unfold(gi, 1) * detail::unfold(y1, 1).transpose();
    const Tensor3 y2 = mode_product(mode_product(z, u1, 1), u3, 3);
    out.u2 += detail::unfold(gi, 2) * detail::unfold(y2, 2).transpose();
    const Tensor3 y3 = mode_product(mode_product(z, u1, 1), u2, 2);
    out.u3 += detail::unfold(gi, 3) * detail::unfold(y3, 3).transpose();
  }
  out.a = u1.transpose() * grad_p1;
  out.b = u2.transpose() * grad_q2;

  // d ell / d sigma^2 = tr[(K+D)^{-1}]/2 - |alpha|^2/2, then chain rule
  // through sigma^2 = exp(2 log_sigma).
  const double d_sigma2 =
      0.5 * f.trace_inv_cov() - 0.5 * f.alpha().squaredNorm();
  out.log_sigma = d_sigma2 * 2.0 * f.sigma2();
  return out;
}

/// Gradient of one named block (matrix blocks; LogSigma comes back 1x1).
inline Matrix grad_block(const Dataset& d, const ModelParams& p,
                         ParamBlock block) {
  const LikelihoodGradients g = likelihood_gradients(d, p);
  switch (block) {
    case ParamBlock::A: return g.a;
    case ParamBlock::B: return g.b;
    case ParamBlock::U1: return g.u1;
    case ParamBlock::U2: return g.u2;
    case ParamBlock::U3: return g.u3;
    case ParamBlock::LogSigma: {
      Matrix m(1, 1);
      m(0, 0) = g.log_sigma;
      return m;
    }
  }
  throw ConfigError("grad_block: unknown block");
}

}  // namespace tgpst

#endif  // TGPST_GP_MODEL_HPP
