#ifndef TGPST_TV_PROX_HPP
#define TGPST_TV_PROX_HPP

#include <cmath>

#include "tgpst/tensor3.hpp"

namespace tgpst {

/// Composite weights of the row-wise fused-lasso proximal problem.
struct ProxWeights {
  double tv_weight = 0.0;  // on sum |a_{j+1} - a_j| per row
  double l1_weight = 0.0;  // on the elementwise soft threshold
};

/// Anisotropic TV norm: absolute vertical plus horizontal first differences.
inline double tv_norm_anisotropic(const Matrix& w) {
  double tv = 0.0;
  for (Eigen::Index j = 0; j < w.cols(); ++j)
    for (Eigen::Index i = 0; i + 1 < w.rows(); ++i)
      tv += std::abs(w(i + 1, j) - w(i, j));
  for (Eigen::Index j = 0; j + 1 < w.cols(); ++j)
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      tv += std::abs(w(i, j + 1) - w(i, j));
  return tv;
}

/// R(A,B) = |grad_x B|_1 |A|_1 + |B|_1 |grad_x A|_1, the closed form of the
/// summed TV norms of all rank-1 feature maps alpha_s^T beta_t.
inline double penalty_R(const Matrix& a, const Matrix& b) {
  const double a1 = a.cwiseAbs().sum();
  const double b1 = b.cwiseAbs().sum();
  const double ga1 = horizontal_gradient(a).cwiseAbs().sum();
  const double gb1 = horizontal_gradient(b).cwiseAbs().sum();
  return gb1 * a1 + b1 * ga1;
}

/// Exact minimizer of (1/2)|a - signal|^2 + weight * sum |a_{j+1} - a_j|,
/// computed by Condat's direct non-iterative algorithm.
inline Vector tv1d_denoise(const Vector& signal, double weight) {
  const Eigen::Index n = signal.size();
  if (n <= 1 || weight <= 0.0) return signal;

  const double* x = signal.data();
  Vector out(n);
  double* y = out.data();
  const double lam = weight;

  Eigen::Index k = 0, k0 = 0, km = 0, kp = 0;
  double vmin = x[0] - lam, vmax = x[0] + lam;
  double umin = lam, umax = -lam;

  while (true) {
    if (k == n - 1) {
      if (umin < 0.0) {
        do y[k0++] = vmin; while (k0 <= km);
        k = km = k0;
        vmin = x[k];
        umin = lam;
        umax = x[k] + lam - vmax;
        continue;
      }
      if (umax > 0.0) {
        do y[k0++] = vmax; while (k0 <= kp);
        k = kp = k0;
        vmax = x[k];
        umax = -lam;
        umin = x[k] - lam - vmin;
        continue;
      }
      vmin += umin / static_cast<double>(k - k0 + 1);
      while (k0 <= k) y[k0++] = vmin;
      return out;
    }
    if (x[k + 1] + umin < vmin - lam) {  // segment ends with a downward jump
      do y[k0++] = vmin; while (k0 <= km);
      k = km = kp = k0;
      vmin = x[k];
      vmax = x[k] + 2.0 * lam;
      umin = lam;
      umax = -lam;
    } else if (x[k + 1] + umax > vmax + lam) {  // upward jump
      do y[k0++] = vmax; while (k0 <= kp);
      k = km = kp = k0;
      vmin = x[k] - 2.0 * lam;
      vmax = x[k];
      umin = lam;
      umax = -lam;
    } else {
      ++k;
      umin += x[k] - vmin;
      umax += x[k] - vmax;
      if (umin >= lam) {
        vmin += (umin - lam) / static_cast<double>(k - k0 + 1);
        umin = lam;
        km = k;
      }
      if (umax <= -lam) {
        vmax += (umax + lam) / static_cast<double>(k - k0 + 1);
        umax = -lam;
        kp = k;
      }
    }
  }
}

/// Elementwise sign(x) * max(|x| - t, 0).
inline Matrix soft_threshold(const Matrix& m, double t) {
  return m.unaryExpr([t](double v) {
    const double s = std::abs(v) - t;
    return s > 0.0 ? (v > 0.0 ? s : -s) : 0.0;
  });
}

/// Proximal operator of eta * lambda * R(., partner):
/// row-wise 1-D TV denoising with weight eta*lambda*|partner|_1, then soft
/// thresholding with eta*lambda*|grad_x partner|_1 (Friedman-style fused
/// lasso composition; the TV step solution is preserved by the shrinkage).
inline Matrix prox_tv(const Matrix& candidate, const Matrix& partner,
                      double lambda, double eta) {
  if (lambda < 0.0) throw ConfigError("prox_tv: lambda must be >= 0");
  if (eta <= 0.0) throw ConfigError("prox_tv: eta must be > 0");
  const ProxWeights w{eta * lambda * partner.cwiseAbs().sum(),
                      eta * lambda *
                          horizontal_gradient(partner).cwiseAbs().sum()};
  if (w.tv_weight == 0.0 && w.l1_weight == 0.0) return candidate;
  Matrix out(candidate.rows(), candidate.cols());
  for (Eigen::Index s = 0; s < candidate.rows(); ++s)
    out.row(s) =
        tv1d_denoise(candidate.row(s).transpose(), w.tv_weight).transpose();
  return soft_threshold(out, w.l1_weight);
}

}  // namespace tgpst

#endif  // TGPST_TV_PROX_HPP
