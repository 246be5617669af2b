#ifndef TGPST_PREDICTOR_HPP
#define TGPST_PREDICTOR_HPP

#include <cmath>
#include <vector>

#include "tgpst/gp_model.hpp"

namespace tgpst {

struct PredictiveDistribution {
  Vector mean;        // mu*, length N_test
  Matrix covariance;  // Sigma*, includes the noise term
};

struct ExplainedVariation {
  Matrix per_channel_pair;      // C x C, percentages, symmetric
  Matrix per_feature_map_pair;  // (h*w) x (h*w), percentages
  double total_variance = 0.0;  // empirical Var(y) used as denominator
  double noise_variance = 0.0;  // sigma^2
};

/// GP conditional through the Woodbury factorization:
/// mu*    = U~* U~^T alpha
/// Sigma* = sigma^2 (I + U~* Sigma_R^{-1} U~*^T)
inline PredictiveDistribution predict(const Dataset& train,
                                      const std::vector<Tensor3>& test_tensors,
                                      const ModelParams& p) {
  train.validate();
  const Matrix u = build_u_tilde(train, p);
  const WoodburyFactor f(u, train.labels, p.sigma());
  const Matrix u_star = build_u_tilde(test_tensors, p);

  PredictiveDistribution out;
  out.mean = u_star * (u.transpose() * f.alpha());
  Matrix cov = f.sigma2() * (Matrix::Identity(u_star.rows(), u_star.rows()) +
                             u_star *
                                 f.capacitance_solve(u_star.transpose()));
  out.covariance = 0.5 * (cov + cov.transpose());
  if (!out.mean.allFinite() || !out.covariance.allFinite())
    throw NumericalError("predict: non-finite predictive distribution");
  return out;
}

inline double rmse(const Vector& y_true, const Vector& y_pred) {
  if (y_true.size() != y_pred.size() || y_true.size() < 1)
    throw ShapeError("rmse: length mismatch or empty");
  return std::sqrt((y_true - y_pred).squaredNorm() /
                   static_cast<double>(y_true.size()));
}

inline double r_squared(const Vector& y_true, const Vector& y_pred) {
  if (y_true.size() != y_pred.size() || y_true.size() < 1)
    throw ShapeError("r_squared: length mismatch or empty");
  const double mean = y_true.mean();
  const double sst = (y_true.array() - mean).matrix().squaredNorm();
  if (sst <= 0.0)
    throw UndefinedMetricError("r_squared: zero-variance y_true");
  const double sse = (y_true - y_pred).squaredNorm();
  return 1.0 - sse / sst;
}

/// Mean standardized log loss under the single fitted noise scale.
inline double msll(const Vector& y_true, const Vector& mean_pred,
                   double sigma_hat) {
  if (y_true.size() != mean_pred.size() || y_true.size() < 1)
    throw ShapeError("msll: length mismatch or empty");
  if (sigma_hat <= 0.0) throw ConfigError("msll: sigma_hat must be > 0");
  const double s2 = sigma_hat * sigma_hat;
  const double quad =
      (y_true - mean_pred).squaredNorm() / static_cast<double>(y_true.size());
  return 0.5 * std::log(2.0 * M_PI * s2) + quad / (2.0 * s2);
}

/// True Skill Statistic of the threshold classifier y >= threshold.
inline double tss(const Vector& y_true, const Vector& y_pred,
                  double threshold = 0.0) {
  if (y_true.size() != y_pred.size() || y_true.size() < 1)
    throw ShapeError("tss: length mismatch or empty");
  double tp = 0, tn = 0, fp = 0, fn = 0;
  for (Eigen::Index i = 0; i < y_true.size(); ++i) {
    const bool actual = y_true[i] >= threshold;
    const bool pred = y_pred[i] >= threshold;
    if (actual && pred) ++tp;
    else if (actual) ++fn;
    else if (pred) ++fp;
    else ++tn;
  }
  if (tp + fn == 0 || fp + tn == 0)
    throw UndefinedMetricError("tss: y_true contains a single class");
  return tp / (tp + fn) - fp / (fp + tn);
}

/// Plug-in explained-variation decomposition over channel pairs and feature
/// map pairs, averaged over training inputs. Off-diagonal channel entries
/// carry the symmetrized (c1,c2)+(c2,c1) contribution; the sum of diagonal
/// plus upper-triangle entries (plus noise) reconstructs the model-implied
/// Var(y) decomposition.
inline ExplainedVariation explained_variation(const Dataset& train,
                                              const ModelParams& p) {
  train.validate();
  const Matrix k1 = p.kernels.u1.transpose() * p.kernels.u1;
  const Matrix k2 = p.kernels.u2.transpose() * p.kernels.u2;
  const Matrix k3 = p.kernels.u3.transpose() * p.kernels.u3;
  const Eigen::Index h = k1.rows(), w = k2.rows(), C = k3.rows();
  const Eigen::Index n = train.size();

  const double mean_y = train.labels.mean();
  double var_y = (train.labels.array() - mean_y).matrix().squaredNorm() /
                 static_cast<double>(std::max<Eigen::Index>(n - 1, 1));
  if (var_y <= 0.0) var_y = 1.0;  // degenerate labels; keep percentages finite

  const Matrix k21 = kron(k2, k1);  // (h*w) x (h*w), vec order of Z channels
  Matrix channel_raw = Matrix::Zero(C, C);
  Matrix map_raw = Matrix::Zero(h * w, h * w);

  for (Eigen::Index i = 0; i < n; ++i) {
    const Tensor3 z =
        contract(train.tensors[i], p.contraction.a, p.contraction.b);
    Eigen::Map<const Matrix> zmat(z.data().data(), h * w, C);
    // channel pair (c1,c2): vec(Z^(c1))^T (K2 x K1) vec(Z^(c2)) * K3(c1,c2)
    channel_raw += (zmat.transpose() * k21 * zmat).cwiseProduct(k3);
    // feature-map pair: K1(s1,s2) K2(t1,t2) * sum_{c1,c2} Z(..c1) Z(..c2) K3
    map_raw += (zmat * k3 * zmat.transpose()).cwiseProduct(k21);
  }
  channel_raw /= static_cast<double>(n);
  map_raw /= static_cast<double>(n);

  ExplainedVariation out;
  out.total_variance = var_y;
  out.noise_variance = p.sigma() * p.sigma();
  out.per_channel_pair = Matrix(C, C);
  for (Eigen::Index c1 = 0; c1 < C; ++c1)
    for (Eigen::Index c2 = 0; c2 < C; ++c2)
      out.per_channel_pair(c1, c2) =
          100.0 * (c1 == c2 ? channel_raw(c1, c1)
                            : channel_raw(c1, c2) + channel_raw(c2, c1)) /
          var_y;
  out.per_feature_map_pair = 100.0 * map_raw / var_y;
  return out;
}

}  // namespace tgpst

#endif  // TGPST_PREDICTOR_HPP
