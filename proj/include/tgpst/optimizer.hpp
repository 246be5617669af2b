#ifndef TGPST_OPTIMIZER_HPP
#define TGPST_OPTIMIZER_HPP

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tgpst/gp_model.hpp"
#include "tgpst/tv_prox.hpp"

namespace tgpst {

struct FitConfig {
  double lambda = 0.5;
  Eigen::Index latent_h = 3;
  Eigen::Index latent_w = 3;
  Eigen::Index rank1 = 0, rank2 = 0, rank3 = 0;  // 0 -> default (h, w, C)
  int max_iter = 500;
  double step_init = 1e-2;
  double tol_param = 1e-4;
  double tol_loss = 1e-8;
  std::uint64_t seed = 0;
  bool backtrack = true;
  bool warm_start = true;
  bool baseline_gp = false;  // fix A = I_H, B = I_W, lambda = 0
  // Early stopping: monitor held-out predictive RMSE on this fraction of
  // the data and return the best iterate. 0 disables monitoring.
  double val_fraction = 0.2;
  int patience = 10;

  Eigen::Index r1(Eigen::Index h) const { return rank1 > 0 ? rank1 : h; }
  Eigen::Index r2(Eigen::Index w) const { return rank2 > 0 ? rank2 : w; }
  Eigen::Index r3(Eigen::Index c) const { return rank3 > 0 ? rank3 : c; }

  void validate(Eigen::Index H, Eigen::Index W, Eigen::Index C) const {
    if (lambda < 0) throw ConfigError("FitConfig: lambda must be >= 0");
    if (max_iter < 1) throw ConfigError("FitConfig: max_iter must be >= 1");
    if (step_init <= 0) throw ConfigError("FitConfig: step_init must be > 0");
    if (tol_param <= 0 || tol_loss <= 0)
      throw ConfigError("FitConfig: tolerances must be > 0");
    if (val_fraction < 0 || val_fraction >= 1)
      throw ConfigError("FitConfig: val_fraction must be in [0, 1)");
    if (patience < 1) throw ConfigError("FitConfig: patience must be >= 1");
    const Eigen::Index h = baseline_gp ? H : latent_h;
    const Eigen::Index w = baseline_gp ? W : latent_w;
    if (h < 1 || h > H || w < 1 || w > W)
      throw ConfigError("FitConfig: latent dims out of [1, tensor dims]");
    if (r1(h) > h || r2(w) > w || r3(C) > C)
      throw ConfigError("FitConfig: ranks exceed latent dims");
  }
};

struct FitReport {
  std::vector<double> loss_history;         // penalized loss per iteration
  std::vector<double> param_delta_history;  // relative Frobenius change
  std::vector<double> step_sizes;
  std::vector<double> val_score_history;    // empty when val_fraction == 0
  int iterations_run = 0;
  int best_iteration = 0;              // iterate returned (0 = warm start)
  bool converged = false;
  bool early_stopped = false;          // validation RMSE stopped improving
  bool contraction_collapsed = false;  // |A|_F hit zero after prox
  bool baseline_frozen = false;        // A, B held at identity
};

inline ModelParams rescale(const ModelParams& p) {
  const double c = p.contraction.a.norm();
  if (c == 0.0) return p;
  ModelParams out = p;
  out.contraction.a /= c;
  out.contraction.b *= c;
  return out;
}

inline double penalized_loss(const Dataset& d, const ModelParams& p,
                             double lambda) {
  double loss = neg_log_likelihood(d, p);
  if (lambda > 0)
    loss += lambda * penalty_R(p.contraction.a, p.contraction.b);
  return loss;
}

namespace detail {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols,
                            std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(-0.1, 0.1);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = unif(rng);
  return m;
}

/// <X_i, T x1 A^T x2 B^T> = <Z_i, T> with Z_i = X_i x1 A x2 B.
inline double bilinear_fit_value(const Tensor3& x, const Tensor3& core,
                                 const Matrix& a, const Matrix& b) {
  return inner(contract(x, a, b), core);
}

/// Ridge-damped least squares: argmin |X beta - y|^2 + damp |beta|^2.
/// Uses the dual (n x n) form when there are more columns than rows.
inline Vector ridge_solve(const Matrix& x, const Vector& y, double damp) {
  if (x.rows() < x.cols()) {
    Matrix gram = x * x.transpose();
    gram.diagonal().array() += damp;
    return x.transpose() * gram.ldlt().solve(y);
  }
  Matrix gram = x.transpose() * x;
  gram.diagonal().array() += damp;
  return gram.ldlt().solve(x.transpose() * y);
}

/// Leading r left singular vectors of the mode-m unfolding, transposed to
/// the r x dim layout the kernel factors use.
inline Matrix hosvd_factor(const Tensor3& t, int mode, Eigen::Index r) {
  const Matrix unf = unfold(t, mode);
  Eigen::JacobiSVD<Matrix> svd(unf, Eigen::ComputeThinU);
  return svd.matrixU().leftCols(r).transpose();
}

struct Flattened {
  Vector v;
};

inline Vector flatten_params(const ModelParams& p) {
  Vector v(p.contraction.a.size() + p.contraction.b.size() +
           p.kernels.u1.size() + p.kernels.u2.size() + p.kernels.u3.size() +
           1);
  Eigen::Index off = 0;
  auto put = [&](const Matrix& m) {
    v.segment(off, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
    off += m.size();
  };
  put(p.contraction.a);
  put(p.contraction.b);
  put(p.kernels.u1);
  put(p.kernels.u2);
  put(p.kernels.u3);
  v[off] = p.log_sigma;
  return v;
}

}  // namespace detail

namespace detail {

/// One full ALS pass on min sum_i (y_i - <X_i, T x1 A^T x2 B^T>)^2 with a
/// shared ridge damp. `a` and `b` are updated in place; returns the core.
inline Tensor3 als_sweeps(const Dataset& d, Matrix& a, Matrix& b,
                          Eigen::Index C, double ridge, int sweeps,
                          bool fix_contraction) {
  const Eigen::Index h = a.rows(), H = a.cols(), w = b.rows(), W = b.cols();
  const Eigen::Index n = d.size();
  Tensor3 core(h, w, C);
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    // Core update: y_i ~ <vec(Z_i), vec(T)>.
    Matrix design(n, h * w * C);
    for (Eigen::Index i = 0; i < n; ++i)
      design.row(i) = vectorize(contract(d.tensors[i], a, b)).transpose();
    core = Tensor3(h, w, C, ridge_solve(design, d.labels, ridge));
    if (fix_contraction) break;  // A, B stay as given

    // A update: <Z_i, T> = <A, sum_c T^(c) B X_i^(c)^T>.
    Matrix design_a(n, h * H);
    for (Eigen::Index i = 0; i < n; ++i) {
      Matrix m = Matrix::Zero(h, H);
      for (Eigen::Index c = 0; c < C; ++c)
        m += core.channel(c) * b * d.tensors[i].channel(c).transpose();
      design_a.row(i) = Eigen::Map<const Vector>(m.data(), m.size());
    }
    const Vector va = ridge_solve(design_a, d.labels, ridge);
    a = Eigen::Map<const Matrix>(va.data(), h, H);

    // B update: <Z_i, T> = <B, sum_c T^(c)^T A X_i^(c)>.
    Matrix design_b(n, w * W);
    for (Eigen::Index i = 0; i < n; ++i) {
      Matrix m = Matrix::Zero(w, W);
      for (Eigen::Index c = 0; c < C; ++c)
        m += core.channel(c).transpose() * a * d.tensors[i].channel(c);
      design_b.row(i) = Eigen::Map<const Vector>(m.data(), m.size());
    }
    const Vector vb = ridge_solve(design_b, d.labels, ridge);
    b = Eigen::Map<const Matrix>(vb.data(), w, W);
  }
  return core;
}

/// Held-out predictive RMSE of the GP conditioned on `cond`.
inline double holdout_rmse(const Dataset& cond, const Dataset& held,
                           const ModelParams& p) {
  const Matrix u = build_u_tilde(cond, p);
  const WoodburyFactor f(u, cond.labels, p.sigma());
  const Matrix u_star = build_u_tilde(held.tensors, p);
  const Vector mu = u_star * (u.transpose() * f.alpha());
  return std::sqrt((mu - held.labels).squaredNorm() /
                   static_cast<double>(held.labels.size()));
}

/// Held-out mean standardized log loss under the fitted noise scale. Unlike
/// plain RMSE this also penalizes an over-confident (collapsed) sigma.
inline double holdout_logloss(const Dataset& cond, const Dataset& held,
                              const ModelParams& p) {
  const double r = holdout_rmse(cond, held, p);
  const double s2 = p.sigma() * p.sigma();
  return 0.5 * std::log(2.0 * M_PI * s2) + r * r / (2.0 * s2);
}

/// The HOSVD factors carry the right structure but an arbitrary overall
/// scale; pick the kernel scale that maximizes the marginal likelihood so
/// gradient descent starts from a competitive point.
inline void rescale_kernel_to_likelihood(const Dataset& d, ModelParams& p) {
  const Matrix u = build_u_tilde(d, p);
  double best_ls = 0.0, best_nll = std::numeric_limits<double>::infinity();
  for (double ls = -6.0; ls <= 6.0; ls += 0.125) {
    try {
      const double nll = neg_log_likelihood_factored(
          WoodburyFactor(std::exp(ls) * u, d.labels, p.sigma()), d.labels);
      if (nll < best_nll) {
        best_nll = nll;
        best_ls = ls;
      }
    } catch (const NumericalError&) {
    }
  }
  p.kernels.u3 *= std::exp(best_ls);
}

}  // namespace detail

/// Alternating least squares on the bilinear tensor-regression problem
/// min sum_i (y_i - <X_i, T x1 A^T x2 B^T>)^2, then HOSVD of the fitted
/// core for the kernel factors. The ALS ridge is picked by held-out
/// predictive RMSE of the resulting GP — on `val` when given, otherwise on
/// an internal 75/25 split — so the warm start does not interpolate the
/// training labels; the noise scale is estimated from the same held-out
/// residuals. Falls back to shapes only; callers decide whether to use it
/// via FitConfig::warm_start.
inline ModelParams warm_start(const Dataset& d, const FitConfig& cfg,
                              const Dataset* val = nullptr) {
  d.validate();
  const Eigen::Index H = d.tensors.front().rows();
  const Eigen::Index W = d.tensors.front().cols();
  const Eigen::Index C = d.tensors.front().channels();
  cfg.validate(H, W, C);
  if (d.size() < 2)
    throw ConfigError("warm_start: need at least 2 samples, got " +
                      std::to_string(d.size()));

  const Eigen::Index h = cfg.baseline_gp ? H : cfg.latent_h;
  const Eigen::Index w = cfg.baseline_gp ? W : cfg.latent_w;
  const Eigen::Index r1 = cfg.r1(h), r2 = cfg.r2(w), r3 = cfg.r3(C);
  constexpr int kSweeps = 20;
  constexpr double kRidgeGrid[] = {1e-6, 1e-2, 1.0, 3.0, 1e1, 3e1,
                                   1e2,  3e2,  1e3};

  std::mt19937_64 rng(cfg.seed);
  ModelParams p;
  p.contraction.a = cfg.baseline_gp ? Matrix::Identity(H, H)
                                    : detail::random_matrix(h, H, rng);
  p.contraction.b = cfg.baseline_gp ? Matrix::Identity(W, W)
                                    : detail::random_matrix(w, W, rng);
  p.kernels.u1 = detail::random_matrix(r1, h, rng);
  p.kernels.u2 = detail::random_matrix(r2, w, rng);
  p.kernels.u3 = detail::random_matrix(r3, C, rng);
  p.log_sigma = 0.0;

  if (!cfg.warm_start) return p;

  // Selection split: the caller's validation set when provided, otherwise
  // an internal 75/25 shuffle of d.
  Dataset fit_part, val_part;
  if (val != nullptr && val->size() >= 2) {
    fit_part = d;
    val_part = *val;
  } else if (d.size() >= 8) {
    const Eigen::Index n = d.size();
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    const Eigen::Index n_fit = (3 * n) / 4;
    fit_part.labels.resize(n_fit);
    val_part.labels.resize(n - n_fit);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Tensor3& t = d.tensors[static_cast<std::size_t>(idx[i])];
      const double y = d.labels[idx[i]];
      if (i < n_fit) {
        fit_part.tensors.push_back(t);
        fit_part.labels[i] = y;
      } else {
        val_part.tensors.push_back(t);
        val_part.labels[i - n_fit] = y;
      }
    }
  }

  auto candidate_params = [&](const Dataset& data, double ridge,
                              const Dataset* held, bool refine) {
    ModelParams c = p;
    Matrix a, b;
    Tensor3 core;
    if (cfg.baseline_gp) {
      a = Matrix::Identity(H, H);
      b = Matrix::Identity(W, W);
      core = detail::als_sweeps(data, a, b, C, ridge, 1, true);
    } else {
      // Spectral initialization: Tucker truncation of the coefficient
      // tensor of the full-dimensional ridge fit.
      Matrix ai = Matrix::Identity(H, H), bi = Matrix::Identity(W, W);
      const Tensor3 coef = detail::als_sweeps(data, ai, bi, C, ridge, 1, true);
      a = detail::hosvd_factor(coef, 1, h);
      b = detail::hosvd_factor(coef, 2, w);
      core = refine ? detail::als_sweeps(data, a, b, C, ridge, kSweeps, false)
                    : contract(coef, a, b);
    }
    c.contraction.a = a;
    c.contraction.b = b;
    c.kernels.u1 = detail::hosvd_factor(core, 1, r1);
    c.kernels.u2 = detail::hosvd_factor(core, 2, r2);
    c.kernels.u3 = detail::hosvd_factor(core, 3, r3);
    // Noise estimate from residuals the ALS never saw (falls back to the
    // training residuals when no held-out part exists).
    const Dataset& res_set = (held != nullptr) ? *held : data;
    double sse = 0.0;
    for (Eigen::Index i = 0; i < res_set.size(); ++i) {
      const double fitv =
          detail::bilinear_fit_value(res_set.tensors[i], core, a, b);
      sse += (res_set.labels[i] - fitv) * (res_set.labels[i] - fitv);
    }
    const double sd = std::sqrt(sse / static_cast<double>(res_set.size()));
    c.log_sigma = std::log(std::min(std::max(sd, 1e-3), 1e3));
    detail::rescale_kernel_to_likelihood(data, c);
    return c;
  };

  if (val_part.size() >= 2) {
    double best_score = std::numeric_limits<double>::infinity();
    double best_ridge = kRidgeGrid[0];
    double best_sigma = 1.0;
    ModelParams best_c = p;
    bool found = false;
    for (double cand : kRidgeGrid) {
      try {
        const ModelParams c =
            candidate_params(fit_part, cand, &val_part, false);
        const double score = detail::holdout_logloss(fit_part, val_part, c);
        if (std::isfinite(score) && score < best_score) {
          best_score = score;
          best_ridge = cand;
          best_sigma = c.sigma();
          best_c = c;
          found = true;
        }
      } catch (const NumericalError&) {
      }
    }
    if (!found) {
      p = candidate_params(d, kRidgeGrid[0], nullptr, false);
    } else if (val != nullptr) {
      // The caller keeps monitoring on `val`; train on d only.
      p = std::move(best_c);
    } else {
      // Internal split: refit on all of d, keep the held-out noise scale.
      p = candidate_params(d, best_ridge, nullptr, false);
      p.log_sigma = std::log(best_sigma);
      detail::rescale_kernel_to_likelihood(d, p);
    }
  } else {
    p = candidate_params(d, kRidgeGrid[0], nullptr, false);
  }
  return p;
}

namespace detail {

/// One backtracking block update. `propose` maps a step size to a full
/// candidate parameter set; accepts the first candidate that does not
/// increase the penalized loss. Returns the accepted step (0 if none).
template <typename Propose>
double backtracked_update(const Dataset& d, double lambda, ModelParams& p,
                          double& loss, double step, bool backtrack,
                          Propose&& propose) {
  constexpr int kMaxHalvings = 40;
  double eta = step;
  for (int attempt = 0; attempt <= (backtrack ? kMaxHalvings : 0); ++attempt) {
    ModelParams candidate = propose(eta);
    double new_loss;
    try {
      new_loss = penalized_loss(d, candidate, lambda);
    } catch (const NumericalError&) {
      if (!backtrack) throw;
      eta *= 0.5;
      continue;
    }
    if (!backtrack || new_loss <= loss + 1e-12) {
      p = std::move(candidate);
      loss = new_loss;
      return eta;
    }
    eta *= 0.5;
  }
  return 0.0;  // no descent step found; leave block unchanged
}

}  // namespace detail

/// Algorithm: cycle A -> prox -> B -> prox -> rescale -> U1..U3 -> sigma,
/// each block using the freshest values of the others. When val_fraction
/// is positive, updates run on the remaining samples, held-out predictive
/// RMSE is monitored every iteration and the best iterate is returned.
inline std::pair<ModelParams, FitReport> fit(const Dataset& d_in,
                                             const FitConfig& cfg_in) {
  d_in.validate();
  FitConfig cfg = cfg_in;
  if (cfg.baseline_gp) cfg.lambda = 0.0;
  const Eigen::Index H = d_in.tensors.front().rows();
  const Eigen::Index W = d_in.tensors.front().cols();
  const Eigen::Index C = d_in.tensors.front().channels();
  cfg.validate(H, W, C);

  Dataset d = d_in;
  Dataset val;
  const Eigen::Index n_val =
      static_cast<Eigen::Index>(cfg.val_fraction * static_cast<double>(d_in.size()));
  const bool monitor = n_val >= 2 && d_in.size() - n_val >= 2;
  if (monitor) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(d_in.size()));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::shuffle(idx.begin(), idx.end(), rng);
    d.tensors.clear();
    d.labels.resize(d_in.size() - n_val);
    val.labels.resize(n_val);
    for (Eigen::Index i = 0; i < d_in.size(); ++i) {
      const Tensor3& t = d_in.tensors[static_cast<std::size_t>(idx[i])];
      const double y = d_in.labels[idx[i]];
      if (i < d_in.size() - n_val) {
        d.tensors.push_back(t);
        d.labels[i] = y;
      } else {
        val.tensors.push_back(t);
        val.labels[i - (d_in.size() - n_val)] = y;
      }
    }
  }

  ModelParams p = warm_start(d, cfg, monitor ? &val : nullptr);
  FitReport report;
  report.baseline_frozen = cfg.baseline_gp;

  ModelParams best = p;
  double best_val = monitor ? detail::holdout_logloss(d, val, p)
                            : std::numeric_limits<double>::infinity();
  int since_best = 0;

  double loss = penalized_loss(d, p, cfg.lambda);
  Vector prev_flat = detail::flatten_params(p);
  double step_a = cfg.step_init, step_b = cfg.step_init,
         step_u = cfg.step_init, step_s = cfg.step_init;

  for (int it = 0; it < cfg.max_iter; ++it) {
    const double prev_loss = loss;
    const char* stage = "A";
    try {
      LikelihoodGradients g = likelihood_gradients(d, p);

      if (!cfg.baseline_gp) {
        stage = "A";
        step_a = detail::backtracked_update(
            d, cfg.lambda, p, loss, std::min(2.0 * step_a, cfg.step_init),
            cfg.backtrack, [&](double eta) {
              ModelParams c = p;
              const Matrix half = p.contraction.a - eta * g.a;
              c.contraction.a =
                  prox_tv(half, p.contraction.b, cfg.lambda, eta);
              return c;
            });
        if (step_a == 0.0) step_a = cfg.step_init;

        // B uses the freshest A.
        stage = "B";
        g = likelihood_gradients(d, p);
        step_b = detail::backtracked_update(
            d, cfg.lambda, p, loss, std::min(2.0 * step_b, cfg.step_init),
            cfg.backtrack, [&](double eta) {
              ModelParams c = p;
              const Matrix half = p.contraction.b - eta * g.b;
              c.contraction.b =
                  prox_tv(half, p.contraction.a, cfg.lambda, eta);
              return c;
            });
        if (step_b == 0.0) step_b = cfg.step_init;

        stage = "rescale";
        if (p.contraction.a.norm() == 0.0) {
          report.contraction_collapsed = true;
        } else {
          p = rescale(p);
        }
        g = likelihood_gradients(d, p);
      }

      stage = "U";
      step_u = detail::backtracked_update(
          d, cfg.lambda, p, loss, std::min(2.0 * step_u, cfg.step_init),
          cfg.backtrack, [&](double eta) {
            ModelParams c = p;
            c.kernels.u1 = p.kernels.u1 - eta * g.u1;
            c.kernels.u2 = p.kernels.u2 - eta * g.u2;
            c.kernels.u3 = p.kernels.u3 - eta * g.u3;
            return c;
          });
      if (step_u == 0.0) step_u = cfg.step_init;

      stage = "sigma";
      g = likelihood_gradients(d, p);
      step_s = detail::backtracked_update(
          d, cfg.lambda, p, loss, std::min(2.0 * step_s, cfg.step_init),
          cfg.backtrack, [&](double eta) {
            ModelParams c = p;
            c.log_sigma = p.log_sigma - eta * g.log_sigma;
            return c;
          });
      if (step_s == 0.0) step_s = cfg.step_init;
    } catch (const NumericalError& e) {
      throw NumericalError("fit: non-finite loss at iteration " +
                           std::to_string(it) + ", block " + stage + ": " +
                           e.what());
    }

    report.iterations_run = it + 1;
    report.loss_history.push_back(loss);
    report.step_sizes.push_back(std::min({step_a, step_b, step_u, step_s}));

    const Vector flat = detail::flatten_params(p);
    const double denom = std::max(prev_flat.norm(), 1e-12);
    const double rel_change = (flat - prev_flat).norm() / denom;
    report.param_delta_history.push_back(rel_change);
    prev_flat = flat;

    if (monitor) {
      const double val_score = detail::holdout_logloss(d, val, p);
      report.val_score_history.push_back(val_score);
      if (val_score < best_val) {
        best_val = val_score;
        best = p;
        report.best_iteration = it + 1;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        report.early_stopped = true;
        break;
      }
    }

    const double rel_loss =
        std::abs(prev_loss - loss) / std::max(std::abs(prev_loss), 1.0);
    if (rel_change < cfg.tol_param || rel_loss < cfg.tol_loss) {
      report.converged = true;
      break;
    }
  }
  if (monitor) p = std::move(best);
  return {std::move(p), std::move(report)};
}

}  // namespace tgpst

#endif  // TGPST_OPTIMIZER_HPP
