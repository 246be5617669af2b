// Acceptance suite: end-to-end checks of the library against independent
// oracles and the synthetic-study quality targets. Prints one [PASS]/[FAIL]
// line per criterion and exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "oracles.hpp"
#include "tgpst/optimizer.hpp"
#include "tgpst/predictor.hpp"
#include "tgpst/simgen.hpp"
#include "tgpst/tv_prox.hpp"

using namespace tgpst;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::cout << (pass ? "[PASS]" : "[FAIL]") << " criterion " << criterion
            << ": " << detail << "\n";
  if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

Matrix random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng,
                  double scale = 1.0, double sparsity = 0.0) {
  std::normal_distribution<double> gauss(0.0, scale);
  std::uniform_real_distribution<double> keep(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i)
      m(i, j) = keep(rng) < sparsity ? 0.0 : gauss(rng);
  return m;
}

Tensor3 random_tensor(Eigen::Index h, Eigen::Index w, Eigen::Index c,
                      std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Tensor3 t(h, w, c);
  for (double& v : t.data()) v = gauss(rng);
  return t;
}

Dataset random_dataset(Eigen::Index n, Eigen::Index H, Eigen::Index W,
                       Eigen::Index C, std::mt19937_64& rng) {
  Dataset d;
  std::normal_distribution<double> gauss(0.0, 1.0);
  d.labels.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d.tensors.push_back(random_tensor(H, W, C, rng));
    d.labels[i] = gauss(rng);
  }
  return d;
}

ModelParams random_params(Eigen::Index H, Eigen::Index W, Eigen::Index C,
                          Eigen::Index h, Eigen::Index w, Eigen::Index r1,
                          Eigen::Index r2, Eigen::Index r3,
                          std::mt19937_64& rng) {
  ModelParams p;
  p.contraction.a = random_mat(h, H, rng, 0.4);
  p.contraction.b = random_mat(w, W, rng, 0.4);
  p.kernels.u1 = random_mat(r1, h, rng, 0.5);
  p.kernels.u2 = random_mat(r2, w, rng, 0.5);
  p.kernels.u3 = random_mat(r3, C, rng, 0.5);
  p.log_sigma = -0.3;
  return p;
}

// 1. Summed TV of the rank-1 feature maps equals the closed-form penalty.
void criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1001);
  std::uniform_int_distribution<int> rows(1, 5), cols(1, 30);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    Matrix a(rows(rng), cols(rng)), b(rows(rng), cols(rng));
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = unif(rng);
    for (Eigen::Index j = 0; j < b.cols(); ++j)
      for (Eigen::Index i = 0; i < b.rows(); ++i) b(i, j) = unif(rng);
    double summed = 0.0;
    for (Eigen::Index s = 0; s < a.rows(); ++s)
      for (Eigen::Index t = 0; t < b.rows(); ++t)
        summed += tv_norm_anisotropic(a.row(s).transpose() * b.row(t));
    worst = std::max(worst, std::abs(summed - penalty_R(a, b)));
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "feature-map TV identity, max |diff| " << worst << " over 100 draws, "
    << secs << " s";
  report(1, worst < 1e-10 && secs < 1.0, d.str());
}

// 2. Factored kernel equals the explicit Kronecker form; feature rows
//    reproduce the pairwise Gram matrix.
void criterion_2() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1002);
  std::uniform_int_distribution<int> dim(2, 8), nn(2, 20), cc(1, 3);
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const Eigen::Index H = dim(rng), W = dim(rng), C = cc(rng);
    const Eigen::Index h = 1 + static_cast<Eigen::Index>(rng() % H);
    const Eigen::Index w = 1 + static_cast<Eigen::Index>(rng() % W);
    const Eigen::Index r1 = 1 + static_cast<Eigen::Index>(rng() % h);
    const Eigen::Index r2 = 1 + static_cast<Eigen::Index>(rng() % w);
    const Eigen::Index r3 = 1 + static_cast<Eigen::Index>(rng() % C);
    const Eigen::Index n = nn(rng);
    const Dataset d = random_dataset(n, H, W, C, rng);
    const ModelParams p = random_params(H, W, C, h, w, r1, r2, r3, rng);

    const Matrix u = build_u_tilde(d, p);
    // Materialized Kronecker form, built once per instance.
    const Matrix k1 = p.kernels.u1.transpose() * p.kernels.u1;
    const Matrix k2 = p.kernels.u2.transpose() * p.kernels.u2;
    const Matrix k3 = p.kernels.u3.transpose() * p.kernels.u3;
    const Matrix big =
        oracles::kron_loop(k3, oracles::kron_loop(k2, k1));
    std::vector<Vector> vz;
    for (const Tensor3& x : d.tensors)
      vz.push_back(vectorize(contract(x, p.contraction.a, p.contraction.b)));
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        const double direct = full_kernel(d.tensors[static_cast<std::size_t>(i)],
                                          d.tensors[static_cast<std::size_t>(j)], p);
        const double quad = vz[static_cast<std::size_t>(i)].dot(
            big * vz[static_cast<std::size_t>(j)]);
        worst = std::max(worst, std::abs(direct - quad));
        worst = std::max(worst, std::abs(u.row(i).dot(u.row(j)) - direct));
      }
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "kernel factorization equivalence, max |diff| " << worst
    << " over 50 instances, " << secs << " s";
  report(2, worst < 1e-8 && secs < 5.0, d.str());
}

// 3. Factored likelihood equals the dense N x N evaluation.
void criterion_3() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1003);
  double worst = 0.0;
  for (const Eigen::Index n : {5, 20}) {
    for (const auto [r1, r2, r3] :
         {std::tuple<Eigen::Index, Eigen::Index, Eigen::Index>{2, 2, 1},
          {2, 2, 3}}) {
      const Dataset d = random_dataset(n, 6, 5, 3, rng);
      const ModelParams p = random_params(6, 5, 3, 3, 3, r1, r2, r3, rng);
      const double fast = neg_log_likelihood(d, p);
      const double slow = oracles::dense_nll(d, p);
      worst = std::max(worst, std::abs(fast - slow) / std::abs(slow));
    }
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "Woodbury likelihood vs dense, max relative diff " << worst
    << " across N in {5,20}, R in {4,12}, " << secs << " s";
  report(3, worst < 1e-8 && secs < 5.0, d.str());
}

// 4. All six analytic gradient blocks match central finite differences.
void criterion_4() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1004);
  double worst = 0.0;
  for (int instance = 0; instance < 2; ++instance) {
    const Dataset d = random_dataset(6, 5, 4, 3, rng);
    const ModelParams p = random_params(5, 4, 3, 3, 2, 2, 2, 2, rng);
    for (const ParamBlock block :
         {ParamBlock::A, ParamBlock::B, ParamBlock::U1, ParamBlock::U2,
          ParamBlock::U3, ParamBlock::LogSigma}) {
      const Matrix analytic = grad_block(d, p, block);
      const Matrix numeric = oracles::fd_gradient(d, p, block, 1e-6);
      for (Eigen::Index i = 0; i < analytic.rows(); ++i)
        for (Eigen::Index j = 0; j < analytic.cols(); ++j) {
          const double denom = std::max(1.0, std::abs(numeric(i, j)));
          worst = std::max(
              worst, std::abs(analytic(i, j) - numeric(i, j)) / denom);
        }
    }
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "analytic vs central-difference gradients (6 blocks), max relative "
       "diff " << worst << ", " << secs << " s";
  report(4, worst < 1e-5 && secs < 30.0, d.str());
}

// 5. Prox objective matches an independent iterative oracle; subgradient
//    optimality per coordinate.
void criterion_5() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1005);
  std::uniform_int_distribution<int> rows(1, 6), cols(2, 10);
  std::uniform_real_distribution<double> lam(0.05, 1.5), eta(1e-3, 0.4);
  double worst_obj = 0.0;
  bool kkt_ok = true;
  for (int rep = 0; rep < 50; ++rep) {
    const Matrix cand = random_mat(rows(rng), cols(rng), rng);
    const Matrix partner = random_mat(rows(rng), cols(rng), rng, 1.0, 0.4);
    const double lambda = lam(rng), step = eta(rng);
    const Matrix fast = prox_tv(cand, partner, lambda, step);
    const double w_tv = step * lambda * partner.cwiseAbs().sum();
    const double w_l1 =
        step * lambda * horizontal_gradient(partner).cwiseAbs().sum();
    const Matrix slow = oracles::fused_prox_matrix(cand, w_tv, w_l1);
    worst_obj = std::max(
        worst_obj,
        std::abs(oracles::fused_objective(fast, cand, w_tv, w_l1) -
                 oracles::fused_objective(slow, cand, w_tv, w_l1)));
    for (Eigen::Index i = 0; i < cand.rows(); ++i)
      kkt_ok = kkt_ok && oracles::fused_kkt_holds(cand.row(i).transpose(),
                                                  fast.row(i).transpose(),
                                                  w_tv, w_l1, 1e-8);
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "prox vs iterative oracle, max objective diff " << worst_obj
    << " over 50 instances, per-coordinate optimality "
    << (kkt_ok ? "holds" : "violated") << ", " << secs << " s";
  report(5, worst_obj < 1e-6 && kkt_ok && secs < 10.0, d.str());
}

// 6. Every backtracked fit has a non-increasing loss history.
void criterion_6() {
  bool ok = true;
  double worst_rise = 0.0;
  for (const std::uint64_t seed : {0ULL, 1ULL, 2ULL}) {
    SimConfig sc;
    sc.n = 40;
    sc.seed = seed;
    const Dataset d = generate(sc).first;
    FitConfig cfg;
    cfg.seed = seed;
    cfg.max_iter = 25;
    cfg.tol_param = 1e-10;
    cfg.baseline_gp = (seed == 2);
    if (cfg.baseline_gp) cfg.rank1 = cfg.rank2 = cfg.rank3 = 3;
    const auto [p, rep] = fit(d, cfg);
    for (std::size_t i = 1; i < rep.loss_history.size(); ++i) {
      const double rise = rep.loss_history[i] - rep.loss_history[i - 1];
      worst_rise = std::max(worst_rise, rise);
      ok = ok && rise <= 1e-8;
    }
  }
  std::ostringstream d;
  d << "monotone loss under backtracking (3 fits incl. baseline), worst "
       "increase " << worst_rise;
  report(6, ok, d.str());
}

struct StudyResult {
  double gpst_rmse = 0.0, gpst_msll = 0.0;
  double base_rmse = 0.0, base_msll = 0.0;
  double secs = 0.0;
};

// Shared study for criteria 7 and 8: 5 seeds, 75/25 split, lambda by
// 5-fold CV over {0.1, 0.5, 1.0}, against the fixed-contraction baseline.
StudyResult run_study() {
  const auto t0 = std::chrono::steady_clock::now();
  StudyResult out;
  const std::vector<std::uint64_t> seeds{42, 1, 2, 3, 4};
  for (const std::uint64_t seed : seeds) {
    SimConfig sc;
    sc.n = 200;
    sc.seed = seed;
    const Dataset full = generate(sc).first;
    Dataset train, test;
    train.tensors.assign(full.tensors.begin(), full.tensors.begin() + 150);
    train.labels = full.labels.head(150);
    test.tensors.assign(full.tensors.begin() + 150, full.tensors.end());
    test.labels = full.labels.tail(50);

    FitConfig cfg;
    cfg.seed = seed;
    cfg.max_iter = 200;

    // 5-fold CV over the lambda grid on the training part.
    const std::vector<double> grid{0.1, 0.5, 1.0};
    double best_lambda = grid.front(), best_cv = 1e300;
    for (const double lambda : grid) {
      double sse = 0.0;
      Eigen::Index count = 0;
      for (int fold = 0; fold < 5; ++fold) {
        Dataset tr, te;
        std::vector<double> trl, tel;
        for (Eigen::Index i = 0; i < train.size(); ++i) {
          if (static_cast<int>(i) % 5 == fold) {
            te.tensors.push_back(train.tensors[static_cast<std::size_t>(i)]);
            tel.push_back(train.labels[i]);
          } else {
            tr.tensors.push_back(train.tensors[static_cast<std::size_t>(i)]);
            trl.push_back(train.labels[i]);
          }
        }
        tr.labels = Eigen::Map<Vector>(trl.data(),
                                       static_cast<Eigen::Index>(trl.size()));
        te.labels = Eigen::Map<Vector>(tel.data(),
                                       static_cast<Eigen::Index>(tel.size()));
        FitConfig c = cfg;
        c.lambda = lambda;
        const auto [p, rep] = fit(tr, c);
        const auto pred = predict(tr, te.tensors, p);
        sse += (pred.mean - te.labels).squaredNorm();
        count += te.labels.size();
      }
      const double cv = std::sqrt(sse / static_cast<double>(count));
      if (cv < best_cv) {
        best_cv = cv;
        best_lambda = lambda;
      }
    }
    cfg.lambda = best_lambda;

    const auto [p, rep] = fit(train, cfg);
    const auto pred = predict(train, test.tensors, p);
    out.gpst_rmse += rmse(test.labels, pred.mean) / seeds.size();
    out.gpst_msll += msll(test.labels, pred.mean, p.sigma()) / seeds.size();

    FitConfig base = cfg;
    base.baseline_gp = true;
    base.lambda = 0.0;
    base.rank1 = base.rank2 = base.rank3 = 3;
    const auto [pb, repb] = fit(train, base);
    const auto predb = predict(train, test.tensors, pb);
    out.base_rmse += rmse(test.labels, predb.mean) / seeds.size();
    out.base_msll += msll(test.labels, predb.mean, pb.sigma()) / seeds.size();
  }
  out.secs = seconds_since(t0);
  return out;
}

void criteria_7_8(const StudyResult& s) {
  {
    std::ostringstream d;
    d << "synthetic study mean test RMSE " << s.gpst_rmse
      << " (target [0.45, 0.75]) vs baseline " << s.base_rmse << ", "
      << s.secs << " s total";
    report(7,
           s.gpst_rmse >= 0.45 && s.gpst_rmse <= 0.75 &&
               s.gpst_rmse < s.base_rmse && s.secs < 900.0,
           d.str());
  }
  {
    std::ostringstream d;
    d << "synthetic study mean test MSLL " << s.gpst_msll
      << " (target [0.6, 1.2]) vs baseline " << s.base_msll;
    report(8,
           s.gpst_msll >= 0.6 && s.gpst_msll <= 1.2 &&
               s.gpst_msll < s.base_msll,
           d.str());
  }
}

// 9. A representative loss history is well fit by a + b / (c + k).
void criterion_9() {
  SimConfig sc;
  sc.n = 60;
  sc.seed = 9;
  const Dataset d = generate(sc).first;
  FitConfig cfg;
  cfg.seed = 9;
  cfg.max_iter = 80;
  cfg.val_fraction = 0.0;  // run the full trajectory
  cfg.tol_param = 1e-12;
  cfg.tol_loss = 1e-15;
  const auto [p, rep] = fit(d, cfg);
  const double r2 = oracles::inverse_iteration_fit_r2(rep.loss_history);
  std::ostringstream msg;
  msg << "loss history (" << rep.loss_history.size()
      << " iterations) fits a + b/(c+k) with R^2 " << r2;
  report(9, r2 > 0.9, msg.str());
}

// 10. Predictive distribution sanity and dense-oracle agreement at N = 15.
void criterion_10() {
  SimConfig sc;
  sc.n = 20;
  sc.seed = 10;
  auto [full, gt] = generate(sc);
  const ModelParams p = gt.as_params();
  Dataset train;
  train.tensors.assign(full.tensors.begin(), full.tensors.begin() + 15);
  train.labels = full.labels.head(15);
  std::vector<Tensor3> test(full.tensors.begin() + 15, full.tensors.end());
  test.emplace_back(SimConfig::kHeight, SimConfig::kWidth,
                    SimConfig::kChannels);  // all-zero tensor

  const PredictiveDistribution fast = predict(train, test, p);
  const oracles::DensePrediction slow =
      oracles::dense_predict(train, test, p);
  const double mean_diff = (fast.mean - slow.mean).lpNorm<Eigen::Infinity>();
  const double cov_diff =
      (fast.covariance - slow.covariance).lpNorm<Eigen::Infinity>();
  const double asym = (fast.covariance - fast.covariance.transpose())
                          .lpNorm<Eigen::Infinity>();
  const double min_eig = oracles::min_eigenvalue(fast.covariance);
  const Eigen::Index z = fast.mean.size() - 1;
  const double zero_mean = std::abs(fast.mean[z]);
  const double zero_var =
      std::abs(fast.covariance(z, z) - p.sigma() * p.sigma());

  std::ostringstream d;
  d << "predictive distribution: dense-oracle diff (mean " << mean_diff
    << ", cov " << cov_diff << "), asymmetry " << asym << ", min eigenvalue "
    << min_eig << ", zero-tensor (|mean| " << zero_mean << ", |var - s^2| "
    << zero_var << ")";
  report(10,
         mean_diff < 1e-8 && cov_diff < 1e-8 && asym == 0.0 &&
             min_eig > -1e-10 && zero_mean < 1e-12 && zero_var < 1e-12,
         d.str());
}

// 11. Exact trivial values of the metrics.
void criterion_11() {
  Vector y(4);
  y << -1.0, 0.5, 2.0, -0.25;
  const bool msll_ok = msll(y, y, 1.0) == 0.5 * std::log(2.0 * M_PI) &&
                       msll(y, y, 2.0) == 0.5 * std::log(2.0 * M_PI * 4.0);

  Vector yt(8), yp(8);
  yt << 1, 1, 1, 1, -1, -1, -1, -1;
  yp << 1, 1, 1, -1, 1, -1, -1, -1;
  const bool tss_ok = tss(yt, yp, 0.0) == 0.5;

  Vector a(3), b(3);
  a << 1.0, 2.0, 3.0;
  b << 2.0, 3.0, 4.0;
  const bool rmse_ok = rmse(a, a) == 0.0 && rmse(a, b) == 1.0;
  const bool r2_ok = r_squared(a, a) == 1.0;

  std::ostringstream d;
  d << "metric trivial values exact (MSLL " << (msll_ok ? "ok" : "off")
    << ", TSS " << (tss_ok ? "ok" : "off") << ", RMSE "
    << (rmse_ok ? "ok" : "off") << ", R^2 " << (r2_ok ? "ok" : "off") << ")";
  report(11, msll_ok && tss_ok && rmse_ok && r2_ok, d.str());
}

// Supplementary: the explained-variation tables reconstruct the
// model-implied signal variance.
void explained_variation_identity() {
  SimConfig sc;
  sc.n = 30;
  sc.seed = 12;
  auto [d, gt] = generate(sc);
  const ModelParams p = gt.as_params();
  const ExplainedVariation ev = explained_variation(d, p);
  double mean_k = 0.0;
  for (const Tensor3& x : d.tensors) mean_k += full_kernel(x, x, p);
  mean_k /= static_cast<double>(d.size());
  const double expected = 100.0 * mean_k / ev.total_variance;
  double channel_sum = 0.0;
  for (Eigen::Index c1 = 0; c1 < ev.per_channel_pair.rows(); ++c1)
    for (Eigen::Index c2 = c1; c2 < ev.per_channel_pair.cols(); ++c2)
      channel_sum += ev.per_channel_pair(c1, c2);
  const double map_sum = ev.per_feature_map_pair.sum();
  const double worst =
      std::max(std::abs(channel_sum - expected), std::abs(map_sum - expected)) /
      std::abs(expected);
  std::ostringstream msg;
  msg << (worst < 1e-8 ? "[PASS]" : "[FAIL]")
      << " explained-variation reconstruction: relative diff " << worst
      << "\n";
  std::cout << msg.str();
  if (worst >= 1e-8) ++g_failures;
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  const StudyResult study = run_study();
  criteria_7_8(study);
  criterion_9();
  criterion_10();
  criterion_11();
  explained_variation_identity();
  std::cout << (g_failures == 0 ? "ALL CRITERIA PASSED"
                                : std::to_string(g_failures) +
                                      " CRITERIA FAILED")
            << " (" << seconds_since(t0) << " s total)\n";
  return g_failures == 0 ? 0 : 1;
}
