#ifndef TGPST_SIMGEN_HPP
#define TGPST_SIMGEN_HPP

#include <Eigen/Cholesky>
#include <cstdint>
#include <random>
#include <vector>

#include "tgpst/gp_model.hpp"

namespace tgpst {

/// Synthetic study configuration: 25x25x3 tensors contracted to 3x3x3.
struct SimConfig {
  Eigen::Index n = 200;
  std::uint64_t seed = 0;
  double noise_sd = std::sqrt(0.3);   // background pixel sd
  double signal_mean = 4.0;           // elevated mean of the 5x5 block
  static constexpr Eigen::Index kHeight = 25;
  static constexpr Eigen::Index kWidth = 25;
  static constexpr Eigen::Index kChannels = 3;
  static constexpr Eigen::Index kLatent = 3;

  void validate() const {
    if (n < 1) throw ConfigError("SimConfig: n must be >= 1");
    if (noise_sd < 0) throw ConfigError("SimConfig: noise_sd must be >= 0");
  }
};

struct GroundTruth {
  Matrix a_star, b_star;            // 3 x 25 banded block-averaging factors
  Matrix k1_star, k2_star, k3_star; // 3 x 3 kernel factors
  double sigma_star = 0.5;
  std::vector<int> type_labels;     // signal channel per sample, in {1,2,3}

  ModelParams as_params() const {
    ModelParams p;
    p.contraction = {a_star, b_star};
    Eigen::LLT<Matrix> l1(k1_star), l2(k2_star), l3(k3_star);
    p.kernels.u1 = l1.matrixU();
    p.kernels.u2 = l2.matrixU();
    p.kernels.u3 = l3.matrixU();
    p.log_sigma = std::log(sigma_star);
    return p;
  }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stream-split PRNG: one independent stream per (seed, index) pair so
/// per-sample generation stays deterministic regardless of order.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t index) {
  return std::mt19937_64(splitmix64(splitmix64(seed) ^ (index + 1)));
}

}  // namespace detail

/// Fixed ground-truth parameters. A*/B* rows band-average the 5x5 corner,
/// side and middle blocks of the 25-grid (nonzeros 0.2 on columns 1-5,
/// 11-15, 21-25). Channel kernel: channels 1 & 3 near-perfectly correlated,
/// channel 2 anti-correlated with both.
inline GroundTruth true_kernels() {
  GroundTruth gt;
  gt.a_star = Matrix::Zero(3, 25);
  for (int s = 0; s < 3; ++s)
    for (int j = 0; j < 5; ++j) gt.a_star(s, 10 * s + j) = 0.2;
  gt.b_star = gt.a_star;
  gt.k1_star = Matrix::Constant(3, 3, 0.3);
  gt.k1_star.diagonal().setOnes();
  gt.k2_star = gt.k1_star;
  gt.k3_star = Matrix(3, 3);
  gt.k3_star << 2.0, -1.0, 1.9,
               -1.0,  2.0, -1.0,
                1.9, -1.0,  2.0;
  gt.sigma_star = 0.5;
  return gt;
}

/// One 25x25x3 tensor: two i.i.d. background channels and one signal
/// channel carrying a 5x5 elevated-mean block (center for channel 2,
/// a uniformly random corner for channels 1/3).
inline Tensor3 generate_tensor(const SimConfig& cfg, std::mt19937_64& rng,
                               int* type_out) {
  const Eigen::Index H = SimConfig::kHeight, W = SimConfig::kWidth,
                     C = SimConfig::kChannels;
  std::uniform_int_distribution<int> channel_pick(0, 2);
  std::uniform_int_distribution<int> corner_pick(0, 3);
  std::normal_distribution<double> noise(0.0, cfg.noise_sd);

  const int signal_channel = channel_pick(rng);
  Eigen::Index row0, col0;
  if (signal_channel == 1) {
    row0 = 10;  // centered block, rows/cols 11-15 one-based
    col0 = 10;
  } else {
    const int corner = corner_pick(rng);
    row0 = (corner / 2 == 0) ? 0 : H - 5;
    col0 = (corner % 2 == 0) ? 0 : W - 5;
  }

  Tensor3 x(H, W, C);
  for (double& v : x.data()) v = noise(rng);
  for (Eigen::Index j = col0; j < col0 + 5; ++j)
    for (Eigen::Index i = row0; i < row0 + 5; ++i)
      x(i, j, signal_channel) += cfg.signal_mean;
  if (type_out) *type_out = signal_channel + 1;
  return x;
}

inline std::vector<Tensor3> generate_tensors(const SimConfig& cfg,
                                             std::vector<int>* types) {
  std::vector<Tensor3> out;
  out.reserve(cfg.n);
  if (types) types->resize(cfg.n);
  for (Eigen::Index i = 0; i < cfg.n; ++i) {
    auto rng = detail::stream_rng(cfg.seed, static_cast<std::uint64_t>(i));
    int type = 0;
    out.push_back(generate_tensor(cfg, rng, &type));
    if (types) (*types)[i] = type;
  }
  return out;
}

/// y ~ N(0, K* + sigma*^2 I), drawn exactly through the low-rank factor:
/// y = U~* z + sigma* eps with z ~ N(0, I_R), eps ~ N(0, I_N).
inline Vector sample_labels(const std::vector<Tensor3>& tensors,
                            const GroundTruth& gt, std::uint64_t seed) {
  const ModelParams p = gt.as_params();
  const Matrix u = build_u_tilde(tensors, p);
  auto rng = detail::stream_rng(seed, 0xffffffffULL);  // dedicated stream
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector z(u.cols());
  for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = gauss(rng);
  Vector y = u * z;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    y[i] += gt.sigma_star * gauss(rng);
  return y;
}

inline std::pair<Dataset, GroundTruth> generate(const SimConfig& cfg) {
  cfg.validate();
  GroundTruth gt = true_kernels();
  Dataset d;
  d.tensors = generate_tensors(cfg, &gt.type_labels);
  d.labels = sample_labels(d.tensors, gt, cfg.seed);
  return {std::move(d), std::move(gt)};
}

}  // namespace tgpst

#endif  // TGPST_SIMGEN_HPP
