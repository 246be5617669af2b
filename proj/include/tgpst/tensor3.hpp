#ifndef TGPST_TENSOR3_HPP
#define TGPST_TENSOR3_HPP

#include <Eigen/Dense>
#include <string>

#include "tgpst/errors.hpp"

namespace tgpst {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Dense 3-mode tensor of real64, mode-1 fastest:
/// entry (i,j,k) lives at data[i + H*j + H*W*k].
///
/// This layout makes vectorize() consistent with the Kronecker factor
/// order K3 (x) K2 (x) K1 used by the multi-linear kernel.
class Tensor3 {
 public:
  Tensor3() : h_(0), w_(0), c_(0) {}

  Tensor3(Eigen::Index H, Eigen::Index W, Eigen::Index C)
      : h_(H), w_(W), c_(C), data_(Vector::Zero(H * W * C)) {
    if (H <= 0 || W <= 0 || C <= 0)
      throw ShapeError("Tensor3: dimensions must be positive");
  }

  Tensor3(Eigen::Index H, Eigen::Index W, Eigen::Index C, Vector data)
      : h_(H), w_(W), c_(C), data_(std::move(data)) {
    if (H <= 0 || W <= 0 || C <= 0)
      throw ShapeError("Tensor3: dimensions must be positive");
    if (data_.size() != H * W * C)
      throw ShapeError("Tensor3: data length " + std::to_string(data_.size()) +
                       " != H*W*C = " + std::to_string(H * W * C));
  }

  Eigen::Index rows() const { return h_; }
  Eigen::Index cols() const { return w_; }
  Eigen::Index channels() const { return c_; }
  Eigen::Index size() const { return data_.size(); }

  double& operator()(Eigen::Index i, Eigen::Index j, Eigen::Index k) {
    return data_[i + h_ * j + h_ * w_ * k];
  }
  double operator()(Eigen::Index i, Eigen::Index j, Eigen::Index k) const {
    return data_[i + h_ * j + h_ * w_ * k];
  }

  const Vector& data() const { return data_; }
  Vector& data() { return data_; }

  /// Channel k as an H x W matrix view (column-major matches the layout).
  Eigen::Map<const Matrix> channel(Eigen::Index k) const {
    return Eigen::Map<const Matrix>(data_.data() + h_ * w_ * k, h_, w_);
  }
  Eigen::Map<Matrix> channel(Eigen::Index k) {
    return Eigen::Map<Matrix>(data_.data() + h_ * w_ * k, h_, w_);
  }

  bool allFinite() const { return data_.allFinite(); }

  bool sameDims(const Tensor3& o) const {
    return h_ == o.h_ && w_ == o.w_ && c_ == o.c_;
  }

 private:
  Eigen::Index h_, w_, c_;
  Vector data_;
};

/// k-mode product: replaces the mode-k dimension with m.rows().
inline Tensor3 mode_product(const Tensor3& t, const Matrix& m, int mode) {
  const Eigen::Index H = t.rows(), W = t.cols(), C = t.channels();
  switch (mode) {
    case 1: {
      if (m.cols() != H)
        throw ShapeError("mode_product: mode-1 size " + std::to_string(H) +
                         " != matrix cols " + std::to_string(m.cols()));
      // Mode-1 unfolding is just the data viewed as H x (W*C).
      Eigen::Map<const Matrix> unf(t.data().data(), H, W * C);
      Matrix res = m * unf;
      return Tensor3(m.rows(), W, C,
                     Eigen::Map<const Vector>(res.data(), res.size()));
    }
    case 2: {
      if (m.cols() != W)
        throw ShapeError("mode_product: mode-2 size " + std::to_string(W) +
                         " != matrix cols " + std::to_string(m.cols()));
      Tensor3 out(H, m.rows(), C);
      for (Eigen::Index k = 0; k < C; ++k)
        out.channel(k) = t.channel(k) * m.transpose();
      return out;
    }
    case 3: {
      if (m.cols() != C)
        throw ShapeError("mode_product: mode-3 size " + std::to_string(C) +
                         " != matrix cols " + std::to_string(m.cols()));
      // Transposed mode-3 unfolding is the data viewed as (H*W) x C.
      Eigen::Map<const Matrix> unf(t.data().data(), H * W, C);
      Matrix res = unf * m.transpose();
      return Tensor3(H, W, m.rows(),
                     Eigen::Map<const Vector>(res.data(), res.size()));
    }
    default:
      throw ShapeError("mode_product: mode must be 1, 2 or 3");
  }
}

/// Tensor contraction X x1 A x2 B x3 I_C; channel-wise A * X^(c) * B^T.
inline Tensor3 contract(const Tensor3& x, const Matrix& a, const Matrix& b) {
  if (a.cols() != x.rows())
    throw ShapeError("contract: A cols " + std::to_string(a.cols()) +
                     " != tensor height " + std::to_string(x.rows()));
  if (b.cols() != x.cols())
    throw ShapeError("contract: B cols " + std::to_string(b.cols()) +
                     " != tensor width " + std::to_string(x.cols()));
  Tensor3 out(a.rows(), b.rows(), x.channels());
  for (Eigen::Index k = 0; k < x.channels(); ++k)
    out.channel(k) = a * x.channel(k) * b.transpose();
  return out;
}

/// vec(.): mode-1 fastest, mode-3 slowest.
inline Vector vectorize(const Tensor3& t) { return t.data(); }

inline Tensor3 reshape_tensor(const Vector& v, Eigen::Index H, Eigen::Index W,
                              Eigen::Index C) {
  return Tensor3(H, W, C, v);
}

/// Standard Kronecker product.
inline Matrix kron(const Matrix& m1, const Matrix& m2) {
  Matrix out(m1.rows() * m2.rows(), m1.cols() * m2.cols());
  for (Eigen::Index i = 0; i < m1.rows(); ++i)
    for (Eigen::Index j = 0; j < m1.cols(); ++j)
      out.block(i * m2.rows(), j * m2.cols(), m2.rows(), m2.cols()) =
          m1(i, j) * m2;
  return out;
}

inline double inner(const Tensor3& t1, const Tensor3& t2) {
  if (!t1.sameDims(t2)) throw ShapeError("inner: tensor dims differ");
  return t1.data().dot(t2.data());
}

inline double frobenius_norm(const Tensor3& t) { return t.data().norm(); }

/// Horizontal gradient: (i,j) -> m(i,j+1) - m(i,j), last column zero.
inline Matrix horizontal_gradient(const Matrix& m) {
  Matrix g = Matrix::Zero(m.rows(), m.cols());
  if (m.cols() > 1)
    g.leftCols(m.cols() - 1) =
        m.rightCols(m.cols() - 1) - m.leftCols(m.cols() - 1);
  return g;
}

}  // namespace tgpst

#endif  // TGPST_TENSOR3_HPP
