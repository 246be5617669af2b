#ifndef TGPST_IO_HPP
#define TGPST_IO_HPP

#include <array>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "tgpst/gp_model.hpp"

namespace tgpst {
namespace io {

inline constexpr std::array<char, 8> kTensorMagic = {'T', 'G', 'P', 'S',
                                                     'T', '\0', 'v', '1'};
inline constexpr std::uint8_t kDtypeReal64LE = 1;
inline constexpr const char* kModelFormatVersion = "tgpst-model-v1";

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  std::array<unsigned char, 4> b{static_cast<unsigned char>(v),
                                 static_cast<unsigned char>(v >> 8),
                                 static_cast<unsigned char>(v >> 16),
                                 static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b.data()), 4);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& what,
                             std::streamoff offset) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4))
    throw IoError("truncated " + what + " at byte offset " +
                  std::to_string(offset));
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

// Doubles are written as little-endian IEEE-754 bit patterns.
inline void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  std::array<unsigned char, 8> b{};
  for (int i = 0; i < 8; ++i)
    b[static_cast<std::size_t>(i)] =
        static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(b.data()), 8);
}

inline double get_f64(std::istream& is) {
  std::array<unsigned char, 8> b{};
  is.read(reinterpret_cast<char*>(b.data()), 8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<std::uint64_t>(b[static_cast<std::size_t>(i)])
            << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

/// Lossless decimal rendering of a double (round-trips exactly).
inline std::string f64_to_string(double v) {
  std::ostringstream ss;
  ss.precision(std::numeric_limits<double>::max_digits10);
  ss << v;
  return ss.str();
}

}  // namespace detail

inline void write_tensors(const std::string& path,
                          const std::vector<Tensor3>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kTensorMagic.data(), kTensorMagic.size());
  os.put(static_cast<char>(kDtypeReal64LE));
  const std::uint32_t n = static_cast<std::uint32_t>(tensors.size());
  std::uint32_t h = 0, w = 0, c = 0;
  if (n > 0) {
    h = static_cast<std::uint32_t>(tensors.front().rows());
    w = static_cast<std::uint32_t>(tensors.front().cols());
    c = static_cast<std::uint32_t>(tensors.front().channels());
  }
  detail::put_u32(os, n);
  detail::put_u32(os, h);
  detail::put_u32(os, w);
  detail::put_u32(os, c);
  for (const auto& t : tensors) {
    if (static_cast<std::uint32_t>(t.rows()) != h ||
        static_cast<std::uint32_t>(t.cols()) != w ||
        static_cast<std::uint32_t>(t.channels()) != c)
      throw IoError("write_tensors: mixed tensor dims");
    for (Eigen::Index i = 0; i < t.size(); ++i)
      detail::put_f64(os, t.data()[i]);
  }
  if (!os) throw IoError("write failed: " + path);
}

inline std::vector<Tensor3> read_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw IoError("cannot open for reading: " + path);
  const std::streamoff file_size = is.tellg();
  is.seekg(0);

  std::array<char, 8> magic{};
  if (!is.read(magic.data(), 8) || magic != kTensorMagic)
    throw IoError("bad magic in " + path + " at byte offset 0");
  const int dtype = is.get();
  if (dtype != kDtypeReal64LE)
    throw IoError("unsupported dtype code " + std::to_string(dtype) + " in " +
                  path + " at byte offset 8");
  const std::uint32_t n = detail::get_u32(is, "header", 9);
  const std::uint32_t h = detail::get_u32(is, "header", 13);
  const std::uint32_t w = detail::get_u32(is, "header", 17);
  const std::uint32_t c = detail::get_u32(is, "header", 21);
  if (n == 0) return {};
  if (h == 0 || w == 0 || c == 0)
    throw IoError("zero dimension in header of " + path);

  // Bounds check against the actual file size before allocating.
  const std::uint64_t per_tensor =
      static_cast<std::uint64_t>(h) * w * c;
  const std::uint64_t payload_bytes = 8ULL * per_tensor * n;
  if (per_tensor > (1ULL << 40) ||
      payload_bytes != static_cast<std::uint64_t>(file_size) - 25)
    throw IoError("payload length mismatch in " + path + ": header implies " +
                  std::to_string(payload_bytes) + " bytes after offset 25, file has " +
                  std::to_string(file_size - 25));

  std::vector<Tensor3> out;
  out.reserve(n);
  for (std::uint32_t t = 0; t < n; ++t) {
    Tensor3 tensor(h, w, c);
    for (Eigen::Index i = 0; i < tensor.size(); ++i)
      tensor.data()[i] = detail::get_f64(is);
    if (!tensor.allFinite())
      throw IoError("non-finite tensor entry in " + path + ", tensor " +
                    std::to_string(t));
    out.push_back(std::move(tensor));
  }
  return out;
}

inline void write_labels(const std::string& path, const Vector& labels) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  for (Eigen::Index i = 0; i < labels.size(); ++i)
    os << detail::f64_to_string(labels[i]) << '\n';
  if (!os) throw IoError("write failed: " + path);
}

inline Vector read_labels(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open for reading: " + path);
  std::vector<double> values;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::size_t pos = 0;
    double v;
    try {
      v = std::stod(line, &pos);
    } catch (const std::exception&) {
      throw IoError("parse error in " + path + " at line " +
                    std::to_string(line_no) + ": '" + line + "'");
    }
    while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
    if (pos != line.size())
      throw IoError("parse error in " + path + " at line " +
                    std::to_string(line_no) + ": '" + line + "'");
    values.push_back(v);
  }
  return Eigen::Map<const Vector>(values.data(),
                                  static_cast<Eigen::Index>(values.size()));
}

namespace detail {

inline void write_matrix(std::ostream& os, const std::string& name,
                         const Matrix& m) {
  os << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      os << (j ? " " : "") << f64_to_string(m(i, j));
    os << '\n';
  }
}

inline Matrix read_matrix(std::istream& is, const std::string& expect) {
  std::string name;
  Eigen::Index rows, cols;
  if (!(is >> name >> rows >> cols) || name != expect)
    throw IoError("model file: expected matrix '" + expect + "', found '" +
                  name + "'");
  if (rows < 1 || cols < 1)
    throw IoError("model file: bad shape for " + expect);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      if (!(is >> m(i, j)))
        throw IoError("model file: truncated matrix " + expect);
  return m;
}

}  // namespace detail

/// Human-readable model document; full-precision decimals round-trip the
/// real64 values exactly.
inline void write_model(const std::string& path, const ModelParams& p,
                        const std::string& config_echo = "") {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "format " << kModelFormatVersion << '\n';
  detail::write_matrix(os, "A", p.contraction.a);
  detail::write_matrix(os, "B", p.contraction.b);
  detail::write_matrix(os, "U1", p.kernels.u1);
  detail::write_matrix(os, "U2", p.kernels.u2);
  detail::write_matrix(os, "U3", p.kernels.u3);
  os << "log_sigma " << detail::f64_to_string(p.log_sigma) << '\n';
  if (!config_echo.empty()) os << "config " << config_echo << '\n';
  if (!os) throw IoError("write failed: " + path);
}

inline ModelParams read_model(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open for reading: " + path);
  std::string key, version;
  if (!(is >> key >> version) || key != "format")
    throw IoError("model file: missing format line in " + path);
  if (version != kModelFormatVersion)
    throw IoError("model file: unsupported version '" + version + "' in " +
                  path);
  ModelParams p;
  p.contraction.a = detail::read_matrix(is, "A");
  p.contraction.b = detail::read_matrix(is, "B");
  p.kernels.u1 = detail::read_matrix(is, "U1");
  p.kernels.u2 = detail::read_matrix(is, "U2");
  p.kernels.u3 = detail::read_matrix(is, "U3");
  if (!(is >> key >> p.log_sigma) || key != "log_sigma")
    throw IoError("model file: missing log_sigma in " + path);

  // Shape invariants of the model types.
  if (p.contraction.a.rows() > p.contraction.a.cols())
    throw IoError("model file: A has h > H in " + path);
  if (p.contraction.b.rows() > p.contraction.b.cols())
    throw IoError("model file: B has w > W in " + path);
  if (p.kernels.u1.cols() != p.contraction.a.rows() ||
      p.kernels.u2.cols() != p.contraction.b.rows())
    throw IoError("model file: kernel factor dims inconsistent with A/B in " +
                  path);
  if (p.kernels.u1.rows() > p.kernels.u1.cols() ||
      p.kernels.u2.rows() > p.kernels.u2.cols() ||
      p.kernels.u3.rows() > p.kernels.u3.cols())
    throw IoError("model file: rank exceeds latent dim in " + path);
  return p;
}

}  // namespace io
}  // namespace tgpst

#endif  // TGPST_IO_HPP
