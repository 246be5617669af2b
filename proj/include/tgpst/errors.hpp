#ifndef TGPST_ERRORS_HPP
#define TGPST_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace tgpst {

/// Dimension mismatch between tensors/matrices.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Non-finite intermediate quantity during likelihood/optimization work.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration (bad flags, degenerate dataset, rank out of bounds).
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Metric requested on data where it is undefined (e.g. zero-variance R^2).
class UndefinedMetricError : public std::invalid_argument {
 public:
  explicit UndefinedMetricError(const std::string& msg)
      : std::invalid_argument(msg) {}
};

/// File format violations: bad magic, truncated payload, version mismatch.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace tgpst

#endif  // TGPST_ERRORS_HPP
