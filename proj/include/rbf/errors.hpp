#ifndef RBF_ERRORS_HPP
#define RBF_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rbf {

// Error categories; the C API and the CLI map these onto status/exit codes
// (config -> 2, io -> 3, numeric -> 4).
enum class ErrorCode {
  generic = 1,
  config = 2,
  io = 3,
  numeric = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(ErrorCode::generic, msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(ErrorCode::config, msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(ErrorCode::io, msg) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(ErrorCode::numeric, msg) {}
};

// Raised when a linear solve hits a pivot below tolerance.  Carries the
// pivot index (column of the factorization) that failed.
class SingularMatrixError : public NumericError {
 public:
  SingularMatrixError(std::size_t pivot_index, const std::string& msg)
      : NumericError(msg), pivot_index_(pivot_index) {}
  std::size_t pivot_index() const noexcept { return pivot_index_; }

 private:
  std::size_t pivot_index_;
};

class QuantileUnderflowError : public NumericError {
 public:
  explicit QuantileUnderflowError(const std::string& msg) : NumericError(msg) {}
};

class ZeroDirectionError : public NumericError {
 public:
  explicit ZeroDirectionError(const std::string& msg) : NumericError(msg) {}
};

}  // namespace rbf

#endif  // RBF_ERRORS_HPP
