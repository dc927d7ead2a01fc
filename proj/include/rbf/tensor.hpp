#ifndef RBF_TENSOR_HPP
#define RBF_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "rbf/errors.hpp"

namespace rbf {

// Total order over doubles via the IEEE-754 bit trick: identical to operator<
// on ordinary values, and still a strict weak ordering when NaNs slip in, so
// sorted reductions stay well-defined on a poisoned forward pass (the NaN
// then surfaces in the result instead of corrupting the sort).
inline std::uint64_t total_order_key(double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, sizeof(bits));
  return (bits & 0x8000000000000000ull) ? ~bits
                                        : (bits | 0x8000000000000000ull);
}
inline bool value_less(double a, double b) {
  return total_order_key(a) < total_order_key(b);
}

// Dense row-major matrix of 64-bit floats.  Scalars are 1x1, column vectors
// n x 1.  All pipeline quantities are carried by this type (complex values as
// re/im pairs, see ComplexMat).
class RealTensor {
 public:
  RealTensor() = default;
  RealTensor(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  RealTensor(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw ShapeError("RealTensor: data length " + std::to_string(data_.size()) +
                       " != rows*cols " + std::to_string(rows_ * cols_));
  }

  static RealTensor scalar(double v) { return RealTensor(1, 1, {v}); }
  static RealTensor eye(std::size_t n) {
    RealTensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }
  static RealTensor full(std::size_t rows, std::size_t cols, double v) {
    RealTensor t(rows, cols);
    for (double& x : t.data_) x = v;
    return t;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  double& at_flat(std::size_t i) { return data_[i]; }
  double at_flat(std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  const std::vector<double>& vec() const { return data_; }

  bool same_shape(const RealTensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  // Raises NumericError on the first NaN/Inf entry; `context` names the
  // quantity in the message.
  void assert_finite(const std::string& context) const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i]))
        throw NumericError("non-finite value in " + context + " at flat index " +
                           std::to_string(i));
    }
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

// Complex matrix as an explicit (re, im) pair of equal-shape real tensors.
struct ComplexMat {
  RealTensor re, im;

  ComplexMat() = default;
  ComplexMat(std::size_t rows, std::size_t cols) : re(rows, cols), im(rows, cols) {}
  ComplexMat(RealTensor r, RealTensor i) : re(std::move(r)), im(std::move(i)) {
    if (!re.same_shape(im)) throw ShapeError("ComplexMat: re/im shape mismatch");
  }

  std::size_t rows() const { return re.rows(); }
  std::size_t cols() const { return re.cols(); }

  static ComplexMat eye(std::size_t n) {
    return ComplexMat(RealTensor::eye(n), RealTensor(n, n));
  }
};

// ---- Plain (non-autodiff) helpers used by oracles, dataset generation and
// ---- evaluation paths.  The tape has its own recorded counterparts.

RealTensor rt_matmul(const RealTensor& a, const RealTensor& b);
RealTensor rt_transpose(const RealTensor& a);
RealTensor rt_add(const RealTensor& a, const RealTensor& b);
RealTensor rt_sub(const RealTensor& a, const RealTensor& b);
RealTensor rt_scale(const RealTensor& a, double c);

ComplexMat cm_matmul(const ComplexMat& a, const ComplexMat& b);
// Conjugate (Hermitian) transpose.
ComplexMat cm_herm(const ComplexMat& a);
ComplexMat cm_add(const ComplexMat& a, const ComplexMat& b);
ComplexMat cm_sub(const ComplexMat& a, const ComplexMat& b);
ComplexMat cm_scale(const ComplexMat& a, double c);
// |a_ij|^2 entrywise.
RealTensor cm_abs2(const ComplexMat& a);
// Frobenius norm.
double cm_norm(const ComplexMat& a);
// Squared Frobenius norm.
double cm_norm2(const ComplexMat& a);
// Column j as an n x 1 ComplexMat.
ComplexMat cm_col(const ComplexMat& a, std::size_t j);

}  // namespace rbf

#endif  // RBF_TENSOR_HPP
