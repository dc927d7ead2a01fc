#include "rbf/tensor.hpp"

namespace rbf {

RealTensor rt_matmul(const RealTensor& a, const RealTensor& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions disagree: " +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " * " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  RealTensor c(n, m);
  // i-k-j order: the inner loop walks both b and c contiguously.
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c.data() + i * m;
    const double* ai = a.data() + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = ai[kk];
      const double* bk = b.data() + kk * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

RealTensor rt_transpose(const RealTensor& a) {
  RealTensor t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

RealTensor rt_add(const RealTensor& a, const RealTensor& b) {
  if (!a.same_shape(b)) throw ShapeError("add: shape mismatch");
  RealTensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.at_flat(i) += b.at_flat(i);
  return c;
}

RealTensor rt_sub(const RealTensor& a, const RealTensor& b) {
  if (!a.same_shape(b)) throw ShapeError("sub: shape mismatch");
  RealTensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.at_flat(i) -= b.at_flat(i);
  return c;
}

RealTensor rt_scale(const RealTensor& a, double c) {
  RealTensor r = a;
  for (std::size_t i = 0; i < r.size(); ++i) r.at_flat(i) *= c;
  return r;
}

ComplexMat cm_matmul(const ComplexMat& a, const ComplexMat& b) {
  // (ar + i ai)(br + i bi) = (ar br - ai bi) + i (ar bi + ai br)
  return ComplexMat(rt_sub(rt_matmul(a.re, b.re), rt_matmul(a.im, b.im)),
                    rt_add(rt_matmul(a.re, b.im), rt_matmul(a.im, b.re)));
}

ComplexMat cm_herm(const ComplexMat& a) {
  return ComplexMat(rt_transpose(a.re), rt_scale(rt_transpose(a.im), -1.0));
}

ComplexMat cm_add(const ComplexMat& a, const ComplexMat& b) {
  return ComplexMat(rt_add(a.re, b.re), rt_add(a.im, b.im));
}

ComplexMat cm_sub(const ComplexMat& a, const ComplexMat& b) {
  return ComplexMat(rt_sub(a.re, b.re), rt_sub(a.im, b.im));
}

ComplexMat cm_scale(const ComplexMat& a, double c) {
  return ComplexMat(rt_scale(a.re, c), rt_scale(a.im, c));
}

RealTensor cm_abs2(const ComplexMat& a) {
  RealTensor r(a.rows(), a.cols());
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double re = a.re.at_flat(i), im = a.im.at_flat(i);
    r.at_flat(i) = re * re + im * im;
  }
  return r;
}

double cm_norm2(const ComplexMat& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.re.size(); ++i) {
    const double re = a.re.at_flat(i), im = a.im.at_flat(i);
    s += re * re + im * im;
  }
  return s;
}

double cm_norm(const ComplexMat& a) { return std::sqrt(cm_norm2(a)); }

ComplexMat cm_col(const ComplexMat& a, std::size_t j) {
  ComplexMat c(a.rows(), 1);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    c.re(i, 0) = a.re(i, j);
    c.im(i, 0) = a.im(i, j);
  }
  return c;
}

}  // namespace rbf
