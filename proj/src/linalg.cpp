#include "rbf/linalg.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace rbf {

LuFactors lu_factor(const RealTensor& a) {
  if (a.rows() != a.cols())
    throw ShapeError("lu_factor: matrix must be square, got " +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  const std::size_t n = a.rows();
  LuFactors f{a, std::vector<std::size_t>(n)};
  RealTensor& lu = f.lu;
  for (std::size_t k = 0; k < n; ++k) {
    // Partial pivoting: largest magnitude in column k at or below the diagonal.
    std::size_t p = k;
    double best = std::fabs(lu(k, k));
    for (std::size_t i = k + 1; i < n; ++i) {
      const double m = std::fabs(lu(i, k));
      if (m > best) {
        best = m;
        p = i;
      }
    }
    if (best < kPivotTol)
      throw SingularMatrixError(
          k, "singular matrix: pivot " + std::to_string(best) + " below " +
                 std::to_string(kPivotTol) + " at elimination step " +
                 std::to_string(k));
    f.piv[k] = p;
    if (p != k)
      for (std::size_t j = 0; j < n; ++j) std::swap(lu(k, j), lu(p, j));
    const double inv = 1.0 / lu(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double m = lu(i, k) * inv;
      lu(i, k) = m;
      for (std::size_t j = k + 1; j < n; ++j) lu(i, j) -= m * lu(k, j);
    }
  }
  return f;
}

RealTensor lu_solve(const LuFactors& f, const RealTensor& rhs) {
  const std::size_t n = f.lu.rows();
  if (rhs.rows() != n) throw ShapeError("lu_solve: rhs rows != n");
  RealTensor x = rhs;
  const std::size_t m = x.cols();
  // Apply the row swaps in factorization order.
  for (std::size_t k = 0; k < n; ++k)
    if (f.piv[k] != k)
      for (std::size_t j = 0; j < m; ++j) std::swap(x(k, j), x(f.piv[k], j));
  // L y = Pb (unit lower triangular).
  for (std::size_t i = 1; i < n; ++i)
    for (std::size_t k = 0; k < i; ++k) {
      const double l = f.lu(i, k);
      for (std::size_t j = 0; j < m; ++j) x(i, j) -= l * x(k, j);
    }
  // U x = y.
  for (std::size_t ii = n; ii-- > 0;) {
    for (std::size_t k = ii + 1; k < n; ++k) {
      const double u = f.lu(ii, k);
      for (std::size_t j = 0; j < m; ++j) x(ii, j) -= u * x(k, j);
    }
    const double d = 1.0 / f.lu(ii, ii);
    for (std::size_t j = 0; j < m; ++j) x(ii, j) *= d;
  }
  return x;
}

RealTensor lu_solve_transposed(const LuFactors& f, const RealTensor& rhs) {
  // PA = LU  =>  A^T = U^T L^T P, so solve U^T y = b, L^T z = y, x = P^{-1} z.
  const std::size_t n = f.lu.rows();
  if (rhs.rows() != n) throw ShapeError("lu_solve_transposed: rhs rows != n");
  RealTensor x = rhs;
  const std::size_t m = x.cols();
  // U^T y = b: U^T is lower triangular with U's diagonal.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      const double u = f.lu(k, i);
      for (std::size_t j = 0; j < m; ++j) x(i, j) -= u * x(k, j);
    }
    const double d = 1.0 / f.lu(i, i);
    for (std::size_t j = 0; j < m; ++j) x(i, j) *= d;
  }
  // L^T z = y: L^T is unit upper triangular.
  for (std::size_t ii = n; ii-- > 0;)
    for (std::size_t k = ii + 1; k < n; ++k) {
      const double l = f.lu(k, ii);
      for (std::size_t j = 0; j < m; ++j) x(ii, j) -= l * x(k, j);
    }
  // Undo the swaps in reverse order.
  for (std::size_t kk = n; kk-- > 0;)
    if (f.piv[kk] != kk)
      for (std::size_t j = 0; j < m; ++j) std::swap(x(kk, j), x(f.piv[kk], j));
  return x;
}

RealTensor lu_solve_refined(const RealTensor& a, const LuFactors& f,
                            const RealTensor& rhs) {
  RealTensor x = lu_solve(f, rhs);
  // One refinement step: x += A^{-1} (b - A x).  Cheap next to the
  // factorization and buys a couple of digits on mildly conditioned systems.
  RealTensor r = rt_sub(rhs, rt_matmul(a, x));
  RealTensor d = lu_solve(f, r);
  return rt_add(x, d);
}

RealTensor embed_complex(const ComplexMat& a) {
  const std::size_t n = a.rows(), m = a.cols();
  RealTensor e(2 * n, 2 * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      e(i, j) = a.re(i, j);
      e(i, m + j) = -a.im(i, j);
      e(n + i, j) = a.im(i, j);
      e(n + i, m + j) = a.re(i, j);
    }
  return e;
}

ComplexMat cm_solve(const ComplexMat& a, const ComplexMat& b) {
  const std::size_t n = a.rows(), m = b.cols();
  if (a.cols() != n) throw ShapeError("cm_solve: matrix must be square");
  if (b.rows() != n) throw ShapeError("cm_solve: rhs rows mismatch");
  RealTensor ae = embed_complex(a);
  LuFactors f = lu_factor(ae);
  // Stack [Re(b); Im(b)] to match the embedding.
  RealTensor rhs(2 * n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      rhs(i, j) = b.re(i, j);
      rhs(n + i, j) = b.im(i, j);
    }
  RealTensor xs = lu_solve_refined(ae, f, rhs);
  ComplexMat x(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      x.re(i, j) = xs(i, j);
      x.im(i, j) = xs(n + i, j);
    }
  return x;
}

}  // namespace rbf
