#ifndef RBF_LINALG_HPP
#define RBF_LINALG_HPP

#include <cstddef>
#include <vector>

#include "rbf/tensor.hpp"

namespace rbf {

// Partial-pivot LU factorization, LAPACK-style storage: `lu` holds L (unit
// diagonal, below) and U (on/above the diagonal); `piv[k]` is the row swapped
// with row k at elimination step k.
struct LuFactors {
  RealTensor lu;
  std::vector<std::size_t> piv;
};

// Pivot magnitudes below this raise SingularMatrixError.
inline constexpr double kPivotTol = 1e-12;

LuFactors lu_factor(const RealTensor& a);

// Solves A x = rhs for each column of rhs using precomputed factors.
RealTensor lu_solve(const LuFactors& f, const RealTensor& rhs);

// Solves A^T x = rhs using the same factors.
RealTensor lu_solve_transposed(const LuFactors& f, const RealTensor& rhs);

// lu_solve plus one step of iterative refinement against the original matrix.
RealTensor lu_solve_refined(const RealTensor& a, const LuFactors& f,
                            const RealTensor& rhs);

// [[Re, -Im], [Im, Re]] real embedding of an n x m complex matrix (2n x 2m).
RealTensor embed_complex(const ComplexMat& a);

// Plain complex solve via the real embedding (factor + refined solve).
ComplexMat cm_solve(const ComplexMat& a, const ComplexMat& b);

}  // namespace rbf

#endif  // RBF_LINALG_HPP
