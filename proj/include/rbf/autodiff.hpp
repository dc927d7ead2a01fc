#ifndef RBF_AUTODIFF_HPP
#define RBF_AUTODIFF_HPP

#include <cstdint>
#include <memory>
#include <vector>

#include "rbf/linalg.hpp"
#include "rbf/tensor.hpp"

namespace rbf {

// Handle to a node on a Tape.  Shape is cached so downstream ops can be
// shape-checked without a tape lookup.
struct Var {
  int id = -1;
  std::size_t rows = 0, cols = 0;
};

// Complex value on the tape: a (re, im) pair of equal-shape Vars.
struct CVar {
  Var re, im;
  std::size_t rows() const { return re.rows; }
  std::size_t cols() const { return re.cols; }
};

// Eager reverse-mode tape over RealTensor.  Forward values are computed at
// recording time; backward() walks the records in exact reverse order, so
// replays are bit-identical.  Single-threaded by design — run one Tape per
// worker and merge parameter gradients outside.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Drops all nodes (capacity is kept to spare reallocation across samples).
  void reset();
  std::size_t num_nodes() const { return nodes_.size(); }

  // Leaf without gradient (inputs, Monte-Carlo draws, constants).
  Var constant(RealTensor value);
  // Leaf with gradient (network parameters, probed inputs in tests).
  Var param(RealTensor value);

  const RealTensor& val(Var v) const { return values_[v.id]; }
  // Valid after backward(); zero tensor if the node was never reached.
  const RealTensor& grad(Var v) const;
  bool requires_grad(Var v) const { return needs_grad_[v.id] != 0; }

  // ---- Elementwise / scalar ----
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);
  Var neg(Var a) { return scale(a, -1.0); }
  // out = a * s where s is a 1x1 Var (gradient flows into both).
  Var mul_scalar_var(Var a, Var s);
  Var relu(Var a);
  Var tanh_act(Var a);
  Var softmax_rows(Var a);
  Var log1p_act(Var a);
  Var sqrt_act(Var a);
  // max(a, lo) elementwise; gradient passes only where a > lo.
  Var clamp_min(Var a, double lo);

  // ---- Shape / structure ----
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  // bias is 1xm, broadcast over the rows of a (nxm).
  Var add_rowvec(Var a, Var bias);
  // s is nx1; row i of a scaled by s[i].
  Var scale_rows(Var a, Var s);
  // s is mx1; column j of a scaled by s[j].
  Var scale_cols(Var a, Var s);
  Var hcat(const std::vector<Var>& vs);
  Var vcat(const std::vector<Var>& vs);
  // Gather rows by index (duplicates allowed).
  Var gather_rows(Var a, std::vector<std::size_t> idx);
  // [a; a; ...] t times.
  Var repeat_rows(Var a, std::size_t t);
  // Each row repeated t consecutive times.
  Var interleave_rows(Var a, std::size_t t);
  // Gather entries by flat index into a (len x 1) column.
  Var select_elems(Var a, std::vector<std::size_t> flat_idx);

  // ---- Reductions ----
  // Sum over consecutive groups of `group` rows -> (n/group) x m.  Summands
  // are accumulated in ascending value order so the result is independent of
  // the ordering of rows within a group (bit-exact pooling symmetry).
  Var group_sum(Var a, std::size_t group);
  // Column-wise min over consecutive groups of `group` rows; gradient routed
  // to the lowest row index achieving the min.
  Var segment_min(Var a, std::size_t group);
  // Elementwise sum of equally shaped Vars, accumulated in ascending value
  // order per component (permuting the list leaves the output bit-identical).
  Var sum_pool(const std::vector<Var>& vs);
  // j-th smallest entry of a column vector (1-based rank); gradient to the
  // lowest original index holding that value.
  Var order_select(Var a, std::size_t j);
  // Minimum entry of a column vector; gradient to the lowest argmin index.
  Var min_reduce(Var a);
  // Sum of all entries -> 1x1 (fixed accumulation order).
  Var sum_all(Var a);

  // ---- Linear solve ----
  // x = a^{-1} b via partial-pivot LU plus one refinement step; backward via
  // adjoint solves on the saved factors.
  Var solve(Var a, Var b);

  // Accumulates gradients of `loss` (must be 1x1) into every ancestor that
  // requires a gradient.  Clears previous gradients first.
  void backward(Var loss);

 private:
  enum class Op : std::uint8_t {
    kConst, kParam, kAdd, kSub, kMul, kDiv, kScale, kAddScalar, kMulScalarVar,
    kRelu, kTanh, kSoftmaxRows, kLog1p, kSqrt, kClampMin,
    kMatmul, kTranspose, kAddRowvec, kScaleRows, kScaleCols, kHcat, kVcat,
    kGatherRows, kRepeatRows, kInterleaveRows, kSelectElems,
    kGroupSum, kSegmentMin, kSumPool, kOrderSelect, kMinReduce, kSumAll,
    kSolve,
  };
  struct Node {
    Op op;
    std::vector<int> in;
    double c = 0.0;                      // scalar operand
    std::size_t k = 0;                   // group size / repeat count / rank
    std::vector<std::size_t> idx;        // gather indices, argmins, widths
    std::shared_ptr<LuFactors> lu;       // saved factors for kSolve
  };

  Var push(Op op, RealTensor value, std::vector<int> in, bool needs_grad);
  RealTensor& grad_slot(int id);

  std::vector<Node> nodes_;
  std::vector<RealTensor> values_;
  std::vector<RealTensor> grads_;
  std::vector<char> grad_live_;   // grads_[i] holds real data for this pass
  std::vector<char> needs_grad_;
};

// ---- Complex composites (thin wrappers over the real ops) ----

CVar cconst(Tape& t, const ComplexMat& m);
CVar cparam(Tape& t, const ComplexMat& m);
ComplexMat cval(const Tape& t, CVar v);
CVar cadd(Tape& t, CVar a, CVar b);
CVar csub(Tape& t, CVar a, CVar b);
CVar cmatmul(Tape& t, CVar a, CVar b);
// Conjugate (Hermitian) transpose.
CVar cherm(Tape& t, CVar a);
// s is a real mx1 Var; scales column j of a by s[j].
CVar cscale_cols(Tape& t, CVar a, Var s);
CVar cmul_scalar_var(Tape& t, CVar a, Var s);
// |a_ij|^2 as a real Var.
Var cabs2(Tape& t, CVar a);
// Frobenius norm as a 1x1 Var; raises ZeroDirectionError if the norm
// underflows below `min_norm`.
Var cnorm(Tape& t, CVar a, double min_norm = 1e-150);
// x = a^{-1} b through the [[Re,-Im],[Im,Re]] real embedding of a.
CVar csolve(Tape& t, CVar a, CVar b);

// ---- Adam ----

// Moment accumulators aligned with a flat list of parameter tensors.
struct AdamState {
  std::vector<RealTensor> m, v;
  long t = 0;
};

AdamState adam_init(const std::vector<RealTensor*>& params);

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// One Adam update (bias-corrected, epsilon outside the square root):
//   p -= lr * m_hat / (sqrt(v_hat) + eps)
void adam_step(const std::vector<RealTensor*>& params,
               const std::vector<const RealTensor*>& grads, AdamState& state,
               double lr, double beta1 = kAdamBeta1, double beta2 = kAdamBeta2,
               double eps = kAdamEps);

}  // namespace rbf

#endif  // RBF_AUTODIFF_HPP
