#include "rbf/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rbf {

namespace {

void check_same_shape(const RealTensor& a, const RealTensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch: " +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
}

// ga += gout * b^T
void acc_matmul_nt(const RealTensor& gout, const RealTensor& b, RealTensor& ga) {
  const std::size_t n = gout.rows(), m = gout.cols(), k = b.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const double* gi = gout.data() + i * m;
    double* gai = ga.data() + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double* bk = b.data() + kk * m;
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += gi[j] * bk[j];
      gai[kk] += s;
    }
  }
}

// gb += a^T * gout
void acc_matmul_tn(const RealTensor& a, const RealTensor& gout, RealTensor& gb) {
  const std::size_t n = a.rows(), k = a.cols(), m = gout.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a.data() + i * k;
    const double* gi = gout.data() + i * m;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = ai[kk];
      double* gbk = gb.data() + kk * m;
      for (std::size_t j = 0; j < m; ++j) gbk[j] += aik * gi[j];
    }
  }
}

}  // namespace

void Tape::reset() {
  nodes_.clear();
  values_.clear();
  grads_.clear();
  grad_live_.clear();
  needs_grad_.clear();
}

Var Tape::push(Op op, RealTensor value, std::vector<int> in, bool needs_grad) {
  Node n;
  n.op = op;
  n.in = std::move(in);
  nodes_.push_back(std::move(n));
  const std::size_t r = value.rows(), c = value.cols();
  values_.push_back(std::move(value));
  needs_grad_.push_back(needs_grad ? 1 : 0);
  return Var{static_cast<int>(nodes_.size()) - 1, r, c};
}

Var Tape::constant(RealTensor value) {
  return push(Op::kConst, std::move(value), {}, false);
}

Var Tape::param(RealTensor value) {
  return push(Op::kParam, std::move(value), {}, true);
}

const RealTensor& Tape::grad(Var v) const {
  auto* self = const_cast<Tape*>(this);
  if (grads_.size() < values_.size()) {
    self->grads_.resize(values_.size());
    self->grad_live_.resize(values_.size(), 0);
  }
  if (!grad_live_[v.id]) {
    // Never reached by backward: gradient is identically zero.
    self->grads_[v.id] = RealTensor(v.rows, v.cols);
    self->grad_live_[v.id] = 1;
  }
  return grads_[v.id];
}

RealTensor& Tape::grad_slot(int id) {
  if (!grad_live_[id]) {
    grads_[id] = RealTensor(values_[id].rows(), values_[id].cols());
    grad_live_[id] = 1;
  }
  return grads_[id];
}

#define RBF_NEEDS(id) (needs_grad_[id] != 0)

Var Tape::add(Var a, Var b) {
  check_same_shape(values_[a.id], values_[b.id], "add");
  return push(Op::kAdd, rt_add(values_[a.id], values_[b.id]), {a.id, b.id},
              RBF_NEEDS(a.id) || RBF_NEEDS(b.id));
}

Var Tape::sub(Var a, Var b) {
  check_same_shape(values_[a.id], values_[b.id], "sub");
  return push(Op::kSub, rt_sub(values_[a.id], values_[b.id]), {a.id, b.id},
              RBF_NEEDS(a.id) || RBF_NEEDS(b.id));
}

Var Tape::mul(Var a, Var b) {
  check_same_shape(values_[a.id], values_[b.id], "mul");
  RealTensor v = values_[a.id];
  for (std::size_t i = 0; i < v.size(); ++i) v.at_flat(i) *= values_[b.id].at_flat(i);
  return push(Op::kMul, std::move(v), {a.id, b.id},
              RBF_NEEDS(a.id) || RBF_NEEDS(b.id));
}

Var Tape::div(Var a, Var b) {
  check_same_shape(values_[a.id], values_[b.id], "div");
  RealTensor v = values_[a.id];
  for (std::size_t i = 0; i < v.size(); ++i) v.at_flat(i) /= values_[b.id].at_flat(i);
  return push(Op::kDiv, std::move(v), {a.id, b.id},
              RBF_NEEDS(a.id) || RBF_NEEDS(b.id));
}

Var Tape::scale(Var a, double c) {
  Var out = push(Op::kScale, rt_scale(values_[a.id], c), {a.id}, RBF_NEEDS(a.id));
  nodes_.back().c = c;
  return out;
}

Var Tape::add_scalar(Var a, double c) {
  RealTensor v = values_[a.id];
  for (std::size_t i = 0; i < v.size(); ++i) v.at_flat(i) += c;
  Var out = push(Op::kAddScalar, std::move(v), {a.id}, RBF_NEEDS(a.id));
  nodes_.back().c = c;
  return out;
}

Var Tape::mul_scalar_var(Var a, Var s) {
  if (s.rows != 1 || s.cols != 1) throw ShapeError("mul_scalar_var: s must be 1x1");
  const double sv = values_[s.id](0, 0);
  return push(Op::kMulScalarVar, rt_scale(values_[a.id], sv), {a.id, s.id},
              RBF_NEEDS(a.id) || RBF_NEEDS(s.id));
}

Var Tape::relu(Var a) {
  RealTensor v = values_[a.id];
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v.at_flat(i) < 0.0) v.at_flat(i) = 0.0;
  return push(Op::kRelu, std::move(v), {a.id}, RBF_NEEDS(a.id));
}

Var Tape::tanh_act(Var a) {
  RealTensor v = values_[a.id];
  for (std::size_t i = 0; i < v.size(); ++i) v.at_flat(i) = std::tanh(v.at_flat(i));
  return push(Op::kTanh, std::move(v), {a.id}, RBF_NEEDS(a.id));
}

Var Tape::softmax_rows(Var a) {
  RealTensor v = values_[a.id];
  const std::size_t n = v.rows(), m = v.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = v(i, 0);
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, v(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      v(i, j) = std::exp(v(i, j) - mx);
      s += v(i, j);
    }
    const double inv = 1.0 / s;
    for (std::size_t j = 0; j < m; ++j) v(i, j) *= inv;
  }
  return push(Op::kSoftmaxRows, std::move(v), {a.id}, RBF_NEEDS(a.id));
}

Var Tape::log1p_act(Var a) {
  RealTensor v = values_[a.id];
  for (std::size_t i = 0; i < v.size(); ++i) v.at_flat(i) = std::log1p(v.at_flat(i));
  return push(Op::kLog1p, std::move(v), {a.id}, RBF_NEEDS(a.id));
}

Var Tape::sqrt_act(Var a) {
  RealTensor v = values_[a.id];
  for (std::size_t i = 0; i < v.size(); ++i) v.at_flat(i) = std::sqrt(v.at_flat(i));
  return push(Op::kSqrt, std::move(v), {a.id}, RBF_NEEDS(a.id));
}

Var Tape::clamp_min(Var a, double lo) {
  RealTensor v = values_[a.id];
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v.at_flat(i) < lo) v.at_flat(i) = lo;
  Var out = push(Op::kClampMin, std::move(v), {a.id}, RBF_NEEDS(a.id));
  nodes_.back().c = lo;
  return out;
}

Var Tape::matmul(Var a, Var b) {
  return push(Op::kMatmul, rt_matmul(values_[a.id], values_[b.id]), {a.id, b.id},
              RBF_NEEDS(a.id) || RBF_NEEDS(b.id));
}

Var Tape::transpose(Var a) {
  return push(Op::kTranspose, rt_transpose(values_[a.id]), {a.id}, RBF_NEEDS(a.id));
}

Var Tape::add_rowvec(Var a, Var bias) {
  if (bias.rows != 1 || bias.cols != a.cols)
    throw ShapeError("add_rowvec: bias must be 1x" + std::to_string(a.cols));
  RealTensor v = values_[a.id];
  const RealTensor& bv = values_[bias.id];
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j) v(i, j) += bv(0, j);
  return push(Op::kAddRowvec, std::move(v), {a.id, bias.id},
              RBF_NEEDS(a.id) || RBF_NEEDS(bias.id));
}

Var Tape::scale_rows(Var a, Var s) {
  if (s.cols != 1 || s.rows != a.rows)
    throw ShapeError("scale_rows: s must be " + std::to_string(a.rows) + "x1");
  RealTensor v = values_[a.id];
  const RealTensor& sv = values_[s.id];
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j) v(i, j) *= sv(i, 0);
  return push(Op::kScaleRows, std::move(v), {a.id, s.id},
              RBF_NEEDS(a.id) || RBF_NEEDS(s.id));
}

Var Tape::scale_cols(Var a, Var s) {
  if (s.cols != 1 || s.rows != a.cols)
    throw ShapeError("scale_cols: s must be " + std::to_string(a.cols) + "x1");
  RealTensor v = values_[a.id];
  const RealTensor& sv = values_[s.id];
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j) v(i, j) *= sv(j, 0);
  return push(Op::kScaleCols, std::move(v), {a.id, s.id},
              RBF_NEEDS(a.id) || RBF_NEEDS(s.id));
}

Var Tape::hcat(const std::vector<Var>& vs) {
  if (vs.empty()) throw ShapeError("hcat: empty list");
  std::size_t total = 0;
  for (const Var& v : vs) {
    if (v.rows != vs[0].rows) throw ShapeError("hcat: row mismatch");
    total += v.cols;
  }
  RealTensor out(vs[0].rows, total);
  std::vector<int> in;
  std::vector<std::size_t> widths;
  std::size_t off = 0;
  for (const Var& v : vs) {
    const RealTensor& t = values_[v.id];
    for (std::size_t i = 0; i < t.rows(); ++i)
      for (std::size_t j = 0; j < t.cols(); ++j) out(i, off + j) = t(i, j);
    off += v.cols;
    in.push_back(v.id);
    widths.push_back(v.cols);
  }
  bool ng = false;
  for (const Var& v : vs) ng = ng || RBF_NEEDS(v.id);
  Var out_v = push(Op::kHcat, std::move(out), std::move(in), ng);
  nodes_.back().idx = std::move(widths);
  return out_v;
}

Var Tape::vcat(const std::vector<Var>& vs) {
  if (vs.empty()) throw ShapeError("vcat: empty list");
  std::size_t total = 0;
  for (const Var& v : vs) {
    if (v.cols != vs[0].cols) throw ShapeError("vcat: column mismatch");
    total += v.rows;
  }
  RealTensor out(total, vs[0].cols);
  std::vector<int> in;
  std::vector<std::size_t> heights;
  std::size_t off = 0;
  for (const Var& v : vs) {
    const RealTensor& t = values_[v.id];
    for (std::size_t i = 0; i < t.rows(); ++i)
      for (std::size_t j = 0; j < t.cols(); ++j) out(off + i, j) = t(i, j);
    off += v.rows;
    in.push_back(v.id);
    heights.push_back(v.rows);
  }
  bool ng = false;
  for (const Var& v : vs) ng = ng || RBF_NEEDS(v.id);
  Var out_v = push(Op::kVcat, std::move(out), std::move(in), ng);
  nodes_.back().idx = std::move(heights);
  return out_v;
}

Var Tape::gather_rows(Var a, std::vector<std::size_t> idx) {
  RealTensor out(idx.size(), a.cols);
  const RealTensor& t = values_[a.id];
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= a.rows) throw ShapeError("gather_rows: index out of range");
    for (std::size_t j = 0; j < a.cols; ++j) out(r, j) = t(idx[r], j);
  }
  Var out_v = push(Op::kGatherRows, std::move(out), {a.id}, RBF_NEEDS(a.id));
  nodes_.back().idx = std::move(idx);
  return out_v;
}

Var Tape::repeat_rows(Var a, std::size_t t) {
  if (t == 0) throw ShapeError("repeat_rows: t must be positive");
  RealTensor out(a.rows * t, a.cols);
  const RealTensor& v = values_[a.id];
  for (std::size_t b = 0; b < t; ++b)
    for (std::size_t i = 0; i < a.rows; ++i)
      for (std::size_t j = 0; j < a.cols; ++j) out(b * a.rows + i, j) = v(i, j);
  Var out_v = push(Op::kRepeatRows, std::move(out), {a.id}, RBF_NEEDS(a.id));
  nodes_.back().k = t;
  return out_v;
}

Var Tape::interleave_rows(Var a, std::size_t t) {
  if (t == 0) throw ShapeError("interleave_rows: t must be positive");
  RealTensor out(a.rows * t, a.cols);
  const RealTensor& v = values_[a.id];
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t b = 0; b < t; ++b)
      for (std::size_t j = 0; j < a.cols; ++j) out(i * t + b, j) = v(i, j);
  Var out_v = push(Op::kInterleaveRows, std::move(out), {a.id}, RBF_NEEDS(a.id));
  nodes_.back().k = t;
  return out_v;
}

Var Tape::select_elems(Var a, std::vector<std::size_t> flat_idx) {
  RealTensor out(flat_idx.size(), 1);
  const RealTensor& v = values_[a.id];
  for (std::size_t r = 0; r < flat_idx.size(); ++r) {
    if (flat_idx[r] >= v.size()) throw ShapeError("select_elems: index out of range");
    out(r, 0) = v.at_flat(flat_idx[r]);
  }
  Var out_v = push(Op::kSelectElems, std::move(out), {a.id}, RBF_NEEDS(a.id));
  nodes_.back().idx = std::move(flat_idx);
  return out_v;
}

Var Tape::group_sum(Var a, std::size_t group) {
  if (group == 0 || a.rows % group != 0)
    throw ShapeError("group_sum: rows " + std::to_string(a.rows) +
                     " not divisible by group " + std::to_string(group));
  const std::size_t ng = a.rows / group;
  RealTensor out(ng, a.cols);
  const RealTensor& v = values_[a.id];
  std::vector<double> buf(group);
  for (std::size_t g = 0; g < ng; ++g)
    for (std::size_t j = 0; j < a.cols; ++j) {
      for (std::size_t r = 0; r < group; ++r) buf[r] = v(g * group + r, j);
      // Ascending-value accumulation: invariant to row order within the group.
      std::sort(buf.begin(), buf.end(), value_less);
      double s = 0.0;
      for (double x : buf) s += x;
      out(g, j) = s;
    }
  Var out_v = push(Op::kGroupSum, std::move(out), {a.id}, RBF_NEEDS(a.id));
  nodes_.back().k = group;
  return out_v;
}

Var Tape::segment_min(Var a, std::size_t group) {
  if (group == 0 || a.rows % group != 0)
    throw ShapeError("segment_min: rows " + std::to_string(a.rows) +
                     " not divisible by group " + std::to_string(group));
  const std::size_t ng = a.rows / group;
  RealTensor out(ng, a.cols);
  std::vector<std::size_t> argmins(ng * a.cols);
  const RealTensor& v = values_[a.id];
  for (std::size_t g = 0; g < ng; ++g)
    for (std::size_t j = 0; j < a.cols; ++j) {
      std::size_t best = g * group;
      double bv = v(best, j);
      for (std::size_t r = 1; r < group; ++r) {
        const double x = v(g * group + r, j);
        if (x < bv) {  // strict: ties keep the lowest row index
          bv = x;
          best = g * group + r;
        }
      }
      out(g, j) = bv;
      argmins[g * a.cols + j] = best;
    }
  Var out_v = push(Op::kSegmentMin, std::move(out), {a.id}, RBF_NEEDS(a.id));
  nodes_.back().k = group;
  nodes_.back().idx = std::move(argmins);
  return out_v;
}

Var Tape::sum_pool(const std::vector<Var>& vs) {
  if (vs.empty()) throw ShapeError("sum_pool: empty list");
  for (const Var& v : vs)
    if (v.rows != vs[0].rows || v.cols != vs[0].cols)
      throw ShapeError("sum_pool: inhomogeneous shapes");
  RealTensor out(vs[0].rows, vs[0].cols);
  std::vector<int> in;
  for (const Var& v : vs) in.push_back(v.id);
  std::vector<double> buf(vs.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t s = 0; s < vs.size(); ++s) buf[s] = values_[vs[s].id].at_flat(i);
    std::sort(buf.begin(), buf.end(), value_less);
    double acc = 0.0;
    for (double x : buf) acc += x;
    out.at_flat(i) = acc;
  }
  bool ng = false;
  for (const Var& v : vs) ng = ng || RBF_NEEDS(v.id);
  return push(Op::kSumPool, std::move(out), std::move(in), ng);
}

Var Tape::order_select(Var a, std::size_t j) {
  if (a.cols != 1) throw ShapeError("order_select: expects a column vector");
  if (j < 1 || j > a.rows)
    throw ShapeError("order_select: rank " + std::to_string(j) +
                     " out of range 1.." + std::to_string(a.rows));
  const RealTensor& v = values_[a.id];
  std::vector<double> buf(v.vec());
  std::nth_element(buf.begin(), buf.begin() + (j - 1), buf.end(), value_less);
  const double sel = buf[j - 1];
  std::size_t chosen = 0;  // lowest index holding the selected value
  while (total_order_key(v.at_flat(chosen)) != total_order_key(sel)) ++chosen;
  Var out = push(Op::kOrderSelect, RealTensor::scalar(sel), {a.id}, RBF_NEEDS(a.id));
  nodes_.back().k = j;
  nodes_.back().idx = {chosen};
  return out;
}

Var Tape::min_reduce(Var a) {
  if (a.cols != 1) throw ShapeError("min_reduce: expects a column vector");
  if (a.rows == 0) throw ShapeError("min_reduce: empty vector");
  const RealTensor& v = values_[a.id];
  std::size_t best = 0;
  for (std::size_t i = 1; i < a.rows; ++i)
    if (v.at_flat(i) < v.at_flat(best)) best = i;
  Var out = push(Op::kMinReduce, RealTensor::scalar(v.at_flat(best)), {a.id},
                 RBF_NEEDS(a.id));
  nodes_.back().idx = {best};
  return out;
}

Var Tape::sum_all(Var a) {
  const RealTensor& v = values_[a.id];
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += v.at_flat(i);
  return push(Op::kSumAll, RealTensor::scalar(s), {a.id}, RBF_NEEDS(a.id));
}

Var Tape::solve(Var a, Var b) {
  if (a.rows != a.cols) throw ShapeError("solve: matrix must be square");
  if (b.rows != a.rows) throw ShapeError("solve: rhs rows mismatch");
  auto lu = std::make_shared<LuFactors>(lu_factor(values_[a.id]));
  RealTensor x = lu_solve_refined(values_[a.id], *lu, values_[b.id]);
  Var out = push(Op::kSolve, std::move(x), {a.id, b.id},
                 RBF_NEEDS(a.id) || RBF_NEEDS(b.id));
  nodes_.back().lu = std::move(lu);
  return out;
}

void Tape::backward(Var loss) {
  if (loss.rows != 1 || loss.cols != 1)
    throw ShapeError("backward: loss must be 1x1");
  grads_.resize(nodes_.size());
  grad_live_.assign(nodes_.size(), 0);
  grad_slot(loss.id)(0, 0) = 1.0;

  for (int i = loss.id; i >= 0; --i) {
    if (!grad_live_[i] || !needs_grad_[i]) continue;
    const Node& nd = nodes_[i];
    const RealTensor& g = grads_[i];
    const RealTensor& y = values_[i];
    switch (nd.op) {
      case Op::kConst:
      case Op::kParam:
        break;
      case Op::kAdd: {
        for (int s = 0; s < 2; ++s)
          if (RBF_NEEDS(nd.in[s])) {
            RealTensor& gi = grad_slot(nd.in[s]);
            for (std::size_t q = 0; q < g.size(); ++q) gi.at_flat(q) += g.at_flat(q);
          }
        break;
      }
      case Op::kSub: {
        if (RBF_NEEDS(nd.in[0])) {
          RealTensor& gi = grad_slot(nd.in[0]);
          for (std::size_t q = 0; q < g.size(); ++q) gi.at_flat(q) += g.at_flat(q);
        }
        if (RBF_NEEDS(nd.in[1])) {
          RealTensor& gi = grad_slot(nd.in[1]);
          for (std::size_t q = 0; q < g.size(); ++q) gi.at_flat(q) -= g.at_flat(q);
        }
        break;
      }
      case Op::kMul: {
        const RealTensor& av = values_[nd.in[0]];
        const RealTensor& bv = values_[nd.in[1]];
        if (RBF_NEEDS(nd.in[0])) {
          RealTensor& gi = grad_slot(nd.in[0]);
          for (std::size_t q = 0; q < g.size(); ++q)
            gi.at_flat(q) += g.at_flat(q) * bv.at_flat(q);
        }
        if (RBF_NEEDS(nd.in[1])) {
          RealTensor& gi = grad_slot(nd.in[1]);
          for (std::size_t q = 0; q < g.size(); ++q)
            gi.at_flat(q) += g.at_flat(q) * av.at_flat(q);
        }
        break;
      }
      case Op::kDiv: {
        const RealTensor& bv = values_[nd.in[1]];
        if (RBF_NEEDS(nd.in[0])) {
          RealTensor& gi = grad_slot(nd.in[0]);
          for (std::size_t q = 0; q < g.size(); ++q)
            gi.at_flat(q) += g.at_flat(q) / bv.at_flat(q);
        }
        if (RBF_NEEDS(nd.in[1])) {
          RealTensor& gi = grad_slot(nd.in[1]);
          for (std::size_t q = 0; q < g.size(); ++q)
            gi.at_flat(q) -= g.at_flat(q) * y.at_flat(q) / bv.at_flat(q);
        }
        break;
      }
      case Op::kScale: {
        if (RBF_NEEDS(nd.in[0])) {
          RealTensor& gi = grad_slot(nd.in[0]);
          for (std::size_t q = 0; q < g.size(); ++q)
            gi.at_flat(q) += g.at_flat(q) * nd.c;
        }
        break;
      }
      case Op::kAddScalar: {
        if (RBF_NEEDS(nd.in[0])) {
          RealTensor& gi = grad_slot(nd.in[0]);
          for (std::size_t q = 0; q < g.size(); ++q) gi.at_flat(q) += g.at_flat(q);
        }
        break;
      }
      case Op::kMulScalarVar: {
        const RealTensor& av = values_[nd.in[0]];
        const double sv = values_[nd.in[1]](0, 0);
        if (RBF_NEEDS(nd.in[0])) {
          RealTensor& gi = grad_slot(nd.in[0]);
          for (std::size_t q = 0; q < g.size(); ++q)
            gi.at_flat(q) += g.at_flat(q) * sv;
        }
        if (RBF_NEEDS(nd.in[1])) {
          double s = 0.0;
          for (std::size_t q = 0; q < g.size(); ++q)
            s += g.at_flat(q) * av.at_flat(q);
          grad_slot(nd.in[1])(0, 0) += s;
        }
        break;
      }
      case Op::kRelu: {
        if (RBF_NEEDS(nd.in[0])) {
          const RealTensor& xv = values_[nd.in[0]];
          RealTensor& gi = grad_slot(nd.in[0]);
          for (std::size_t q = 0; q < g.size(); ++q)
            if (xv.at_flat(q) > 0.0) gi.at_flat(q) += g.at_flat(q);
        }
        break;
      }
      case Op::kTanh: {
        if (RBF_NEEDS(nd.in[0])) {
          RealTensor& gi = grad_slot(nd.in[0]);
          for (std::size_t q = 0; q < g.size(); ++q)
            gi.at_flat(q) += g.at_flat(q) * (1.0 - y.at_flat(q) * y.at_flat(q));
        }
        break;
      }
      case Op::kSoftmaxRows: {
        if (RBF_NEEDS(nd.in[0])) {
          RealTensor& gi = grad_slot(nd.in[0]);
          for (std::size_t r = 0; r < y.rows(); ++r) {
            double dot = 0.0;
            for (std::size_t jj = 0; jj < y.cols(); ++jj) dot += g(r, jj) * y(r, jj);
            for (std::size_t jj = 0; jj < y.cols(); ++jj)
              gi(r, jj) += y(r, jj) * (g(r, jj) - dot);
          }
        }
        break;
      }
      case Op::kLog1p: {
        if (RBF_NEEDS(nd.in[0])) {
          const RealTensor& xv = values_[nd.in[0]];
          RealTensor& gi = grad_slot(nd.in[0]);
          for (std::size_t q = 0; q < g.size(); ++q)
            gi.at_flat(q) += g.at_flat(q) / (1.0 + xv.at_flat(q));
        }
        break;
      }
      case Op::kSqrt: {
        if (RBF_NEEDS(nd.in[0])) {
          RealTensor& gi = grad_slot(nd.in[0]);
          for (std::size_t q = 0; q < g.size(); ++q)
            gi.at_flat(q) += g.at_flat(q) * 0.5 / y.at_flat(q);
        }
        break;
      }
      case Op::kClampMin: {
        if (RBF_NEEDS(nd.in[0])) {
          const RealTensor& xv = values_[nd.in[0]];
          RealTensor& gi = grad_slot(nd.in[0]);
          for (std::size_t q = 0; q < g.size(); ++q)
            if (xv.at_flat(q) > nd.c) gi.at_flat(q) += g.at_flat(q);
        }
        break;
      }
      case Op::kMatmul: {
        const RealTensor& av = values_[nd.in[0]];
        const RealTensor& bv = values_[nd.in[1]];
        if (RBF_NEEDS(nd.in[0])) acc_matmul_nt(g, bv, grad_slot(nd.in[0]));
        if (RBF_NEEDS(nd.in[1])) acc_matmul_tn(av, g, grad_slot(nd.in[1]));
        break;
      }
      case Op::kTranspose: {
        if (RBF_NEEDS(nd.in[0])) {
          RealTensor& gi = grad_slot(nd.in[0]);
          for (std::size_t r = 0; r < y.rows(); ++r)
            for (std::size_t jj = 0; jj < y.cols(); ++jj) gi(jj, r) += g(r, jj);
        }
        break;
      }
      case Op::kAddRowvec: {
        if (RBF_NEEDS(nd.in[0])) {
          RealTensor& gi = grad_slot(nd.in[0]);
          for (std::size_t q = 0; q < g.size(); ++q) gi.at_flat(q) += g.at_flat(q);
        }
        if (RBF_NEEDS(nd.in[1])) {
          RealTensor& gi = grad_slot(nd.in[1]);
          for (std::size_t r = 0; r < y.rows(); ++r)
            for (std::size_t jj = 0; jj < y.cols(); ++jj) gi(0, jj) += g(r, jj);
        }
        break;
      }
      case Op::kScaleRows: {
        const RealTensor& av = values_[nd.in[0]];
        const RealTensor& sv = values_[nd.in[1]];
        if (RBF_NEEDS(nd.in[0])) {
          RealTensor& gi = grad_slot(nd.in[0]);
          for (std::size_t r = 0; r < y.rows(); ++r)
            for (std::size_t jj = 0; jj < y.cols(); ++jj)
              gi(r, jj) += g(r, jj) * sv(r, 0);
        }
        if (RBF_NEEDS(nd.in[1])) {
          RealTensor& gi = grad_slot(nd.in[1]);
          for (std::size_t r = 0; r < y.rows(); ++r) {
            double s = 0.0;
            for (std::size_t jj = 0; jj < y.cols(); ++jj) s += g(r, jj) * av(r, jj);
            gi(r, 0) += s;
          }
        }
        break;
      }
      case Op::kScaleCols: {
        const RealTensor& av = values_[nd.in[0]];
        const RealTensor& sv = values_[nd.in[1]];
        if (RBF_NEEDS(nd.in[0])) {
          RealTensor& gi = grad_slot(nd.in[0]);
          for (std::size_t r = 0; r < y.rows(); ++r)
            for (std::size_t jj = 0; jj < y.cols(); ++jj)
              gi(r, jj) += g(r, jj) * sv(jj, 0);
        }
        if (RBF_NEEDS(nd.in[1])) {
          RealTensor& gi = grad_slot(nd.in[1]);
          for (std::size_t jj = 0; jj < y.cols(); ++jj) {
            double s = 0.0;
            for (std::size_t r = 0; r < y.rows(); ++r) s += g(r, jj) * av(r, jj);
            gi(jj, 0) += s;
          }
        }
        break;
      }
      case Op::kHcat: {
        std::size_t off = 0;
        for (std::size_t s = 0; s < nd.in.size(); ++s) {
          const std::size_t w = nd.idx[s];
          if (RBF_NEEDS(nd.in[s])) {
            RealTensor& gi = grad_slot(nd.in[s]);
            for (std::size_t r = 0; r < y.rows(); ++r)
              for (std::size_t jj = 0; jj < w; ++jj) gi(r, jj) += g(r, off + jj);
          }
          off += w;
        }
        break;
      }
      case Op::kVcat: {
        std::size_t off = 0;
        for (std::size_t s = 0; s < nd.in.size(); ++s) {
          const std::size_t h = nd.idx[s];
          if (RBF_NEEDS(nd.in[s])) {
            RealTensor& gi = grad_slot(nd.in[s]);
            for (std::size_t r = 0; r < h; ++r)
              for (std::size_t jj = 0; jj < y.cols(); ++jj)
                gi(r, jj) += g(off + r, jj);
          }
          off += h;
        }
        break;
      }
      case Op::kGatherRows: {
        if (RBF_NEEDS(nd.in[0])) {
          RealTensor& gi = grad_slot(nd.in[0]);
          for (std::size_t r = 0; r < nd.idx.size(); ++r)
            for (std::size_t jj = 0; jj < y.cols(); ++jj)
              gi(nd.idx[r], jj) += g(r, jj);
        }
        break;
      }
      case Op::kRepeatRows: {
        if (RBF_NEEDS(nd.in[0])) {
          RealTensor& gi = grad_slot(nd.in[0]);
          const std::size_t n = gi.rows();
          for (std::size_t b = 0; b < nd.k; ++b)
            for (std::size_t r = 0; r < n; ++r)
              for (std::size_t jj = 0; jj < y.cols(); ++jj)
                gi(r, jj) += g(b * n + r, jj);
        }
        break;
      }
      case Op::kInterleaveRows: {
        if (RBF_NEEDS(nd.in[0])) {
          RealTensor& gi = grad_slot(nd.in[0]);
          const std::size_t n = gi.rows();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t b = 0; b < nd.k; ++b)
              for (std::size_t jj = 0; jj < y.cols(); ++jj)
                gi(r, jj) += g(r * nd.k + b, jj);
        }
        break;
      }
      case Op::kSelectElems: {
        if (RBF_NEEDS(nd.in[0])) {
          RealTensor& gi = grad_slot(nd.in[0]);
          for (std::size_t r = 0; r < nd.idx.size(); ++r)
            gi.at_flat(nd.idx[r]) += g(r, 0);
        }
        break;
      }
      case Op::kGroupSum: {
        if (RBF_NEEDS(nd.in[0])) {
          RealTensor& gi = grad_slot(nd.in[0]);
          for (std::size_t gg = 0; gg < y.rows(); ++gg)
            for (std::size_t r = 0; r < nd.k; ++r)
              for (std::size_t jj = 0; jj < y.cols(); ++jj)
                gi(gg * nd.k + r, jj) += g(gg, jj);
        }
        break;
      }
      case Op::kSegmentMin: {
        if (RBF_NEEDS(nd.in[0])) {
          RealTensor& gi = grad_slot(nd.in[0]);
          for (std::size_t gg = 0; gg < y.rows(); ++gg)
            for (std::size_t jj = 0; jj < y.cols(); ++jj)
              gi(nd.idx[gg * y.cols() + jj], jj) += g(gg, jj);
        }
        break;
      }
      case Op::kSumPool: {
        for (int in_id : nd.in)
          if (RBF_NEEDS(in_id)) {
            RealTensor& gi = grad_slot(in_id);
            for (std::size_t q = 0; q < g.size(); ++q) gi.at_flat(q) += g.at_flat(q);
          }
        break;
      }
      case Op::kOrderSelect:
      case Op::kMinReduce: {
        if (RBF_NEEDS(nd.in[0]))
          grad_slot(nd.in[0]).at_flat(nd.idx[0]) += g(0, 0);
        break;
      }
      case Op::kSumAll: {
        if (RBF_NEEDS(nd.in[0])) {
          RealTensor& gi = grad_slot(nd.in[0]);
          for (std::size_t q = 0; q < gi.size(); ++q) gi.at_flat(q) += g(0, 0);
        }
        break;
      }
      case Op::kSolve: {
        // x = A^{-1} b:  gb = A^{-T} g,  gA = -gb x^T.
        RealTensor gb = lu_solve_transposed(*nd.lu, g);
        if (RBF_NEEDS(nd.in[1])) {
          RealTensor& gi = grad_slot(nd.in[1]);
          for (std::size_t q = 0; q < gb.size(); ++q) gi.at_flat(q) += gb.at_flat(q);
        }
        if (RBF_NEEDS(nd.in[0])) {
          RealTensor& gi = grad_slot(nd.in[0]);
          const RealTensor& x = y;
          for (std::size_t r = 0; r < gi.rows(); ++r)
            for (std::size_t cc = 0; cc < gi.cols(); ++cc) {
              double s = 0.0;
              for (std::size_t jj = 0; jj < x.cols(); ++jj)
                s += gb(r, jj) * x(cc, jj);
              gi(r, cc) -= s;
            }
        }
        break;
      }
    }
  }
}

#undef RBF_NEEDS

// ---- Complex composites ----

CVar cconst(Tape& t, const ComplexMat& m) {
  return CVar{t.constant(m.re), t.constant(m.im)};
}

CVar cparam(Tape& t, const ComplexMat& m) {
  return CVar{t.param(m.re), t.param(m.im)};
}

ComplexMat cval(const Tape& t, CVar v) {
  return ComplexMat(t.val(v.re), t.val(v.im));
}

CVar cadd(Tape& t, CVar a, CVar b) {
  return CVar{t.add(a.re, b.re), t.add(a.im, b.im)};
}

CVar csub(Tape& t, CVar a, CVar b) {
  return CVar{t.sub(a.re, b.re), t.sub(a.im, b.im)};
}

CVar cmatmul(Tape& t, CVar a, CVar b) {
  // (ar + i ai)(br + i bi) = (ar br - ai bi) + i (ar bi + ai br)
  Var re = t.sub(t.matmul(a.re, b.re), t.matmul(a.im, b.im));
  Var im = t.add(t.matmul(a.re, b.im), t.matmul(a.im, b.re));
  return CVar{re, im};
}

CVar cherm(Tape& t, CVar a) {
  return CVar{t.transpose(a.re), t.neg(t.transpose(a.im))};
}

CVar cscale_cols(Tape& t, CVar a, Var s) {
  return CVar{t.scale_cols(a.re, s), t.scale_cols(a.im, s)};
}

CVar cmul_scalar_var(Tape& t, CVar a, Var s) {
  return CVar{t.mul_scalar_var(a.re, s), t.mul_scalar_var(a.im, s)};
}

Var cabs2(Tape& t, CVar a) {
  return t.add(t.mul(a.re, a.re), t.mul(a.im, a.im));
}

Var cnorm(Tape& t, CVar a, double min_norm) {
  Var total = t.sum_all(cabs2(t, a));
  Var n = t.sqrt_act(total);
  if (t.val(n)(0, 0) < min_norm)
    throw ZeroDirectionError("cnorm: vector norm " +
                             std::to_string(t.val(n)(0, 0)) +
                             " below floor; direction undefined");
  return n;
}

CVar csolve(Tape& t, CVar a, CVar b) {
  const std::size_t n = a.rows(), m = b.cols();
  if (a.cols() != n) throw ShapeError("csolve: matrix must be square");
  if (b.rows() != n) throw ShapeError("csolve: rhs rows mismatch");
  // Assemble [[Re, -Im], [Im, Re]] and [Re(b); Im(b)] on the tape, solve the
  // real system, then split the solution back into (re, im).
  Var top = t.hcat({a.re, t.neg(a.im)});
  Var bot = t.hcat({a.im, a.re});
  Var big = t.vcat({top, bot});
  Var rhs = t.vcat({b.re, b.im});
  Var x = t.solve(big, rhs);
  std::vector<std::size_t> upper(n), lower(n);
  for (std::size_t i = 0; i < n; ++i) {
    upper[i] = i;
    lower[i] = n + i;
  }
  return CVar{t.gather_rows(x, upper), t.gather_rows(x, lower)};
}

// ---- Adam ----

AdamState adam_init(const std::vector<RealTensor*>& params) {
  AdamState st;
  for (const RealTensor* p : params) {
    st.m.emplace_back(p->rows(), p->cols());
    st.v.emplace_back(p->rows(), p->cols());
  }
  return st;
}

void adam_step(const std::vector<RealTensor*>& params,
               const std::vector<const RealTensor*>& grads, AdamState& state,
               double lr, double beta1, double beta2, double eps) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ShapeError("adam_step: params/grads/state length mismatch");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    RealTensor& w = *params[p];
    const RealTensor& g = *grads[p];
    if (!w.same_shape(g) || !w.same_shape(state.m[p]))
      throw ShapeError("adam_step: shape mismatch at tensor " + std::to_string(p));
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.at_flat(i);
      double& m = state.m[p].at_flat(i);
      double& v = state.v[p].at_flat(i);
      m = beta1 * m + (1.0 - beta1) * gi;
      v = beta2 * v + (1.0 - beta2) * gi * gi;
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      w.at_flat(i) -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace rbf
