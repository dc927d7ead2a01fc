#include "rbf/beamform.hpp"

#include <cmath>
#include <string>

#include "rbf/linalg.hpp"

namespace rbf {

namespace {

void check_features(const ComplexMat& h, const std::vector<double>& s,
                    const std::vector<double>& p, const std::vector<double>& q,
                    const std::vector<double>& noise) {
  const std::size_t k = h.cols();
  if (s.size() != k || p.size() != k || q.size() != k)
    throw ShapeError("beam features must have length K=" + std::to_string(k));
  if (noise.size() != k)
    throw ShapeError("noise vector must have length K=" + std::to_string(k));
}

double mean_noise(const std::vector<double>& noise) {
  double s = 0.0;
  for (double x : noise) s += x;
  return s / static_cast<double>(noise.size());
}

// Scales column k of `dirs` to norm sqrt(p_k); shared by all plain paths.
BeamMatrix scale_columns_to_power(const ComplexMat& dirs, const std::vector<double>& p) {
  const std::size_t n = dirs.rows(), k = dirs.cols();
  BeamMatrix out{ComplexMat(n, k)};
  for (std::size_t j = 0; j < k; ++j) {
    double nn = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      nn += dirs.re(i, j) * dirs.re(i, j) + dirs.im(i, j) * dirs.im(i, j);
    nn = std::sqrt(nn);
    if (nn < 1e-150)
      throw ZeroDirectionError("beam direction for user " + std::to_string(j) +
                               " has zero norm");
    const double c = std::sqrt(p[j]) / nn;
    for (std::size_t i = 0; i < n; ++i) {
      out.w.re(i, j) = c * dirs.re(i, j);
      out.w.im(i, j) = c * dirs.im(i, j);
    }
  }
  return out;
}

}  // namespace

BeamMatrix recover_robust(const ComplexMat& h_est, const BeamFeatures& feats,
                          const std::vector<double>& noise_mw) {
  check_features(h_est, feats.s, feats.p, feats.q, noise_mw);
  const std::size_t n = h_est.rows(), k = h_est.cols();
  // B = sum_j (q_j / sigma_j^2) h_j h_j^H, shared across users.
  ComplexMat scaled = h_est;
  for (std::size_t j = 0; j < k; ++j) {
    const double c = feats.q[j] / noise_mw[j];
    for (std::size_t i = 0; i < n; ++i) {
      scaled.re(i, j) *= c;
      scaled.im(i, j) *= c;
    }
  }
  const ComplexMat b = cm_matmul(scaled, cm_herm(h_est));
  ComplexMat dirs(n, k);
  for (std::size_t j = 0; j < k; ++j) {
    ComplexMat a = b;
    const double diag = 1.0 + std::max(feats.s[j], kSFloor - 1.0);
    for (std::size_t i = 0; i < n; ++i) a.re(i, i) += diag;
    ComplexMat d = cm_solve(a, cm_col(h_est, j));
    for (std::size_t i = 0; i < n; ++i) {
      dirs.re(i, j) = d.re(i, 0);
      dirs.im(i, j) = d.im(i, 0);
    }
  }
  return scale_columns_to_power(dirs, feats.p);
}

BeamMatrix recover_perfect(const ComplexMat& h, const std::vector<double>& p,
                           const std::vector<double>& q,
                           const std::vector<double>& noise_mw) {
  BeamFeatures f;
  f.s.assign(h.cols(), 0.0);
  f.p = p;
  f.q = q;
  double total = 0.0;
  for (double x : p) total += x;
  f.total_power_mw = total;
  return recover_robust(h, f, noise_mw);
}

BeamMatrix rzf(const ComplexMat& h_est, const std::vector<double>& p,
               double total_power_mw, const std::vector<double>& noise_mw) {
  const std::size_t n = h_est.rows(), k = h_est.cols();
  if (p.size() != k) throw ShapeError("rzf: p must have length K");
  if (!(total_power_mw > 0)) throw ConfigError("rzf: total power must be positive");
  const double alpha = static_cast<double>(k) * mean_noise(noise_mw) / total_power_mw;
  ComplexMat m = cm_matmul(h_est, cm_herm(h_est));
  for (std::size_t i = 0; i < n; ++i) m.re(i, i) += alpha;
  ComplexMat dirs = cm_solve(m, h_est);
  return scale_columns_to_power(dirs, p);
}

BeamMatrix mrt(const ComplexMat& h_est, const std::vector<double>& p) {
  if (p.size() != h_est.cols()) throw ShapeError("mrt: p must have length K");
  return scale_columns_to_power(h_est, p);
}

// ---- Tape paths ----

CVar ccol(Tape& t, CVar h, std::size_t k) {
  const std::size_t n = h.rows(), cols = h.cols();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i * cols + k;
  return CVar{t.select_elems(h.re, idx), t.select_elems(h.im, idx)};
}

namespace {

// Per-column norms of an N x K complex Var as a K x 1 Var; raises
// ZeroDirectionError on a vanishing column.
Var ccolnorms(Tape& t, CVar d) {
  const std::size_t n = d.rows(), k = d.cols();
  Var a2 = cabs2(t, d);                                    // N x K
  Var colsum = t.matmul(t.constant(RealTensor::full(1, n, 1.0)), a2);  // 1 x K
  Var norms = t.sqrt_act(t.transpose(colsum));             // K x 1
  for (std::size_t j = 0; j < k; ++j)
    if (t.val(norms)(j, 0) < 1e-150)
      throw ZeroDirectionError("beam direction for user " + std::to_string(j) +
                               " has zero norm");
  return norms;
}

// W = dirs with column k scaled to norm sqrt(p_k).
CVar scale_columns_to_power_var(Tape& t, CVar dirs, Var p) {
  Var coefs = t.div(t.sqrt_act(p), ccolnorms(t, dirs));    // K x 1
  return cscale_cols(t, dirs, coefs);
}

}  // namespace

BeamFeaturesVar normalize_features_var(Tape& t, Var raw_s, Var pq,
                                       double total_power_mw) {
  const std::size_t k = raw_s.rows;
  if (raw_s.cols != 1) throw ShapeError("normalize_features: raw_s must be K x 1");
  if (pq.rows != k || pq.cols != 2)
    throw ShapeError("normalize_features: pq must be K x 2 softmax pairs");
  BeamFeaturesVar f;
  f.total_power_mw = total_power_mw;
  for (std::size_t j = 0; j < k; ++j)
    if (t.val(raw_s)(j, 0) < kSFloor - 1.0) ++f.clamp_active;
  f.s = t.clamp_min(raw_s, kSFloor - 1.0);
  std::vector<std::size_t> pid(k), qid(k);
  for (std::size_t j = 0; j < k; ++j) {
    pid[j] = 2 * j;
    qid[j] = 2 * j + 1;
  }
  Var pt = t.select_elems(pq, pid);
  Var qt = t.select_elems(pq, qid);
  Var ptot = t.constant(RealTensor::scalar(total_power_mw));
  f.p = t.mul_scalar_var(pt, t.div(ptot, t.sum_all(pt)));
  f.q = t.mul_scalar_var(qt, t.div(ptot, t.sum_all(qt)));
  return f;
}

CVar recover_robust_var(Tape& t, CVar h_est, const BeamFeaturesVar& feats,
                        const std::vector<double>& noise_mw) {
  const std::size_t n = h_est.rows(), k = h_est.cols();
  if (noise_mw.size() != k) throw ShapeError("recover_robust: noise length != K");
  RealTensor noise_col(k, 1);
  for (std::size_t j = 0; j < k; ++j) noise_col(j, 0) = noise_mw[j];
  Var qscale = t.div(feats.q, t.constant(noise_col));      // q_j / sigma_j^2
  CVar b = cmatmul(t, cscale_cols(t, h_est, qscale), cherm(t, h_est));  // N x N
  Var eye = t.constant(RealTensor::eye(n));
  std::vector<Var> wre, wim;
  for (std::size_t j = 0; j < k; ++j) {
    Var diag = t.add_scalar(t.select_elems(feats.s, {j}), 1.0);  // 1 + s_j
    CVar a{t.add(b.re, t.mul_scalar_var(eye, diag)), b.im};
    CVar hj = ccol(t, h_est, j);
    CVar d = csolve(t, a, hj);
    Var nrm = cnorm(t, d);
    Var coef = t.div(t.sqrt_act(t.select_elems(feats.p, {j})), nrm);
    CVar wj = cmul_scalar_var(t, d, coef);
    wre.push_back(wj.re);
    wim.push_back(wj.im);
  }
  return CVar{t.hcat(wre), t.hcat(wim)};
}

CVar rzf_var(Tape& t, CVar h_est, Var p, double total_power_mw,
             const std::vector<double>& noise_mw) {
  const std::size_t n = h_est.rows(), k = h_est.cols();
  if (!(total_power_mw > 0)) throw ConfigError("rzf: total power must be positive");
  const double alpha = static_cast<double>(k) * mean_noise(noise_mw) / total_power_mw;
  CVar m = cmatmul(t, h_est, cherm(t, h_est));
  CVar areg{t.add(m.re, t.constant(rt_scale(RealTensor::eye(n), alpha))), m.im};
  CVar dirs = csolve(t, areg, h_est);
  return scale_columns_to_power_var(t, dirs, p);
}

CVar mrt_var(Tape& t, CVar h_est, Var p) {
  return scale_columns_to_power_var(t, h_est, p);
}

}  // namespace rbf
