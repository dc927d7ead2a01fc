#include "rbf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rbf {

namespace {

constexpr double kLn2 = 0.69314718055994530941723212145818;

// |h_k^H w_j|^2 for all (k, j), with the same accumulation order as the
// tape's batched path (separate real/imag product sums).
void abs2_products(const ComplexMat& h, const ComplexMat& w, RealTensor& out) {
  const std::size_t n = h.rows(), k = h.cols(), m = w.cols();
  for (std::size_t kk = 0; kk < k; ++kk)
    for (std::size_t j = 0; j < m; ++j) {
      double rr = 0.0, ri = 0.0, ir = 0.0, ii = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        // conj(h[i,kk]) * w[i,j]
        rr += h.re(i, kk) * w.re(i, j);
        ii += h.im(i, kk) * w.im(i, j);
        ri += h.re(i, kk) * w.im(i, j);
        ir += h.im(i, kk) * w.re(i, j);
      }
      const double re = rr + ii;
      const double im = ri - ir;
      out(kk, j) = re * re + im * im;
    }
}

}  // namespace

std::vector<double> sinr(const ComplexMat& h, const BeamMatrix& w,
                         const std::vector<double>& noise_mw) {
  const std::size_t k = h.cols();
  if (w.w.rows() != h.rows() || w.w.cols() != k)
    throw ShapeError("sinr: channel/beam shape mismatch");
  if (noise_mw.size() != k) throw ShapeError("sinr: noise length != K");
  RealTensor a2(k, k);
  abs2_products(h, w.w, a2);
  std::vector<double> gamma(k);
  for (std::size_t kk = 0; kk < k; ++kk) {
    // rowsum - signal, matching the tape path bit-for-bit.
    double rowsum = 0.0;
    for (std::size_t j = 0; j < k; ++j) rowsum += a2(kk, j);
    gamma[kk] = a2(kk, kk) / ((rowsum - a2(kk, kk)) + noise_mw[kk]);
  }
  return gamma;
}

std::vector<double> rate(const std::vector<double>& gamma, double bandwidth_mhz) {
  std::vector<double> r(gamma.size());
  for (std::size_t i = 0; i < gamma.size(); ++i)
    r[i] = bandwidth_mhz / kLn2 * std::log1p(gamma[i]);
  return r;
}

double min_rate(const ComplexMat& h, const BeamMatrix& w,
                const std::vector<double>& noise_mw, double bandwidth_mhz) {
  const std::vector<double> g = sinr(h, w, noise_mw);
  double gmin = g[0];
  for (double x : g) gmin = std::min(gmin, x);
  // min commutes with the monotone rate map.
  return bandwidth_mhz / kLn2 * std::log1p(gmin);
}

QuantileResult quantile_ranks(std::size_t u, double rho) {
  double idx = static_cast<double>(u) * rho;
  const double nearest = std::round(idx);
  if (std::fabs(idx - nearest) < 1e-9) idx = nearest;  // de-noise U*rho
  if (idx < 1.0)
    throw QuantileUnderflowError(
        "quantile index U*rho = " + std::to_string(idx) +
        " underflows rank 1 (U=" + std::to_string(u) + ")");
  QuantileResult q;
  q.lower = static_cast<std::size_t>(std::floor(idx));
  q.upper = static_cast<std::size_t>(std::ceil(idx));
  q.beta = idx - static_cast<double>(q.lower);
  if (q.upper > u) q.upper = u;  // possible only when rho == 1 within snap
  return q;
}

std::vector<double> min_rates_over_errors(const ComplexMat& h_est,
                                          const BeamMatrix& w,
                                          const ErrorBatch& errs,
                                          double bandwidth_mhz,
                                          const std::vector<double>& noise_mw) {
  std::vector<double> mins;
  mins.reserve(errs.errors.size());
  for (const ComplexMat& e : errs.errors) {
    const ComplexMat h = apply_error(h_est, e);
    mins.push_back(min_rate(h, w, noise_mw, bandwidth_mhz));
  }
  return mins;
}

QuantileResult daqe(const ComplexMat& h_est, const BeamMatrix& w,
                    const ErrorBatch& errs, double rho, double bandwidth_mhz,
                    const std::vector<double>& noise_mw) {
  const std::size_t u = errs.errors.size();
  QuantileResult q = quantile_ranks(u, rho);
  std::vector<double> mins =
      min_rates_over_errors(h_est, w, errs, bandwidth_mhz, noise_mw);
  std::sort(mins.begin(), mins.end(), value_less);
  const double lo = mins[q.lower - 1];
  if (q.beta > 0.0) {
    const double hi = mins[q.upper - 1];
    q.r_hat = lo + q.beta * (hi - lo);
  } else {
    q.r_hat = lo;
  }
  return q;
}

double empirical_outage(const ComplexMat& h_est, const BeamMatrix& w,
                        const ErrorBatch& errs, double r, double bandwidth_mhz,
                        const std::vector<double>& noise_mw) {
  const std::vector<double> mins =
      min_rates_over_errors(h_est, w, errs, bandwidth_mhz, noise_mw);
  std::size_t cnt = 0;
  for (double m : mins)
    if (m <= r) ++cnt;
  return static_cast<double>(cnt) / static_cast<double>(mins.size());
}

Var daqe_var(Tape& t, const ComplexMat& h_est, CVar w, const ErrorBatch& errs,
             double rho, double bandwidth_mhz, const std::vector<double>& noise_mw) {
  const std::size_t n = h_est.rows(), k = h_est.cols();
  const std::size_t u = errs.errors.size();
  if (w.rows() != n || w.cols() != k) throw ShapeError("daqe: beam shape mismatch");
  if (noise_mw.size() != k) throw ShapeError("daqe: noise length != K");
  const QuantileResult ranks = quantile_ranks(u, rho);

  // Stack conj(h_{k,u})^T over (u, k) into one (U*K) x N constant.
  RealTensor sre(u * k, n), sim(u * k, n);
  for (std::size_t uu = 0; uu < u; ++uu) {
    const ComplexMat& e = errs.errors[uu];
    for (std::size_t kk = 0; kk < k; ++kk) {
      const std::size_t row = uu * k + kk;
      for (std::size_t i = 0; i < n; ++i) {
        sre(row, i) = h_est.re(i, kk) + e.re(i, kk);
        sim(row, i) = -(h_est.im(i, kk) + e.im(i, kk));
      }
    }
  }
  CVar hh{t.constant(std::move(sre)), t.constant(std::move(sim))};
  Var a2 = cabs2(t, cmatmul(t, hh, w));  // (U*K) x K: |h_{k,u}^H w_j|^2

  std::vector<std::size_t> diag(u * k);
  RealTensor noise_col(u * k, 1);
  for (std::size_t uu = 0; uu < u; ++uu)
    for (std::size_t kk = 0; kk < k; ++kk) {
      diag[uu * k + kk] = (uu * k + kk) * k + kk;
      noise_col(uu * k + kk, 0) = noise_mw[kk];
    }
  Var sig = t.select_elems(a2, diag);                                 // signal term
  Var rowsum = t.matmul(a2, t.constant(RealTensor::full(k, 1, 1.0)));
  Var denom = t.add(t.sub(rowsum, sig), t.constant(std::move(noise_col)));
  Var gamma = t.div(sig, denom);                                      // (U*K) x 1
  // min over users first: the rate map is monotone, so it commutes with min.
  Var gmin = t.segment_min(gamma, k);                                 // U x 1
  Var rmin = t.scale(t.log1p_act(gmin), bandwidth_mhz / kLn2);

  Var lo = t.order_select(rmin, ranks.lower);
  if (ranks.beta > 0.0) {
    Var hi = t.order_select(rmin, ranks.upper);
    return t.add(lo, t.scale(t.sub(hi, lo), ranks.beta));
  }
  return lo;
}

}  // namespace rbf
