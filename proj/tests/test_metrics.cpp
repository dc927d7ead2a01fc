// SINR/rate/DAQE tests.  The DAQE oracle is an independent brute-force
// implementation in scalar complex arithmetic: per error sample compute rates,
// take the min, sort, interpolate.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "rbf/metrics.hpp"
#include "rbf/rng.hpp"

using namespace rbf;

namespace {

ComplexMat random_cmat(Rng& rng, std::size_t n, std::size_t k, double sd = 1.0) {
  ComplexMat m(n, k);
  for (std::size_t i = 0; i < n * k; ++i) {
    m.re.at_flat(i) = rng.normal(0.0, sd);
    m.im.at_flat(i) = rng.normal(0.0, sd);
  }
  return m;
}

// Fully independent DAQE reimplementation (scalar complex arithmetic,
// std::sort, order-statistic interpolation with the same integer snap).
double brute_force_daqe(const ComplexMat& h_est, const ComplexMat& w,
                        const ErrorBatch& errs, double rho, double b_mhz,
                        const std::vector<double>& noise) {
  const std::size_t n = h_est.rows(), k = h_est.cols();
  std::vector<double> mins;
  for (const ComplexMat& e : errs.errors) {
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t kk = 0; kk < k; ++kk) {
      std::complex<double> sig = 0.0;
      double interf = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        std::complex<double> dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const std::complex<double> hv(h_est.re(i, kk) + e.re(i, kk),
                                        h_est.im(i, kk) + e.im(i, kk));
          dot += std::conj(hv) * std::complex<double>(w.re(i, j), w.im(i, j));
        }
        if (j == kk)
          sig = dot;
        else
          interf += std::norm(dot);
      }
      const double gamma = std::norm(sig) / (interf + noise[kk]);
      worst = std::min(worst, b_mhz * std::log2(1.0 + gamma));
    }
    mins.push_back(worst);
  }
  std::sort(mins.begin(), mins.end());
  double idx = static_cast<double>(errs.errors.size()) * rho;
  if (std::fabs(idx - std::round(idx)) < 1e-9) idx = std::round(idx);
  const std::size_t lo = static_cast<std::size_t>(std::floor(idx));
  const std::size_t hi = static_cast<std::size_t>(std::ceil(idx));
  const double beta = idx - static_cast<double>(lo);
  if (beta > 0.0) return mins[lo - 1] + beta * (mins[hi - 1] - mins[lo - 1]);
  return mins[lo - 1];
}

}  // namespace

TEST_CASE("sinr: trivial and orthogonal cases") {
  {
    // N=1, K=1, h=1, w=sqrt(P), sigma^2=1 -> Gamma = P.
    ComplexMat h(1, 1);
    h.re(0, 0) = 1.0;
    BeamMatrix w{ComplexMat(1, 1)};
    w.w.re(0, 0) = std::sqrt(42.0);
    std::vector<double> g = sinr(h, w, {1.0});
    CHECK(g[0] == doctest::Approx(42.0).epsilon(1e-12));
  }
  {
    // Orthogonal channels and beams: Gamma_k = |h_k^H w_k|^2 / sigma^2.
    ComplexMat h(2, 2);
    h.re(0, 0) = 2.0;
    h.im(1, 1) = 3.0;
    BeamMatrix w{ComplexMat(2, 2)};
    w.w.re(0, 0) = 1.5;
    w.w.re(1, 1) = 0.5;
    std::vector<double> g = sinr(h, w, {0.5, 0.5});
    CHECK(g[0] == doctest::Approx(9.0 / 0.5).epsilon(1e-12));
    CHECK(g[1] == doctest::Approx(2.25 / 0.5).epsilon(1e-12));
  }
}

TEST_CASE("sinr: random instance vs scalar brute force") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(4), k = 1 + rng.below(4);
    ComplexMat h = random_cmat(rng, n, k);
    BeamMatrix w{random_cmat(rng, n, k)};
    std::vector<double> noise(k);
    for (double& x : noise) x = rng.uniform(0.1, 2.0);
    std::vector<double> g = sinr(h, w, noise);
    for (std::size_t kk = 0; kk < k; ++kk) {
      double interf = 0.0;
      std::complex<double> sig = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        std::complex<double> dot = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          dot += std::conj(std::complex<double>(h.re(i, kk), h.im(i, kk))) *
                 std::complex<double>(w.w.re(i, j), w.w.im(i, j));
        if (j == kk)
          sig = dot;
        else
          interf += std::norm(dot);
      }
      const double expect = std::norm(sig) / (interf + noise[kk]);
      CHECK(std::fabs(g[kk] - expect) / std::max(expect, 1e-12) < 1e-12);
    }
  }
}

TEST_CASE("rate: log2 values in Mbps") {
  std::vector<double> r = rate({1.0, 0.0, 3.0}, 10.0);
  CHECK(r[0] == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(r[1] == 0.0);
  CHECK(r[2] == doctest::Approx(20.0).epsilon(1e-12));
}

TEST_CASE("quantile_ranks: indexing, snap, underflow") {
  {
    QuantileResult q = quantile_ranks(4, 0.5);
    CHECK(q.lower == 2);
    CHECK(q.upper == 2);
    CHECK(q.beta == 0.0);
  }
  {
    QuantileResult q = quantile_ranks(4, 0.6);
    CHECK(q.lower == 2);
    CHECK(q.upper == 3);
    CHECK(q.beta == doctest::Approx(0.4).epsilon(1e-9));
  }
  {
    // 1000 * 0.05 is not exactly 50 in floats; the snap must land rank 50.
    QuantileResult q = quantile_ranks(1000, 0.05);
    CHECK(q.lower == 50);
    CHECK(q.upper == 50);
    CHECK(q.beta == 0.0);
  }
  {
    QuantileResult q = quantile_ranks(20, 0.05);  // U*rho = 1 edge
    CHECK(q.lower == 1);
    CHECK(q.upper == 1);
  }
  CHECK_THROWS_AS(quantile_ranks(10, 0.05), QuantileUnderflowError);
}

TEST_CASE("daqe: hand-built rate ladders") {
  // N=1, K=1, h_est=0, w=1, sigma^2=1: rate_u = 10 log2(1 + |e_u|^2).
  ComplexMat h(1, 1);
  BeamMatrix w{ComplexMat(1, 1)};
  w.w.re(0, 0) = 1.0;
  auto ladder = [&](const std::vector<double>& rates_mbps) {
    ErrorBatch eb;
    for (double r : rates_mbps) {
      ComplexMat e(1, 1);
      e.re(0, 0) = std::sqrt(std::pow(2.0, r / 10.0) - 1.0);
      eb.errors.push_back(e);
    }
    return eb;
  };
  {
    ErrorBatch eb = ladder({1.0, 2.0, 3.0, 4.0});
    QuantileResult q = daqe(h, w, eb, 0.5, 10.0, {1.0});
    CHECK(q.r_hat == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(q.beta == 0.0);
  }
  {
    ErrorBatch eb = ladder({4.0, 1.0, 3.0, 2.0});  // unsorted on purpose
    QuantileResult q = daqe(h, w, eb, 0.6, 10.0, {1.0});
    CHECK(q.r_hat == doctest::Approx(2.4).epsilon(1e-9));
    CHECK(q.lower == 2);
    CHECK(q.upper == 3);
  }
}

TEST_CASE("daqe vs independent brute force, including edge ranks") {
  Rng rng(32);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.below(3), k = 1 + rng.below(3);
    const std::size_t u = 20 + rng.below(30);
    // Mix of rho values: fractional beta, exact-integer beta, U*rho = 1.
    double rho;
    switch (trial % 3) {
      case 0: rho = rng.uniform(0.05, 0.95); break;
      case 1: rho = static_cast<double>(1 + rng.below(u - 1)) / u; break;
      default: rho = 1.0 / static_cast<double>(u); break;
    }
    ComplexMat h = random_cmat(rng, n, k);
    BeamMatrix w{random_cmat(rng, n, k)};
    ErrorBatch eb = gen_errors(rng, n, k, 0.075, u);
    std::vector<double> noise(k, 0.31623);
    const double got = daqe(h, w, eb, rho, 10.0, noise).r_hat;
    const double want = brute_force_daqe(h, w.w, eb, rho, 10.0, noise);
    CHECK(std::fabs(got - want) <= 1e-12 * std::max(1.0, std::fabs(want)));
  }
}

TEST_CASE("daqe_var matches plain daqe") {
  Rng rng(33);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(3), k = 1 + rng.below(3);
    const std::size_t u = 25 + rng.below(40);
    const double rho = rng.uniform(0.05, 0.9);
    ComplexMat h = random_cmat(rng, n, k);
    ComplexMat wm = random_cmat(rng, n, k);
    ErrorBatch eb = gen_errors(rng, n, k, 0.075, u);
    std::vector<double> noise(k, 0.31623);
    const double plain = daqe(h, BeamMatrix{wm}, eb, rho, 10.0, noise).r_hat;
    Tape t;
    Var rh = daqe_var(t, h, cconst(t, wm), eb, rho, 10.0, noise);
    CHECK(std::fabs(t.val(rh)(0, 0) - plain) <=
          1e-12 * std::max(1.0, std::fabs(plain)));
  }
}

TEST_CASE("empirical outage: extremes and order-statistic consistency") {
  Rng rng(34);
  ComplexMat h = random_cmat(rng, 3, 2);
  BeamMatrix w{random_cmat(rng, 3, 2)};
  std::vector<double> noise(2, 0.31623);
  ErrorBatch eb = gen_errors(rng, 3, 2, 0.075, 200);
  CHECK(empirical_outage(h, w, eb, 0.0, 10.0, noise) == 0.0);
  CHECK(empirical_outage(h, w, eb, 1e9, 10.0, noise) == 1.0);

  const double rho = 0.1;
  QuantileResult q = daqe(h, w, eb, rho, 10.0, noise);
  const double out = empirical_outage(h, w, eb, q.r_hat, 10.0, noise);
  CHECK(out >= static_cast<double>(q.lower) / 200.0);
  CHECK(out <= static_cast<double>(q.upper) / 200.0 + 1e-12);
}

TEST_CASE("daqe_var gradient w.r.t. beams vs finite differences") {
  Rng rng(35);
  for (int trial = 0; trial < 3; ++trial) {
    const std::size_t n = 2, k = 2, u = 12;
    ComplexMat h = random_cmat(rng, n, k);
    ComplexMat wm = random_cmat(rng, n, k);
    ErrorBatch eb = gen_errors(rng, n, k, 0.075, u);
    std::vector<double> noise(k, 0.31623);
    const double rho = 0.3;  // fractional index: both order stats in play

    Tape t;
    Var wre = t.param(wm.re), wim = t.param(wm.im);
    Var rh = daqe_var(t, h, CVar{wre, wim}, eb, rho, 10.0, noise);
    t.backward(rh);
    double scale = 1e-8, max_err = 0.0;
    const double hs = 1e-6;
    for (int part = 0; part < 2; ++part)
      for (std::size_t i = 0; i < n * k; ++i) {
        ComplexMat wp = wm;
        (part == 0 ? wp.re : wp.im).at_flat(i) += hs;
        Tape t1;
        const double lp =
            t1.val(daqe_var(t1, h, cconst(t1, wp), eb, rho, 10.0, noise))(0, 0);
        (part == 0 ? wp.re : wp.im).at_flat(i) -= 2 * hs;
        Tape t2;
        const double lm =
            t2.val(daqe_var(t2, h, cconst(t2, wp), eb, rho, 10.0, noise))(0, 0);
        const double fd = (lp - lm) / (2 * hs);
        const double an = t.grad(part == 0 ? wre : wim).at_flat(i);
        max_err = std::max(max_err, std::fabs(an - fd));
        scale = std::max({scale, std::fabs(an), std::fabs(fd)});
      }
    CHECK(max_err / scale < 1e-4);
  }
}

TEST_CASE("scaling all beams up never lowers SINR when interference is zero") {
  ComplexMat h(2, 1);
  h.re(0, 0) = 1.0;
  h.im(1, 0) = -2.0;
  BeamMatrix w{ComplexMat(2, 1)};
  w.w.re(0, 0) = 0.3;
  w.w.im(1, 0) = 0.9;
  const double g1 = sinr(h, w, {1.0})[0];
  BeamMatrix w2{cm_scale(w.w, 3.0)};
  const double g2 = sinr(h, w2, {1.0})[0];
  CHECK(g2 >= g1);
}
