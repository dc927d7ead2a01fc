// Beam recovery tests: closed-form K=1 reduction, eigenvector cases, power
// tightness, RZF limit behaviour, and FD gradients through the tape path.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <functional>
#include <vector>

#include "rbf/beamform.hpp"
#include "rbf/channel.hpp"
#include "rbf/rng.hpp"

using namespace rbf;

namespace {

ComplexMat random_cmat(Rng& rng, std::size_t n, std::size_t k) {
  ComplexMat m(n, k);
  for (std::size_t i = 0; i < n * k; ++i) {
    m.re.at_flat(i) = rng.normal();
    m.im.at_flat(i) = rng.normal();
  }
  return m;
}

double total_beam_power(const BeamMatrix& w) { return cm_norm2(w.w); }

// |<a, b>| for complex column vectors.
double inner_abs(const ComplexMat& m, std::size_t col_a, const ComplexMat& w,
                 std::size_t col_b) {
  std::complex<double> s = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i)
    s += std::conj(std::complex<double>(m.re(i, col_a), m.im(i, col_a))) *
         std::complex<double>(w.re(i, col_b), w.im(i, col_b));
  return std::abs(s);
}

}  // namespace

TEST_CASE("K=1: recover_robust equals MRT closed form for 1000 random triples") {
  Rng rng(21);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(5);
    ComplexMat h = random_cmat(rng, n, 1);
    BeamFeatures f;
    const double p_total = rng.uniform(1.0, 100.0);
    f.s = {rng.uniform(-0.5, 2.0)};
    f.p = {p_total};
    f.q = {rng.uniform(0.0, p_total)};
    f.total_power_mw = p_total;
    BeamMatrix w = recover_robust(h, f, {0.31623});

    const double nn = cm_norm(h);
    const double c = std::sqrt(p_total) / nn;
    for (std::size_t i = 0; i < n; ++i) {
      worst = std::max(worst, std::fabs(w.w.re(i, 0) - c * h.re(i, 0)));
      worst = std::max(worst, std::fabs(w.w.im(i, 0) - c * h.im(i, 0)));
    }
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("K=2 orthogonal channels: beams parallel to own channel") {
  // Orthogonal columns: e_1-like and e_2-like with arbitrary phases.
  ComplexMat h(3, 2);
  h.re(0, 0) = 1.2;
  h.im(0, 0) = -0.7;
  h.re(1, 1) = 0.4;
  h.im(1, 1) = 2.0;
  BeamFeatures f;
  f.s = {0.3, 0.8};
  f.p = {5.0, 7.0};
  f.q = {4.0, 8.0};
  f.total_power_mw = 12.0;
  BeamMatrix w = recover_robust(h, f, {1.0, 1.0});
  // Parallel: |<h_k, w_k>| == |h_k| * |w_k|.
  for (std::size_t k = 0; k < 2; ++k) {
    double hn = 0.0, wn = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      hn += h.re(i, k) * h.re(i, k) + h.im(i, k) * h.im(i, k);
      wn += w.w.re(i, k) * w.w.re(i, k) + w.w.im(i, k) * w.w.im(i, k);
    }
    CHECK(inner_abs(h, k, w.w, k) ==
          doctest::Approx(std::sqrt(hn) * std::sqrt(wn)).epsilon(1e-10));
  }
}

TEST_CASE("recover_perfect equals recover_robust with s = 0") {
  Rng rng(22);
  ComplexMat h = random_cmat(rng, 4, 3);
  std::vector<double> p = {3.0, 4.0, 5.0}, q = {2.0, 6.0, 4.0};
  std::vector<double> noise(3, 0.31623);
  BeamMatrix a = recover_perfect(h, p, q, noise);
  BeamFeatures f;
  f.s = {0.0, 0.0, 0.0};
  f.p = p;
  f.q = q;
  f.total_power_mw = 12.0;
  BeamMatrix b = recover_robust(h, f, noise);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(a.w.re.at_flat(i) == b.w.re.at_flat(i));
    CHECK(a.w.im.at_flat(i) == b.w.im.at_flat(i));
  }
  CHECK(total_beam_power(a) == doctest::Approx(12.0).epsilon(1e-9));
}

TEST_CASE("power tightness across recovery paths, 1e3 random forwards") {
  Rng rng(23);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(4), k = 1 + rng.below(4);
    ComplexMat h = random_cmat(rng, n, k);
    BeamFeatures f;
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      f.s.push_back(rng.uniform(-0.9, 2.0));
      f.p.push_back(rng.uniform(0.1, 50.0));
      f.q.push_back(rng.uniform(0.0, 50.0));
      total += f.p[j];
    }
    f.total_power_mw = total;
    std::vector<double> noise(k, 0.31623);
    BeamMatrix w = recover_robust(h, f, noise);
    CHECK(total_beam_power(w) == doctest::Approx(total).epsilon(1e-9));

    BeamMatrix wm = mrt(h, f.p);
    CHECK(total_beam_power(wm) == doctest::Approx(total).epsilon(1e-9));

    BeamMatrix wr = rzf(h, f.p, total, noise);
    CHECK(total_beam_power(wr) == doctest::Approx(total).epsilon(1e-9));
  }
}

TEST_CASE("rzf: K=1 gives MRT direction; huge alpha approaches MRT direction") {
  Rng rng(24);
  {
    ComplexMat h = random_cmat(rng, 4, 1);
    BeamMatrix w = rzf(h, {9.0}, 9.0, {0.31623});
    const double c = 3.0 / cm_norm(h);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(w.w.re(i, 0) == doctest::Approx(c * h.re(i, 0)).epsilon(1e-9));
      CHECK(w.w.im(i, 0) == doctest::Approx(c * h.im(i, 0)).epsilon(1e-9));
    }
  }
  {
    // alpha = K sigma^2 / P = 1e9 with K=2, sigma^2=1, P=2e-9.
    ComplexMat h = random_cmat(rng, 4, 2);
    BeamMatrix w = rzf(h, {1e-9, 1e-9}, 2e-9, {1.0, 1.0});
    for (std::size_t k = 0; k < 2; ++k) {
      double hn = 0.0, dev = 0.0;
      for (std::size_t i = 0; i < 4; ++i)
        hn += h.re(i, k) * h.re(i, k) + h.im(i, k) * h.im(i, k);
      hn = std::sqrt(hn);
      const double wn = std::sqrt(1e-9);
      for (std::size_t i = 0; i < 4; ++i) {
        dev = std::max(dev, std::fabs(w.w.re(i, k) / wn - h.re(i, k) / hn));
        dev = std::max(dev, std::fabs(w.w.im(i, k) / wn - h.im(i, k) / hn));
      }
      CHECK(dev < 1e-3);
    }
  }
}

TEST_CASE("mrt: zero channel column raises ZeroDirection") {
  ComplexMat h(3, 2);
  h.re(0, 0) = 1.0;  // column 1 all zero
  CHECK_THROWS_AS(mrt(h, {1.0, 1.0}), ZeroDirectionError);
}

TEST_CASE("phase rotation of one channel column leaves |h_j^H w_k| invariant") {
  Rng rng(25);
  ComplexMat h = random_cmat(rng, 4, 3);
  BeamFeatures f;
  f.s = {0.2, -0.1, 0.5};
  f.p = {3.0, 4.0, 5.0};
  f.q = {2.0, 2.0, 8.0};
  f.total_power_mw = 12.0;
  std::vector<double> noise(3, 0.31623);
  BeamMatrix w0 = recover_robust(h, f, noise);

  const double theta = 1.234;
  ComplexMat h2 = h;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::complex<double> v(h.re(i, 1), h.im(i, 1));
    const std::complex<double> r = v * std::polar(1.0, theta);
    h2.re(i, 1) = r.real();
    h2.im(i, 1) = r.imag();
  }
  BeamMatrix w1 = recover_robust(h2, f, noise);
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t k = 0; k < 3; ++k)
      CHECK(inner_abs(h2, j, w1.w, k) ==
            doctest::Approx(inner_abs(h, j, w0.w, k)).epsilon(1e-9));
}

TEST_CASE("normalize_features: symmetry, exact sums, scale invariance") {
  Tape t;
  RealTensor pq(4, 2, {0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5});
  RealTensor raw_s(4, 1, {0.1, -0.2, 0.0, 3.0});
  BeamFeaturesVar f =
      normalize_features_var(t, t.constant(raw_s), t.constant(pq), 1000.0);
  for (std::size_t j = 0; j < 4; ++j)
    CHECK(t.val(f.p)(j, 0) == doctest::Approx(250.0).epsilon(1e-12));
  CHECK(f.clamp_active == 0);

  Rng rng(26);
  RealTensor pq2(3, 2);
  for (std::size_t i = 0; i < 6; ++i) pq2.at_flat(i) = rng.uniform(0.05, 1.0);
  Tape t2;
  BeamFeaturesVar f2 = normalize_features_var(
      t2, t2.constant(RealTensor(3, 1)), t2.constant(pq2), 777.0);
  double sp = 0.0, sq = 0.0;
  for (std::size_t j = 0; j < 3; ++j) {
    sp += t2.val(f2.p)(j, 0);
    sq += t2.val(f2.q)(j, 0);
  }
  CHECK(sp == doctest::Approx(777.0).epsilon(1e-12));
  CHECK(sq == doctest::Approx(777.0).epsilon(1e-12));

  // Scaling the raw pair matrix by a constant leaves p and q unchanged.
  Tape t3;
  BeamFeaturesVar f3 = normalize_features_var(
      t3, t3.constant(RealTensor(3, 1)), t3.constant(rt_scale(pq2, 4.2)), 777.0);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(t3.val(f3.p)(j, 0) == doctest::Approx(t2.val(f2.p)(j, 0)).epsilon(1e-12));
    CHECK(t3.val(f3.q)(j, 0) == doctest::Approx(t2.val(f2.q)(j, 0)).epsilon(1e-12));
  }

  // Clamp counting.
  Tape t4;
  BeamFeaturesVar f4 = normalize_features_var(
      t4, t4.constant(RealTensor(2, 1, {-5.0, 0.0})),
      t4.constant(RealTensor(2, 2, {0.5, 0.5, 0.5, 0.5})), 10.0);
  CHECK(f4.clamp_active == 1);
  CHECK(t4.val(f4.s)(0, 0) == doctest::Approx(kSFloor - 1.0));
}

TEST_CASE("tape recovery: power tightness and agreement with plain path") {
  Rng rng(27);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(3), k = 1 + rng.below(3);
    ComplexMat h = random_cmat(rng, n, k);
    BeamFeatures f;
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      f.s.push_back(rng.uniform(-0.5, 1.0));
      f.p.push_back(rng.uniform(0.5, 20.0));
      f.q.push_back(rng.uniform(0.0, 20.0));
      total += f.p[j];
    }
    f.total_power_mw = total;
    std::vector<double> noise(k, 0.31623);
    BeamMatrix plain = recover_robust(h, f, noise);

    Tape t;
    RealTensor sv(k, 1), pv(k, 1), qv(k, 1);
    for (std::size_t j = 0; j < k; ++j) {
      sv(j, 0) = f.s[j];
      pv(j, 0) = f.p[j];
      qv(j, 0) = f.q[j];
    }
    BeamFeaturesVar fv;
    fv.s = t.constant(sv);
    fv.p = t.constant(pv);
    fv.q = t.constant(qv);
    fv.total_power_mw = total;
    CVar w = recover_robust_var(t, cconst(t, h), fv, noise);
    double tp = 0.0;
    for (std::size_t i = 0; i < n * k; ++i) {
      tp += t.val(w.re).at_flat(i) * t.val(w.re).at_flat(i) +
            t.val(w.im).at_flat(i) * t.val(w.im).at_flat(i);
      CHECK(t.val(w.re).at_flat(i) ==
            doctest::Approx(plain.w.re.at_flat(i)).epsilon(1e-9));
      CHECK(t.val(w.im).at_flat(i) ==
            doctest::Approx(plain.w.im.at_flat(i)).epsilon(1e-9));
    }
    CHECK(tp == doctest::Approx(total).epsilon(1e-9));
  }
}

TEST_CASE("gradient of a smooth scalar of W w.r.t. (s, logits, h) vs FD") {
  Rng rng(28);
  const std::size_t n = 3, k = 2;
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<RealTensor> ps;
    RealTensor raw_s(k, 1), logits(k, 2), hre(n, k), him(n, k);
    for (std::size_t i = 0; i < k; ++i) raw_s(i, 0) = rng.uniform(-0.4, 1.0);
    for (std::size_t i = 0; i < 2 * k; ++i) logits.at_flat(i) = rng.normal();
    for (std::size_t i = 0; i < n * k; ++i) {
      hre.at_flat(i) = rng.normal();
      him.at_flat(i) = rng.normal();
    }
    ps = {raw_s, logits, hre, him};
    const std::uint64_t wseed = rng.next_u64();
    auto build = [wseed](Tape& t, const std::vector<Var>& v) {
      Rng local(wseed);
      CVar h{v[2], v[3]};
      BeamFeaturesVar f =
          normalize_features_var(t, v[0], t.softmax_rows(v[1]), 25.0);
      CVar w = recover_robust_var(t, h, f, {0.31623, 0.31623});
      RealTensor wr(w.rows(), w.cols()), wi(w.rows(), w.cols());
      for (std::size_t i = 0; i < wr.size(); ++i) {
        wr.at_flat(i) = local.uniform(0.5, 1.5);
        wi.at_flat(i) = local.uniform(0.5, 1.5);
      }
      return t.add(t.sum_all(t.mul(w.re, t.constant(wr))),
                   t.sum_all(t.mul(w.im, t.constant(wi))));
    };
    // FD oracle on every feature and channel entry.
    Tape tt;
    std::vector<Var> vars;
    for (const RealTensor& p : ps) vars.push_back(tt.param(p));
    Var loss = build(tt, vars);
    tt.backward(loss);
    double scale = 1e-8, max_err = 0.0;
    const double h_step = 1e-5;
    for (std::size_t pi = 0; pi < ps.size(); ++pi)
      for (std::size_t i = 0; i < ps[pi].size(); ++i) {
        std::vector<RealTensor> pp = ps;
        pp[pi].at_flat(i) += h_step;
        Tape tp;
        std::vector<Var> vp;
        for (const RealTensor& p : pp) vp.push_back(tp.param(p));
        const double lp = tp.val(build(tp, vp))(0, 0);
        pp[pi].at_flat(i) -= 2 * h_step;
        Tape tm;
        std::vector<Var> vm;
        for (const RealTensor& p : pp) vm.push_back(tm.param(p));
        const double lm = tm.val(build(tm, vm))(0, 0);
        const double fd = (lp - lm) / (2 * h_step);
        const double an = tt.grad(vars[pi]).at_flat(i);
        max_err = std::max(max_err, std::fabs(an - fd));
        scale = std::max({scale, std::fabs(an), std::fabs(fd)});
      }
    CHECK(max_err / scale < 1e-4);
  }
}
