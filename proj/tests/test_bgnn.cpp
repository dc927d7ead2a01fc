// Message-passing network tests.  Permutation checks build explicitly
// permuted inputs (channel columns/rows plus the matching message slices) and
// demand bit-exact agreement; gradients are checked against central finite
// differences over every weight of a down-sized network.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <vector>

#include "rbf/bgnn.hpp"
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

std::vector<std::size_t> random_perm(Rng& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

// h'(n, k) = h(n, perm[k])
ComplexMat permute_user_cols(const ComplexMat& h, const std::vector<std::size_t>& perm) {
  ComplexMat out(h.rows(), h.cols());
  for (std::size_t n = 0; n < h.rows(); ++n)
    for (std::size_t k = 0; k < h.cols(); ++k) {
      out.re(n, k) = h.re(n, perm[k]);
      out.im(n, k) = h.im(n, perm[k]);
    }
  return out;
}

// h'(n, k) = h(perm[n], k)
ComplexMat permute_antenna_rows(const ComplexMat& h, const std::vector<std::size_t>& perm) {
  ComplexMat out(h.rows(), h.cols());
  for (std::size_t n = 0; n < h.rows(); ++n)
    for (std::size_t k = 0; k < h.cols(); ++k) {
      out.re(n, k) = h.re(perm[n], k);
      out.im(n, k) = h.im(perm[n], k);
    }
  return out;
}

RealTensor permute_rows(const RealTensor& t, const std::vector<std::size_t>& perm) {
  RealTensor out(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) out(i, j) = t(perm[i], j);
  return out;
}

MessagesState permute_users_state(const MessagesState& ms,
                                  const std::vector<std::size_t>& perm,
                                  std::size_t n, std::size_t k) {
  MessagesState out;
  out.g = permute_rows(ms.g, perm);
  out.b = permute_rows(ms.b, perm);
  out.m = RealTensor(n * k, ms.m.cols());
  for (std::size_t nn = 0; nn < n; ++nn)
    for (std::size_t kk = 0; kk < k; ++kk)
      for (std::size_t c = 0; c < ms.m.cols(); ++c)
        out.m(nn * k + kk, c) = ms.m(nn * k + perm[kk], c);
  return out;
}

MessagesState permute_antennas_state(const MessagesState& ms,
                                     const std::vector<std::size_t>& perm,
                                     std::size_t n, std::size_t k) {
  MessagesState out = ms;
  for (std::size_t nn = 0; nn < n; ++nn)
    for (std::size_t kk = 0; kk < k; ++kk)
      for (std::size_t c = 0; c < ms.m.cols(); ++c)
        out.m(nn * k + kk, c) = ms.m(perm[nn] * k + kk, c);
  return out;
}

bool bit_equal(const RealTensor& a, const RealTensor& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

BgnnConfig tiny_cfg(std::size_t head_dim, HeadActivation head) {
  BgnnConfig cfg;
  cfg.layers = 2;
  cfg.msg_dim = 2;
  cfg.hidden = 8;
  cfg.head_dim = head_dim;
  cfg.head = head;
  return cfg;
}

}  // namespace

TEST_CASE("init_params: architecture dimensions") {
  Rng rng(41);
  {
    BgnnParams p = init_params(rng, snet_config());
    REQUIRE(p.layers.size() == 5);
    for (const LayerParams& lp : p.layers) {
      CHECK(lp.phi_c.w1.rows() == 6);    // g(1) + b(3) + Re/Im h
      CHECK(lp.phi_c.w1.cols() == 200);
      CHECK(lp.phi_c.w2.rows() == 200);
      CHECK(lp.phi_c.w2.cols() == 3);
      CHECK(lp.phi_m.w1.rows() == 11);   // m(6) + c(3) + Re/Im h
      CHECK(lp.phi_m.w2.cols() == 3);
      CHECK(lp.phi_d.w1.rows() == 7);    // m_k(6) + power
      CHECK(lp.phi_d.w2.cols() == 1);
      CHECK(lp.phi_c.b1.rows() == 1);
      CHECK(lp.phi_c.b1.cols() == 200);
    }
  }
  {
    BgnnParams p = init_params(rng, pnet_config());
    for (const LayerParams& lp : p.layers) {
      CHECK(lp.phi_c.w1.rows() == 9);    // g(2) + b(5) + Re/Im h
      CHECK(lp.phi_m.w1.rows() == 17);   // m(10) + c(5) + Re/Im h
      CHECK(lp.phi_d.w1.rows() == 11);   // m_k(10) + power
      CHECK(lp.phi_d.w2.cols() == 2);
    }
  }
  BgnnConfig bad;
  bad.layers = 0;
  CHECK_THROWS_AS(init_params(rng, bad), ConfigError);
}

TEST_CASE("init_params: seeded determinism, zero biases, Glorot bound") {
  Rng a(7), b(7), c(8);
  BgnnParams pa = init_params(a, snet_config());
  BgnnParams pb = init_params(b, snet_config());
  BgnnParams pc = init_params(c, snet_config());
  auto ta = pa.tensors(), tb = pb.tensors(), tc = pc.tensors();
  bool same_ab = true, same_ac = true;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    same_ab = same_ab && bit_equal(*ta[i], *tb[i]);
    same_ac = same_ac && bit_equal(*ta[i], *tc[i]);
  }
  CHECK(same_ab);
  CHECK(!same_ac);
  for (const LayerParams& lp : pa.layers) {
    for (std::size_t i = 0; i < lp.phi_c.b1.size(); ++i)
      CHECK(lp.phi_c.b1.at_flat(i) == 0.0);
    const double bound = std::sqrt(6.0 / (6 + 200));
    for (std::size_t i = 0; i < lp.phi_c.w1.size(); ++i)
      CHECK(std::fabs(lp.phi_c.w1.at_flat(i)) <= bound);
  }
}

TEST_CASE("param_count: closed form, independent of system size") {
  Rng rng(42);
  BgnnParams p = init_params(rng, snet_config());
  // Per layer: C 6*200+200+200*3+3, M 11*200+200+200*3+3, D 7*200+200+200+1.
  const std::size_t per_layer = (6 * 200 + 200 + 200 * 3 + 3) +
                                (11 * 200 + 200 + 200 * 3 + 3) +
                                (7 * 200 + 200 + 200 * 1 + 1);
  CHECK(p.param_count() == 5 * per_layer);

  // The same parameter set runs unchanged at different N and K.
  for (auto [n, k] : {std::pair<std::size_t, std::size_t>{2, 3},
                      std::pair<std::size_t, std::size_t>{6, 5}}) {
    ComplexMat h = random_cmat(rng, n, k);
    Rng mr(43);
    MessagesState ms = init_messages(mr, n, k, p.cfg);
    std::vector<double> s = snet_forward(h, 0.5, p, ms);
    CHECK(s.size() == k);
    for (double v : s) CHECK(std::isfinite(v));
  }
}

TEST_CASE("init_messages: shapes, determinism, unit moments") {
  BgnnConfig cfg = pnet_config();
  {
    Rng r1(9), r2(9);
    MessagesState a = init_messages(r1, 3, 4, cfg);
    MessagesState b = init_messages(r2, 3, 4, cfg);
    CHECK(a.g.rows() == 4);
    CHECK(a.g.cols() == 2);
    CHECK(a.b.rows() == 4);
    CHECK(a.b.cols() == 5);
    CHECK(a.m.rows() == 12);
    CHECK(a.m.cols() == 10);
    CHECK(bit_equal(a.m, b.m));
  }
  double sum = 0.0, sumsq = 0.0;
  std::size_t count = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(mix_seed(1234, kStreamMessages, seed));
    MessagesState ms = init_messages(rng, 100, 10, cfg);
    for (const RealTensor* t : {&ms.g, &ms.b, &ms.m})
      for (std::size_t i = 0; i < t->size(); ++i) {
        sum += t->at_flat(i);
        sumsq += t->at_flat(i) * t->at_flat(i);
        ++count;
      }
  }
  REQUIRE(count >= 100000);
  const double mean = sum / count;
  const double var = sumsq / count - mean * mean;
  CHECK(std::fabs(mean) < 0.02);
  CHECK(var == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("zero weights collapse to the decision-head bias path") {
  Rng rng(44);
  BgnnConfig cfg = pnet_config();
  BgnnParams p = init_params(rng, cfg);
  for (RealTensor* t : p.tensors())
    for (std::size_t i = 0; i < t->size(); ++i) t->at_flat(i) = 0.0;
  // Put a distinctive bias on the last layer's decision head.
  p.layers.back().phi_d.b2(0, 0) = 1.0;
  p.layers.back().phi_d.b2(0, 1) = 3.0;
  ComplexMat h = random_cmat(rng, 4, 3);
  MessagesState ms = init_messages(rng, 4, 3, cfg);
  RealTensor pq = pnet_forward(h, 0.7, p, ms);
  const double e1 = std::exp(1.0), e3 = std::exp(3.0);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(pq(k, 0) == doctest::Approx(e1 / (e1 + e3)).epsilon(1e-12));
    CHECK(pq(k, 1) == doctest::Approx(e3 / (e1 + e3)).epsilon(1e-12));
  }
}

TEST_CASE("layer_forward composes into bgnn_forward") {
  Rng rng(45);
  BgnnConfig cfg = tiny_cfg(1, HeadActivation::kLinear);
  BgnnParams p = init_params(rng, cfg);
  ComplexMat h = random_cmat(rng, 3, 2);
  MessagesState ms = init_messages(rng, 3, 2, cfg);

  Tape t;
  BgnnVars v = push_params(t, p, false);
  const RealTensor whole = t.val(bgnn_forward(t, h, 0.4, v, ms));

  StateVars st{t.constant(ms.g), t.constant(ms.b), t.constant(ms.m)};
  for (const LayerVars& lv : v.layers) st = layer_forward(t, st, h, 0.4, lv, cfg);
  CHECK(bit_equal(whole, t.val(st.g)));
}

TEST_CASE("user permutation equivariance of decisions (bit-exact)") {
  Rng rng(46);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 2 + rng.below(4), k = 2 + rng.below(4);
    BgnnConfig cfg = trial % 2 ? snet_config() : pnet_config();
    cfg.layers = 2;  // keep the loop fast; equivariance is per-layer anyway
    BgnnParams p = init_params(rng, cfg);
    ComplexMat h = random_cmat(rng, n, k);
    MessagesState ms = init_messages(rng, n, k, cfg);
    std::vector<std::size_t> perm = random_perm(rng, k);

    Tape t;
    BgnnVars v = push_params(t, p, false);
    const RealTensor base = t.val(bgnn_forward(t, h, 0.6, v, ms));
    const RealTensor permuted = t.val(bgnn_forward(
        t, permute_user_cols(h, perm), 0.6, v, permute_users_state(ms, perm, n, k)));
    for (std::size_t kk = 0; kk < k; ++kk)
      for (std::size_t c = 0; c < cfg.head_dim; ++c)
        CHECK(permuted(kk, c) == base(perm[kk], c));
  }
}

TEST_CASE("antenna permutation invariance of decisions (bit-exact)") {
  Rng rng(47);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 2 + rng.below(5), k = 2 + rng.below(3);
    BgnnConfig cfg = trial % 2 ? snet_config() : pnet_config();
    cfg.layers = 2;
    BgnnParams p = init_params(rng, cfg);
    ComplexMat h = random_cmat(rng, n, k);
    MessagesState ms = init_messages(rng, n, k, cfg);
    std::vector<std::size_t> perm = random_perm(rng, n);

    Tape t;
    BgnnVars v = push_params(t, p, false);
    const RealTensor base = t.val(bgnn_forward(t, h, 0.6, v, ms));
    const RealTensor permuted = t.val(bgnn_forward(
        t, permute_antenna_rows(h, perm), 0.6, v,
        permute_antennas_state(ms, perm, n, k)));
    CHECK(bit_equal(base, permuted));
  }
}

TEST_CASE("pnet head: rows are probability pairs") {
  Rng rng(48);
  BgnnParams p = init_params(rng, pnet_config());
  ComplexMat h = random_cmat(rng, 4, 4);
  MessagesState ms = init_messages(rng, 4, 4, p.cfg);
  RealTensor pq = pnet_forward(h, 1.0, p, ms);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(pq(k, 0) > 0.0);
    CHECK(pq(k, 0) < 1.0);
    CHECK(pq(k, 0) + pq(k, 1) == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(pnet_forward(h, 1.0, init_params(rng, snet_config()), ms),
                  ConfigError);
  CHECK_THROWS_AS(snet_forward(h, 1.0, p, ms), ConfigError);
}

TEST_CASE("network gradients match finite differences on every weight") {
  Rng rng(49);
  for (int which = 0; which < 2; ++which) {
    BgnnConfig cfg = which == 0 ? tiny_cfg(1, HeadActivation::kLinear)
                                : tiny_cfg(2, HeadActivation::kSoftmax);
    BgnnParams p = init_params(rng, cfg);
    const std::size_t n = 2, k = 2;
    ComplexMat h = random_cmat(rng, n, k);
    MessagesState ms = init_messages(rng, n, k, cfg);
    RealTensor lw(k, cfg.head_dim);  // random loss weights expose all outputs
    for (std::size_t i = 0; i < lw.size(); ++i) lw.at_flat(i) = rng.normal();

    auto loss_of = [&](const BgnnParams& params) {
      Tape t;
      BgnnVars v = push_params(t, params, false);
      Var g = bgnn_forward(t, h, 0.5, v, ms);
      return t.val(t.sum_all(t.mul(g, t.constant(lw))))(0, 0);
    };

    Tape t2;
    BgnnVars v2 = push_params(t2, p, true);
    Var loss = t2.sum_all(
        t2.mul(bgnn_forward(t2, h, 0.5, v2, ms), t2.constant(lw)));
    t2.backward(loss);

    auto tensors = p.tensors();
    const double step = 1e-5;
    double max_err = 0.0, scale = 1e-8;
    for (std::size_t ti = 0; ti < tensors.size(); ++ti)
      for (std::size_t i = 0; i < tensors[ti]->size(); ++i) {
        BgnnParams pp = p;
        pp.tensors()[ti]->at_flat(i) += step;
        const double lp = loss_of(pp);
        pp.tensors()[ti]->at_flat(i) -= 2 * step;
        const double lm = loss_of(pp);
        const double fd = (lp - lm) / (2 * step);
        const double an = t2.grad(v2.flat[ti]).at_flat(i);
        max_err = std::max(max_err, std::fabs(an - fd));
        scale = std::max({scale, std::fabs(an), std::fabs(fd)});
      }
    CHECK(max_err / scale < 1e-4);
  }
}

TEST_CASE("pipeline: power tightness and user equivariance of beams") {
  Rng rng(50);
  PipelineParams params = init_pipeline(rng);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = 2 + rng.below(3), k = 2 + rng.below(3);
    ComplexMat h = random_cmat(rng, n, k);
    PipelineMessages msgs = init_pipeline_messages(rng, n, k, params);
    const double p_dbm = rng.uniform(0.0, 35.0);
    std::vector<double> noise(k, 0.31623);
    BeamMatrix w = pipeline_forward(h, p_dbm, params, noise, msgs);
    double power = 0.0;
    for (std::size_t i = 0; i < n * k; ++i)
      power += w.w.re.at_flat(i) * w.w.re.at_flat(i) +
               w.w.im.at_flat(i) * w.w.im.at_flat(i);
    CHECK(power == doctest::Approx(dbm_to_mw(p_dbm)).epsilon(1e-9));

    std::vector<std::size_t> perm = random_perm(rng, k);
    PipelineMessages pm{permute_users_state(msgs.s, perm, n, k),
                        permute_users_state(msgs.p, perm, n, k)};
    BeamMatrix wp = pipeline_forward(permute_user_cols(h, perm), p_dbm, params,
                                     noise, pm);
    for (std::size_t nn = 0; nn < n; ++nn)
      for (std::size_t kk = 0; kk < k; ++kk) {
        CHECK(wp.w.re(nn, kk) ==
              doctest::Approx(w.w.re(nn, perm[kk])).epsilon(1e-9));
        CHECK(wp.w.im(nn, kk) ==
              doctest::Approx(w.w.im(nn, perm[kk])).epsilon(1e-9));
      }
  }
}
