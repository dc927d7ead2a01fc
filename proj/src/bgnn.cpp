#include "rbf/bgnn.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "rbf/channel.hpp"
#include "rbf/errors.hpp"

namespace rbf {

void BgnnConfig::validate() const {
  if (layers < 1) throw ConfigError("bgnn: layers must be >= 1");
  if (msg_dim < 1) throw ConfigError("bgnn: msg_dim must be >= 1");
  if (hidden < 1) throw ConfigError("bgnn: hidden must be >= 1");
  if (head_dim < 1) throw ConfigError("bgnn: head_dim must be >= 1");
  if (head == HeadActivation::kSoftmax && head_dim < 2)
    throw ConfigError("bgnn: softmax head needs head_dim >= 2");
}

namespace {

Fcnn glorot_fcnn(Rng& rng, std::size_t in, std::size_t hidden, std::size_t out) {
  Fcnn f;
  f.w1 = RealTensor(in, hidden);
  f.b1 = RealTensor(1, hidden);
  f.w2 = RealTensor(hidden, out);
  f.b2 = RealTensor(1, out);
  const double a1 = std::sqrt(6.0 / static_cast<double>(in + hidden));
  for (std::size_t i = 0; i < in * hidden; ++i)
    f.w1.at_flat(i) = rng.uniform(-a1, a1);
  const double a2 = std::sqrt(6.0 / static_cast<double>(hidden + out));
  for (std::size_t i = 0; i < hidden * out; ++i)
    f.w2.at_flat(i) = rng.uniform(-a2, a2);
  return f;
}

void fill_normal(Rng& rng, RealTensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i) t.at_flat(i) = rng.normal();
}

void append_fcnn(std::vector<RealTensor*>& out, Fcnn& f) {
  out.push_back(&f.w1);
  out.push_back(&f.b1);
  out.push_back(&f.w2);
  out.push_back(&f.b2);
}

FcnnVars push_fcnn(Tape& t, const Fcnn& f, bool trainable,
                   std::vector<Var>& flat) {
  auto leaf = [&](const RealTensor& w) {
    Var v = trainable ? t.param(w) : t.constant(w);
    flat.push_back(v);
    return v;
  };
  return FcnnVars{leaf(f.w1), leaf(f.b1), leaf(f.w2), leaf(f.b2)};
}

Var fcnn_hidden(Tape& t, Var x, const FcnnVars& f) {
  return t.relu(t.add_rowvec(t.matmul(x, f.w1), f.b1));
}

Var fcnn_tanh(Tape& t, Var x, const FcnnVars& f) {
  return t.tanh_act(t.add_rowvec(t.matmul(fcnn_hidden(t, x, f), f.w2), f.b2));
}

Var fcnn_head(Tape& t, Var x, const FcnnVars& f, HeadActivation head) {
  Var out = t.add_rowvec(t.matmul(fcnn_hidden(t, x, f), f.w2), f.b2);
  return head == HeadActivation::kSoftmax ? t.softmax_rows(out) : out;
}

// Channel features and row reorderings shared by the two edge batches.
// User-major rows are k*N + n; antenna-major rows are n*K + k (the flat
// row-major order of the N x K estimate itself).
struct EdgeIndex {
  std::size_t n, k;
  Var h_user;                        // (K*N) x 2 constant [Re, Im]
  Var h_ant;                         // (N*K) x 2 constant [Re, Im]
  std::vector<std::size_t> to_ant;   // user-major source row per antenna row
  std::vector<std::size_t> to_user;  // antenna-major source row per user row
};

EdgeIndex build_edge_index(Tape& t, const ComplexMat& h) {
  const std::size_t n = h.rows(), k = h.cols();
  EdgeIndex e;
  e.n = n;
  e.k = k;
  RealTensor hu(k * n, 2), ha(n * k, 2);
  e.to_ant.resize(n * k);
  e.to_user.resize(k * n);
  for (std::size_t nn = 0; nn < n; ++nn)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const std::size_t ru = kk * n + nn, ra = nn * k + kk;
      hu(ru, 0) = h.re(nn, kk);
      hu(ru, 1) = h.im(nn, kk);
      ha(ra, 0) = h.re(nn, kk);
      ha(ra, 1) = h.im(nn, kk);
      e.to_ant[ra] = ru;
      e.to_user[ru] = ra;
    }
  e.h_user = t.constant(std::move(hu));
  e.h_ant = t.constant(std::move(ha));
  return e;
}

StateVars layer_forward_indexed(Tape& t, const StateVars& st, const EdgeIndex& e,
                                double p_norm, const LayerVars& lp,
                                const BgnnConfig& cfg) {
  const std::size_t n = e.n, k = e.k;
  // User edge operator: c_kn = Phi_C(g_k, b_k, h_kn), every edge at once (user-major).
  Var xc = t.hcat({t.interleave_rows(st.g, n), t.interleave_rows(st.b, n),
                   e.h_user});
  Var c_edges = fcnn_tanh(t, xc, lp.phi_c);
  // Antenna sum-pool: c_n = sum_k c_kn.
  Var c_ant = t.group_sum(t.gather_rows(c_edges, e.to_ant), k);
  // Antenna edge operator: b_nk = Phi_M(m_nk, c_n, h_kn) (antenna-major).
  Var xm = t.hcat({st.m, t.interleave_rows(c_ant, k), e.h_ant});
  Var b_edges = fcnn_tanh(t, xm, lp.phi_m);
  // Memory update: m_nk = {b_nk, sum_{j != k} b_nj}.
  Var b_tot = t.interleave_rows(t.group_sum(b_edges, k), k);
  Var m_new = t.hcat({b_edges, t.sub(b_tot, b_edges)});
  // User sum-pools: per-user aggregates over antennas.
  Var b_agg = t.group_sum(t.gather_rows(b_edges, e.to_user), n);
  Var m_agg = t.group_sum(t.gather_rows(m_new, e.to_user), n);
  // Decision head with the universal-power input appended.
  Var xd = m_agg;
  if (cfg.power_input)
    xd = t.hcat({m_agg, t.constant(RealTensor::full(k, 1, p_norm))});
  Var g_new = fcnn_head(t, xd, lp.phi_d, cfg.head);
  return StateVars{g_new, b_agg, m_new};
}

void check_state(const MessagesState& ms, std::size_t n, std::size_t k,
                 const BgnnConfig& cfg) {
  if (ms.g.rows() != k || ms.g.cols() != cfg.head_dim ||
      ms.b.rows() != k || ms.b.cols() != cfg.msg_dim ||
      ms.m.rows() != n * k || ms.m.cols() != 2 * cfg.msg_dim)
    throw ShapeError("bgnn: message state does not match N=" +
                     std::to_string(n) + " K=" + std::to_string(k));
}

}  // namespace

BgnnParams init_params(Rng& rng, const BgnnConfig& cfg) {
  cfg.validate();
  BgnnParams p;
  p.cfg = cfg;
  p.layers.reserve(cfg.layers);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    LayerParams lp;
    lp.phi_c = glorot_fcnn(rng, cfg.c_in(), cfg.hidden, cfg.msg_dim);
    lp.phi_m = glorot_fcnn(rng, cfg.m_in(), cfg.hidden, cfg.msg_dim);
    lp.phi_d = glorot_fcnn(rng, cfg.d_in(), cfg.hidden, cfg.head_dim);
    p.layers.push_back(std::move(lp));
  }
  return p;
}

MessagesState init_messages(Rng& rng, std::size_t n, std::size_t k,
                            const BgnnConfig& cfg) {
  MessagesState ms;
  ms.g = RealTensor(k, cfg.head_dim);
  ms.b = RealTensor(k, cfg.msg_dim);
  ms.m = RealTensor(n * k, 2 * cfg.msg_dim);
  fill_normal(rng, ms.g);
  fill_normal(rng, ms.b);
  fill_normal(rng, ms.m);
  return ms;
}

std::size_t BgnnParams::param_count() const {
  std::size_t total = 0;
  for (const RealTensor* t : tensors()) total += t->size();
  return total;
}

std::vector<RealTensor*> BgnnParams::tensors() {
  std::vector<RealTensor*> out;
  out.reserve(layers.size() * 12);
  for (LayerParams& lp : layers) {
    append_fcnn(out, lp.phi_c);
    append_fcnn(out, lp.phi_m);
    append_fcnn(out, lp.phi_d);
  }
  return out;
}

std::vector<const RealTensor*> BgnnParams::tensors() const {
  std::vector<const RealTensor*> out;
  for (const RealTensor* t : const_cast<BgnnParams*>(this)->tensors())
    out.push_back(t);
  return out;
}

BgnnVars push_params(Tape& t, const BgnnParams& params, bool trainable) {
  params.cfg.validate();
  BgnnVars v;
  v.cfg = params.cfg;
  v.layers.reserve(params.layers.size());
  for (const LayerParams& lp : params.layers) {
    LayerVars lv;
    lv.phi_c = push_fcnn(t, lp.phi_c, trainable, v.flat);
    lv.phi_m = push_fcnn(t, lp.phi_m, trainable, v.flat);
    lv.phi_d = push_fcnn(t, lp.phi_d, trainable, v.flat);
    v.layers.push_back(lv);
  }
  return v;
}

StateVars layer_forward(Tape& t, const StateVars& st, const ComplexMat& h_est,
                        double p_norm, const LayerVars& layer,
                        const BgnnConfig& cfg) {
  EdgeIndex e = build_edge_index(t, h_est);
  if (st.g.rows != e.k || st.g.cols != cfg.head_dim || st.b.rows != e.k ||
      st.b.cols != cfg.msg_dim || st.m.rows != e.n * e.k ||
      st.m.cols != 2 * cfg.msg_dim)
    throw ShapeError("bgnn: layer state/channel shape mismatch");
  return layer_forward_indexed(t, st, e, p_norm, layer, cfg);
}

Var bgnn_forward(Tape& t, const ComplexMat& h_est, double p_norm,
                 const BgnnVars& vars, const MessagesState& init) {
  const std::size_t n = h_est.rows(), k = h_est.cols();
  check_state(init, n, k, vars.cfg);
  EdgeIndex e = build_edge_index(t, h_est);
  StateVars st{t.constant(init.g), t.constant(init.b), t.constant(init.m)};
  for (const LayerVars& lp : vars.layers)
    st = layer_forward_indexed(t, st, e, p_norm, lp, vars.cfg);
  return st.g;
}

std::vector<double> snet_forward(const ComplexMat& h_est, double p_norm,
                                 const BgnnParams& params,
                                 const MessagesState& init) {
  if (params.cfg.head_dim != 1 || params.cfg.head != HeadActivation::kLinear)
    throw ConfigError("snet_forward: params must carry a width-1 linear head");
  Tape t;
  BgnnVars v = push_params(t, params, /*trainable=*/false);
  const RealTensor& g = t.val(bgnn_forward(t, h_est, p_norm, v, init));
  std::vector<double> s(g.rows());
  for (std::size_t i = 0; i < g.rows(); ++i) s[i] = g(i, 0);
  return s;
}

RealTensor pnet_forward(const ComplexMat& h_est, double p_norm,
                        const BgnnParams& params, const MessagesState& init) {
  if (params.cfg.head_dim != 2 || params.cfg.head != HeadActivation::kSoftmax)
    throw ConfigError("pnet_forward: params must carry a width-2 softmax head");
  Tape t;
  BgnnVars v = push_params(t, params, /*trainable=*/false);
  return t.val(bgnn_forward(t, h_est, p_norm, v, init));
}

PipelineParams init_pipeline(Rng& rng) {
  PipelineParams p;
  p.snet = init_params(rng, snet_config());
  p.pnet = init_params(rng, pnet_config());
  return p;
}

PipelineMessages init_pipeline_messages(Rng& rng, std::size_t n, std::size_t k,
                                        const PipelineParams& params) {
  PipelineMessages m;
  m.s = init_messages(rng, n, k, params.snet.cfg);
  m.p = init_messages(rng, n, k, params.pnet.cfg);
  return m;
}

PipelineVars push_pipeline(Tape& t, const PipelineParams& params,
                           bool trainable) {
  return PipelineVars{push_params(t, params.snet, trainable),
                      push_params(t, params.pnet, trainable)};
}

PipelineForward pipeline_forward_var(Tape& t, const ComplexMat& h_est,
                                     double p_dbm, const PipelineVars& vars,
                                     const std::vector<double>& noise_mw,
                                     const PipelineMessages& msgs) {
  if (vars.snet.cfg.head_dim != 1 ||
      vars.snet.cfg.head != HeadActivation::kLinear)
    throw ConfigError("pipeline: snet slot must carry a width-1 linear head");
  if (vars.pnet.cfg.head_dim != 2 ||
      vars.pnet.cfg.head != HeadActivation::kSoftmax)
    throw ConfigError("pipeline: pnet slot must carry a width-2 softmax head");
  if (noise_mw.size() != h_est.cols())
    throw ShapeError("pipeline: noise vector length != K");
  const double p_norm = power_norm(p_dbm);
  Var raw_s = bgnn_forward(t, h_est, p_norm, vars.snet, msgs.s);
  Var pq = bgnn_forward(t, h_est, p_norm, vars.pnet, msgs.p);
  PipelineForward out;
  out.feats = normalize_features_var(t, raw_s, pq, dbm_to_mw(p_dbm));
  out.w = recover_robust_var(t, cconst(t, h_est), out.feats, noise_mw);
  return out;
}

BeamMatrix pipeline_forward(const ComplexMat& h_est, double p_dbm,
                            const PipelineParams& params,
                            const std::vector<double>& noise_mw,
                            const PipelineMessages& msgs) {
  Tape t;
  PipelineVars v = push_pipeline(t, params, /*trainable=*/false);
  PipelineForward f = pipeline_forward_var(t, h_est, p_dbm, v, noise_mw, msgs);
  return BeamMatrix{cval(t, f.w)};
}

}  // namespace rbf
