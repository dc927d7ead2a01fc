#include "rbf/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rbf/errors.hpp"
#include "rbf/metrics.hpp"
#include "rbf/parallel.hpp"

namespace rbf {

namespace {

using nlohmann::json;

constexpr const char* kModeNames[] = {"proposed", "s_zero", "rzf_power_only",
                                      "direct_dnn"};

bool uses_snet(TrainMode m) { return m == TrainMode::proposed; }
bool uses_pnet(TrainMode m) { return m != TrainMode::direct_dnn; }

// Streams keyed by (sample, step) both for the quantile error draws and the
// message initializations; train() uses this nonce, evaluation passes 0.
std::uint64_t step_nonce(std::uint64_t epoch, std::size_t step) {
  return epoch * 1000000 + step;
}

RealTensor glorot_mat(Rng& rng, std::size_t in, std::size_t out) {
  RealTensor w(in, out);
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  for (std::size_t i = 0; i < w.size(); ++i) w.at_flat(i) = rng.uniform(-a, a);
  return w;
}

struct DirectDnnVars {
  Var w1, b1, w2, b2, w3, b3;
  std::size_t n = 0, k = 0;
};

struct ModelVars {
  TrainMode mode = TrainMode::proposed;
  BgnnVars snet, pnet;
  DirectDnnVars dnn;
  std::vector<Var> flat;  // aligned with ModelParams::tensors()
};

ModelVars push_model(Tape& t, const ModelParams& p, bool trainable) {
  ModelVars mv;
  mv.mode = p.mode;
  if (uses_snet(p.mode)) {
    mv.snet = push_params(t, p.snet, trainable);
    mv.flat.insert(mv.flat.end(), mv.snet.flat.begin(), mv.snet.flat.end());
  }
  if (uses_pnet(p.mode)) {
    mv.pnet = push_params(t, p.pnet, trainable);
    mv.flat.insert(mv.flat.end(), mv.pnet.flat.begin(), mv.pnet.flat.end());
  }
  if (p.mode == TrainMode::direct_dnn) {
    auto leaf = [&](const RealTensor& w) {
      Var v = trainable ? t.param(w) : t.constant(w);
      mv.flat.push_back(v);
      return v;
    };
    mv.dnn = DirectDnnVars{leaf(p.dnn.w1), leaf(p.dnn.b1), leaf(p.dnn.w2),
                           leaf(p.dnn.b2), leaf(p.dnn.w3), leaf(p.dnn.b3),
                           p.dnn.n,        p.dnn.k};
  }
  return mv;
}

// FCNN -> raw W -> rescale onto the power sphere sum_k |w_k|^2 = P.
CVar direct_dnn_var(Tape& t, const DirectDnnVars& d, const ComplexMat& h,
                    double p_dbm) {
  const std::size_t n = h.rows(), k = h.cols();
  if (n != d.n || k != d.k)
    throw ShapeError("direct_dnn: trained for N=" + std::to_string(d.n) +
                     " K=" + std::to_string(d.k));
  const std::size_t nk = n * k;
  RealTensor x(1, 2 * nk + 1);
  for (std::size_t i = 0; i < nk; ++i) {
    x(0, i) = h.re.at_flat(i);
    x(0, nk + i) = h.im.at_flat(i);
  }
  x(0, 2 * nk) = power_norm(p_dbm);
  Var h1 = t.relu(t.add_rowvec(t.matmul(t.constant(std::move(x)), d.w1), d.b1));
  Var h2 = t.relu(t.add_rowvec(t.matmul(h1, d.w2), d.b2));
  Var y = t.add_rowvec(t.matmul(h2, d.w3), d.b3);  // 1 x 2NK
  std::vector<Var> re_cols, im_cols;
  for (std::size_t kk = 0; kk < k; ++kk) {
    std::vector<std::size_t> ridx(n), iidx(n);
    for (std::size_t nn = 0; nn < n; ++nn) {
      ridx[nn] = nn * k + kk;
      iidx[nn] = nk + nn * k + kk;
    }
    re_cols.push_back(t.select_elems(y, std::move(ridx)));
    im_cols.push_back(t.select_elems(y, std::move(iidx)));
  }
  CVar w{t.hcat(re_cols), t.hcat(im_cols)};
  Var pw = t.clamp_min(t.sum_all(cabs2(t, w)), 1e-30);
  Var scale = t.sqrt_act(
      t.div(t.constant(RealTensor::scalar(dbm_to_mw(p_dbm))), pw));
  return cmul_scalar_var(t, w, scale);
}

CVar model_beams_var(Tape& t, const ModelVars& mv, const ComplexMat& h,
                     double p_dbm, const std::vector<double>& noise_mw,
                     const ModelMessages& msgs, std::size_t* clamp_out) {
  const std::size_t k = h.cols();
  const double p_mw = dbm_to_mw(p_dbm);
  const double pn = power_norm(p_dbm);
  if (clamp_out) *clamp_out = 0;
  switch (mv.mode) {
    case TrainMode::proposed: {
      Var raw_s = bgnn_forward(t, h, pn, mv.snet, msgs.s);
      Var pq = bgnn_forward(t, h, pn, mv.pnet, msgs.p);
      BeamFeaturesVar f = normalize_features_var(t, raw_s, pq, p_mw);
      if (clamp_out) *clamp_out = f.clamp_active;
      return recover_robust_var(t, cconst(t, h), f, noise_mw);
    }
    case TrainMode::s_zero: {
      Var pq = bgnn_forward(t, h, pn, mv.pnet, msgs.p);
      BeamFeaturesVar f =
          normalize_features_var(t, t.constant(RealTensor(k, 1)), pq, p_mw);
      return recover_robust_var(t, cconst(t, h), f, noise_mw);
    }
    case TrainMode::rzf_power_only: {
      Var pq = bgnn_forward(t, h, pn, mv.pnet, msgs.p);
      BeamFeaturesVar f =
          normalize_features_var(t, t.constant(RealTensor(k, 1)), pq, p_mw);
      return rzf_var(t, cconst(t, h), f.p, p_mw, noise_mw);
    }
    default:
      return direct_dnn_var(t, mv.dnn, h, p_dbm);
  }
}

double mean_loss_impl(const ModelParams& params, const Dataset& ds,
                      const std::vector<BatchItem>& batch,
                      const TrainConfig& cfg, std::uint64_t nonce,
                      std::vector<RealTensor>* grads_out, double* clamp_rate) {
  if (batch.empty()) throw ConfigError("batch_loss: empty batch");
  const SystemConfig& sys = ds.config;
  cfg.validate(sys.outage_target);
  const bool with_grad = grads_out != nullptr;
  double loss_sum = 0.0;
  std::size_t clamp_sum = 0, users = 0;
  Tape t;
  for (std::size_t bi = 0; bi < batch.size(); ++bi) {
    const BatchItem& item = batch[bi];
    if (item.global_index >= ds.samples.size())
      throw ConfigError("batch_loss: sample index out of range");
    const ChannelSample& cs = ds.samples[item.global_index];
    const std::size_t n = cs.h_est.rows(), k = cs.h_est.cols();
    t.reset();
    ModelVars mv = push_model(t, params, with_grad);
    Rng msg_rng(mix_seed(cfg.seed, kStreamMessages, item.global_index, nonce));
    ModelMessages msgs = draw_model_messages(msg_rng, n, k, params);
    std::vector<double> noise(k, sys.noise_power_mw());
    Rng err_rng(
        mix_seed(cfg.seed, kStreamTrainError, item.global_index, nonce));
    ErrorBatch errs = gen_errors(err_rng, n, k, sys.error_variance, cfg.u_train);
    std::size_t clamp = 0;
    CVar w = model_beams_var(t, mv, cs.h_est, item.p_dbm, noise, msgs, &clamp);
    Var rhat = daqe_var(t, cs.h_est, w, errs, sys.outage_target,
                        sys.bandwidth_mhz(), noise);
    Var loss = t.neg(rhat);
    const double lv = t.val(loss)(0, 0);
    if (!std::isfinite(lv))
      throw NumericError("train: non-finite loss at sample " +
                         std::to_string(item.global_index));
    loss_sum += lv;
    clamp_sum += clamp;
    users += k;
    if (with_grad) {
      t.backward(loss);
      if (grads_out->empty()) {
        grads_out->reserve(mv.flat.size());
        for (Var v : mv.flat) grads_out->push_back(t.grad(v));
      } else {
        for (std::size_t ti = 0; ti < mv.flat.size(); ++ti) {
          const RealTensor& g = t.grad(mv.flat[ti]);
          RealTensor& acc = (*grads_out)[ti];
          for (std::size_t i = 0; i < acc.size(); ++i)
            acc.at_flat(i) += g.at_flat(i);
        }
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  if (with_grad)
    for (RealTensor& g : *grads_out)
      for (std::size_t i = 0; i < g.size(); ++i) g.at_flat(i) *= inv;
  if (clamp_rate)
    *clamp_rate =
        users ? static_cast<double>(clamp_sum) / static_cast<double>(users) : 0.0;
  return loss_sum * inv;
}

json tensor_to_json(const RealTensor& t) {
  json arr = json::array();
  for (std::size_t i = 0; i < t.size(); ++i) arr.push_back(t.at_flat(i));
  return json{{"rows", t.rows()}, {"cols", t.cols()}, {"data", std::move(arr)}};
}

RealTensor tensor_from_json(const json& j, const RealTensor& like,
                            const std::string& what) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") ||
      !j.contains("data"))
    throw ConfigError("checkpoint: malformed tensor entry for " + what);
  const std::size_t rows = j.at("rows").get<std::size_t>();
  const std::size_t cols = j.at("cols").get<std::size_t>();
  if (rows != like.rows() || cols != like.cols())
    throw ConfigError("checkpoint: " + what + " has shape " +
                      std::to_string(rows) + "x" + std::to_string(cols) +
                      ", expected " + std::to_string(like.rows()) + "x" +
                      std::to_string(like.cols()));
  const auto& data = j.at("data");
  if (!data.is_array() || data.size() != rows * cols)
    throw ConfigError("checkpoint: " + what + " data length mismatch");
  RealTensor out(rows, cols);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.at_flat(i) = data[i].get<double>();
  return out;
}

json bgnn_config_to_json(const BgnnConfig& c) {
  return json{{"layers", c.layers},
              {"msg_dim", c.msg_dim},
              {"hidden", c.hidden},
              {"head_dim", c.head_dim},
              {"head", c.head == HeadActivation::kSoftmax ? "softmax" : "linear"},
              {"power_input", c.power_input}};
}

BgnnConfig bgnn_config_from_json(const json& j) {
  BgnnConfig c;
  c.layers = j.at("layers").get<std::size_t>();
  c.msg_dim = j.at("msg_dim").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.head_dim = j.at("head_dim").get<std::size_t>();
  const std::string head = j.at("head").get<std::string>();
  if (head == "softmax")
    c.head = HeadActivation::kSoftmax;
  else if (head == "linear")
    c.head = HeadActivation::kLinear;
  else
    throw ConfigError("checkpoint: unknown head activation '" + head + "'");
  c.power_input = j.at("power_input").get<bool>();
  c.validate();
  return c;
}

// Zero-weight parameter skeleton with the shapes the config dictates.
BgnnParams bgnn_skeleton(const BgnnConfig& cfg) {
  BgnnParams p;
  p.cfg = cfg;
  auto zero_fcnn = [&](std::size_t in, std::size_t out) {
    return Fcnn{RealTensor(in, cfg.hidden), RealTensor(1, cfg.hidden),
                RealTensor(cfg.hidden, out), RealTensor(1, out)};
  };
  for (std::size_t l = 0; l < cfg.layers; ++l)
    p.layers.push_back(LayerParams{zero_fcnn(cfg.c_in(), cfg.msg_dim),
                                   zero_fcnn(cfg.m_in(), cfg.msg_dim),
                                   zero_fcnn(cfg.d_in(), cfg.head_dim)});
  return p;
}

json bgnn_to_json(const BgnnParams& p) {
  json tensors = json::array();
  for (const RealTensor* t : p.tensors()) tensors.push_back(tensor_to_json(*t));
  return json{{"config", bgnn_config_to_json(p.cfg)},
              {"tensors", std::move(tensors)}};
}

BgnnParams bgnn_from_json(const json& j, const std::string& slot) {
  BgnnParams p = bgnn_skeleton(bgnn_config_from_json(j.at("config")));
  auto tensors = p.tensors();
  const auto& stored = j.at("tensors");
  if (!stored.is_array() || stored.size() != tensors.size())
    throw ConfigError("checkpoint: " + slot + " tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i)
    *tensors[i] = tensor_from_json(stored[i], *tensors[i],
                                   slot + "[" + std::to_string(i) + "]");
  return p;
}

DirectDnnParams dnn_skeleton(std::size_t n, std::size_t k) {
  DirectDnnParams d;
  d.n = n;
  d.k = k;
  const std::size_t in = 2 * n * k + 1, out = 2 * n * k, z = kDirectDnnHidden;
  d.w1 = RealTensor(in, z);
  d.b1 = RealTensor(1, z);
  d.w2 = RealTensor(z, z);
  d.b2 = RealTensor(1, z);
  d.w3 = RealTensor(z, out);
  d.b3 = RealTensor(1, out);
  return d;
}

}  // namespace

const char* mode_name(TrainMode mode) {
  return kModeNames[static_cast<std::size_t>(mode)];
}

TrainMode mode_from_name(const std::string& name) {
  for (std::size_t i = 0; i < 4; ++i)
    if (name == kModeNames[i]) return static_cast<TrainMode>(i);
  throw ConfigError("unknown mode '" + name +
                    "' (expected proposed, s_zero, rzf_power_only, or "
                    "direct_dnn)");
}

void TrainConfig::validate(double outage_target) const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (patience < 1) throw ConfigError("train: patience must be >= 1");
  if (!(power_lo_dbm < power_hi_dbm))
    throw ConfigError("train: power_lo_dbm must be below power_hi_dbm");
  if (static_cast<double>(u_train) * outage_target < 1.0)
    throw ConfigError("train: u_train * outage_target must be >= 1");
  if (static_cast<double>(u_eval) * outage_target < 1.0)
    throw ConfigError("train: u_eval * outage_target must be >= 1");
}

void history_save_csv(const TrainHistory& hist, const std::string& path,
                      const std::string& header_comment) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open history file for writing: " + path);
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << "epoch,train_loss,val_rhat_mbps,seconds,clamp_rate\n";
  out.precision(12);
  for (const EpochStats& e : hist.epochs)
    out << e.epoch << ',' << e.train_loss << ',' << e.val_rhat_mbps << ','
        << e.seconds << ',' << e.clamp_rate << "\n";
  if (!out) throw IoError("failed writing history file: " + path);
}

std::size_t DirectDnnParams::param_count() const {
  std::size_t total = 0;
  for (const RealTensor* t : tensors()) total += t->size();
  return total;
}

std::vector<RealTensor*> DirectDnnParams::tensors() {
  return {&w1, &b1, &w2, &b2, &w3, &b3};
}

std::vector<const RealTensor*> DirectDnnParams::tensors() const {
  return {&w1, &b1, &w2, &b2, &w3, &b3};
}

DirectDnnParams init_direct_dnn(Rng& rng, std::size_t n, std::size_t k) {
  if (n < 1 || k < 1) throw ConfigError("direct_dnn: need N >= 1 and K >= 1");
  DirectDnnParams d = dnn_skeleton(n, k);
  d.w1 = glorot_mat(rng, d.w1.rows(), d.w1.cols());
  d.w2 = glorot_mat(rng, d.w2.rows(), d.w2.cols());
  d.w3 = glorot_mat(rng, d.w3.rows(), d.w3.cols());
  return d;
}

std::size_t ModelParams::param_count() const {
  std::size_t total = 0;
  for (const RealTensor* t : tensors()) total += t->size();
  return total;
}

std::vector<RealTensor*> ModelParams::tensors() {
  std::vector<RealTensor*> out;
  if (uses_snet(mode))
    for (RealTensor* t : snet.tensors()) out.push_back(t);
  if (uses_pnet(mode))
    for (RealTensor* t : pnet.tensors()) out.push_back(t);
  if (mode == TrainMode::direct_dnn)
    for (RealTensor* t : dnn.tensors()) out.push_back(t);
  return out;
}

std::vector<const RealTensor*> ModelParams::tensors() const {
  std::vector<const RealTensor*> out;
  for (RealTensor* t : const_cast<ModelParams*>(this)->tensors())
    out.push_back(t);
  return out;
}

ModelParams init_model(Rng& rng, TrainMode mode, std::size_t n, std::size_t k) {
  ModelParams p;
  p.mode = mode;
  if (uses_snet(mode)) p.snet = init_params(rng, snet_config());
  if (uses_pnet(mode)) p.pnet = init_params(rng, pnet_config());
  if (mode == TrainMode::direct_dnn) p.dnn = init_direct_dnn(rng, n, k);
  return p;
}

ModelMessages draw_model_messages(Rng& rng, std::size_t n, std::size_t k,
                                  const ModelParams& params) {
  ModelMessages m;
  if (uses_snet(params.mode))
    m.s = init_messages(rng, n, k, params.snet.cfg);
  if (uses_pnet(params.mode))
    m.p = init_messages(rng, n, k, params.pnet.cfg);
  return m;
}

BeamMatrix model_beamform(const ModelParams& params, const ComplexMat& h_est,
                          double p_dbm, const std::vector<double>& noise_mw,
                          const ModelMessages& msgs) {
  Tape t;
  ModelVars mv = push_model(t, params, /*trainable=*/false);
  CVar w = model_beams_var(t, mv, h_est, p_dbm, noise_mw, msgs, nullptr);
  return BeamMatrix{cval(t, w)};
}

double batch_loss(const ModelParams& params, const Dataset& ds,
                  const std::vector<BatchItem>& batch, const TrainConfig& cfg,
                  std::uint64_t nonce) {
  return mean_loss_impl(params, ds, batch, cfg, nonce, nullptr, nullptr);
}

double batch_loss_grad(const ModelParams& params, const Dataset& ds,
                       const std::vector<BatchItem>& batch,
                       const TrainConfig& cfg, std::uint64_t nonce,
                       std::vector<RealTensor>& grads_out, double* clamp_rate) {
  grads_out.clear();
  return mean_loss_impl(params, ds, batch, cfg, nonce, &grads_out, clamp_rate);
}

namespace {

double validation_rhat(const ModelParams& params, const Dataset& ds,
                       const TrainConfig& cfg) {
  const SystemConfig& sys = ds.config;
  const std::vector<double> noise(sys.k, sys.noise_power_mw());
  double sum = 0.0;
  for (std::size_t i = 0; i < ds.n_val; ++i) {
    const std::size_t gi = ds.index_of(Split::validation, i);
    const ChannelSample& cs = ds.sample(Split::validation, i);
    Rng err_rng(mix_seed(cfg.seed, kStreamValError, gi));
    ErrorBatch errs = gen_errors(err_rng, cs.h_est.rows(), cs.h_est.cols(),
                                 sys.error_variance, cfg.u_train);
    Rng msg_rng(mix_seed(cfg.seed, kStreamMessages, gi));
    ModelMessages msgs =
        draw_model_messages(msg_rng, cs.h_est.rows(), cs.h_est.cols(), params);
    BeamMatrix w =
        model_beamform(params, cs.h_est, cfg.val_power_dbm, noise, msgs);
    sum += daqe(cs.h_est, w, errs, sys.outage_target, sys.bandwidth_mhz(),
                noise)
               .r_hat;
  }
  return sum / static_cast<double>(ds.n_val);
}

}  // namespace

TrainResult train(const Dataset& ds, const TrainConfig& cfg,
                  const LoadedCheckpoint* resume) {
  const SystemConfig& sys = ds.config;
  sys.validate();
  cfg.validate(sys.outage_target);
  if (ds.n_train == 0 || ds.n_val == 0)
    throw ConfigError("train: dataset needs train and validation splits");

  ModelParams params;
  ModelParams best;
  double best_val = -std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  std::size_t epoch0 = 0;
  if (resume != nullptr) {
    if (!resume->has_resume)
      throw ConfigError("train: checkpoint lacks optimizer state, cannot resume");
    if (resume->final_params.mode != cfg.mode)
      throw ConfigError("train: resume checkpoint was trained in mode '" +
                        std::string(mode_name(resume->final_params.mode)) +
                        "', not '" + mode_name(cfg.mode) + "'");
    if (cfg.mode == TrainMode::direct_dnn &&
        (resume->final_params.dnn.n != sys.n ||
         resume->final_params.dnn.k != sys.k))
      throw ConfigError("train: resume checkpoint sized for a different system");
    params = resume->final_params;
    best = resume->params;
    best_val = resume->resume.best_val_rhat;
    stale = resume->resume.epochs_since_best;
    epoch0 = resume->resume.next_epoch;
  } else {
    Rng init_rng(mix_seed(cfg.seed, kStreamInit));
    params = init_model(init_rng, cfg.mode, sys.n, sys.k);
    best = params;
  }

  std::vector<RealTensor*> ptensors = params.tensors();
  AdamState adam =
      resume != nullptr ? resume->resume.adam : adam_init(ptensors);
  if (adam.m.size() != ptensors.size() || adam.v.size() != ptensors.size())
    throw ConfigError("train: resume optimizer state does not match the model");
  for (std::size_t i = 0; i < ptensors.size(); ++i) {
    if (adam.m[i].rows() != ptensors[i]->rows() ||
        adam.m[i].cols() != ptensors[i]->cols() ||
        adam.v[i].rows() != ptensors[i]->rows() ||
        adam.v[i].cols() != ptensors[i]->cols())
      throw ConfigError(
          "train: resume optimizer state does not match the model");
  }

  TrainResult result;
  std::size_t next_epoch = epoch0;

  for (std::size_t epoch = epoch0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(ds.n_train);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(cfg.seed, kStreamShuffle, epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double loss_sum = 0.0, clamp_sum = 0.0;
    std::size_t step = 0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size, ++step) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<BatchItem> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        const std::size_t gi = ds.index_of(Split::train, order[i]);
        Rng power_rng(mix_seed(cfg.seed, kStreamPower, epoch, gi));
        batch.push_back(
            BatchItem{gi, power_rng.uniform(cfg.power_lo_dbm, cfg.power_hi_dbm)});
      }
      std::vector<RealTensor> grads;
      double clamp = 0.0;
      const double bl = batch_loss_grad(params, ds, batch, cfg,
                                        step_nonce(epoch, step), grads, &clamp);
      std::vector<const RealTensor*> gptrs;
      gptrs.reserve(grads.size());
      for (const RealTensor& g : grads) gptrs.push_back(&g);
      adam_step(ptensors, gptrs, adam, cfg.lr);
      loss_sum += bl * static_cast<double>(batch.size());
      clamp_sum += clamp * static_cast<double>(batch.size());
    }
    for (RealTensor* p : ptensors) p->assert_finite("parameters after epoch");

    const double val = validation_rhat(params, ds, cfg);
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(ds.n_train);
    stats.val_rhat_mbps = val;
    stats.clamp_rate = clamp_sum / static_cast<double>(ds.n_train);
    stats.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    result.history.epochs.push_back(stats);
    next_epoch = epoch + 1;

    if (val > best_val) {
      best_val = val;
      best = params;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  result.resume.next_epoch = next_epoch;
  result.resume.adam = std::move(adam);
  result.resume.best_val_rhat = best_val;
  result.resume.epochs_since_best = stale;
  result.final_params = std::move(params);
  result.params = std::move(best);
  return result;
}

std::vector<double> evaluate_rhats(const ModelParams& params, const Dataset& ds,
                                   Split split, double p_dbm,
                                   std::size_t u_eval, std::uint64_t eval_seed,
                                   std::size_t threads) {
  const SystemConfig& sys = ds.config;
  const std::vector<double> noise(sys.k, sys.noise_power_mw());
  std::vector<double> out(ds.count(split), 0.0);
  for_each_index(ds.count(split), threads, [&](std::size_t i) {
    const std::size_t gi = ds.index_of(split, i);
    const ChannelSample& cs = ds.sample(split, i);
    Rng err_rng(mix_seed(eval_seed, kStreamEvalError, gi));
    ErrorBatch errs = gen_errors(err_rng, cs.h_est.rows(), cs.h_est.cols(),
                                 sys.error_variance, u_eval);
    Rng msg_rng(mix_seed(eval_seed, kStreamMessages, gi));
    ModelMessages msgs =
        draw_model_messages(msg_rng, cs.h_est.rows(), cs.h_est.cols(), params);
    BeamMatrix w = model_beamform(params, cs.h_est, p_dbm, noise, msgs);
    out[i] =
        daqe(cs.h_est, w, errs, sys.outage_target, sys.bandwidth_mhz(), noise)
            .r_hat;
  });
  return out;
}

std::vector<EvalPoint> evaluate(const ModelParams& params, const Dataset& ds,
                                Split split,
                                const std::vector<double>& p_grid_dbm,
                                std::size_t u_eval, std::uint64_t eval_seed,
                                std::size_t threads) {
  std::vector<EvalPoint> table;
  table.reserve(p_grid_dbm.size());
  for (double p : p_grid_dbm) {
    std::vector<double> rhats =
        evaluate_rhats(params, ds, split, p, u_eval, eval_seed, threads);
    EvalPoint pt;
    pt.p_dbm = p;
    for (double r : rhats) pt.mean_rhat_mbps += r;
    pt.mean_rhat_mbps /= static_cast<double>(rhats.size());
    if (rhats.size() > 1) {
      double ss = 0.0;
      for (double r : rhats) {
        const double d = r - pt.mean_rhat_mbps;
        ss += d * d;
      }
      pt.std_rhat_mbps = std::sqrt(ss / static_cast<double>(rhats.size() - 1));
    }
    table.push_back(pt);
  }
  return table;
}

namespace {

json model_to_json(const ModelParams& params) {
  json j;
  j["format"] = "robustbf-checkpoint";
  j["version"] = kCheckpointVersion;
  j["mode"] = mode_name(params.mode);
  if (uses_snet(params.mode)) j["snet"] = bgnn_to_json(params.snet);
  if (uses_pnet(params.mode)) j["pnet"] = bgnn_to_json(params.pnet);
  if (params.mode == TrainMode::direct_dnn) {
    json d;
    d["n"] = params.dnn.n;
    d["k"] = params.dnn.k;
    json tensors = json::array();
    for (const RealTensor* t : params.dnn.tensors())
      tensors.push_back(tensor_to_json(*t));
    d["tensors"] = std::move(tensors);
    j["dnn"] = std::move(d);
  }
  return j;
}

json tensor_list_to_json(const std::vector<const RealTensor*>& tensors) {
  json arr = json::array();
  for (const RealTensor* t : tensors) arr.push_back(tensor_to_json(*t));
  return arr;
}

// Fills `tensors` (a skeleton with the right shapes) from a JSON array.
void tensor_list_from_json(const json& arr,
                           const std::vector<RealTensor*>& tensors,
                           const std::string& what) {
  if (!arr.is_array() || arr.size() != tensors.size())
    throw ConfigError("checkpoint: " + what + " tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i)
    *tensors[i] = tensor_from_json(arr[i], *tensors[i],
                                   what + "[" + std::to_string(i) + "]");
}

ModelParams model_from_json(const json& j, const std::string& path) {
  if (!j.is_object() || j.value("format", "") != "robustbf-checkpoint")
    throw ConfigError("not a checkpoint file: " + path);
  if (j.value("version", -1) != kCheckpointVersion)
    throw ConfigError("unsupported checkpoint version in " + path);
  ModelParams p;
  try {
    p.mode = mode_from_name(j.at("mode").get<std::string>());
    if (uses_snet(p.mode)) {
      p.snet = bgnn_from_json(j.at("snet"), "snet");
      if (p.snet.cfg.head_dim != 1 ||
          p.snet.cfg.head != HeadActivation::kLinear)
        throw ConfigError(
            "checkpoint: snet slot must hold a width-1 linear head");
    }
    if (uses_pnet(p.mode)) {
      p.pnet = bgnn_from_json(j.at("pnet"), "pnet");
      if (p.pnet.cfg.head_dim != 2 ||
          p.pnet.cfg.head != HeadActivation::kSoftmax)
        throw ConfigError(
            "checkpoint: pnet slot must hold a width-2 softmax head");
    }
    if (p.mode == TrainMode::direct_dnn) {
      const json& d = j.at("dnn");
      p.dnn = dnn_skeleton(d.at("n").get<std::size_t>(),
                           d.at("k").get<std::size_t>());
      tensor_list_from_json(d.at("tensors"), p.dnn.tensors(), "dnn");
    }
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint schema error in " + path + ": " + e.what());
  }
  return p;
}

void write_checkpoint_doc(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out << j.dump();
  out << "\n";
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

json read_checkpoint_doc(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("checkpoint parse error in " + path + ": " + e.what());
  }
  return j;
}

}  // namespace

void checkpoint_save(const ModelParams& params, const std::string& path) {
  write_checkpoint_doc(model_to_json(params), path);
}

void checkpoint_save_full(const TrainResult& result, const std::string& path) {
  json j = model_to_json(result.params);
  j["final"] = tensor_list_to_json(result.final_params.tensors());
  json r;
  r["next_epoch"] = result.resume.next_epoch;
  r["best_val_rhat"] = result.resume.best_val_rhat;
  r["epochs_since_best"] = result.resume.epochs_since_best;
  r["adam_t"] = result.resume.adam.t;
  json m = json::array(), v = json::array();
  for (const RealTensor& t : result.resume.adam.m)
    m.push_back(tensor_to_json(t));
  for (const RealTensor& t : result.resume.adam.v)
    v.push_back(tensor_to_json(t));
  r["adam_m"] = std::move(m);
  r["adam_v"] = std::move(v);
  j["resume"] = std::move(r);
  write_checkpoint_doc(j, path);
}

ModelParams checkpoint_load(const std::string& path) {
  return model_from_json(read_checkpoint_doc(path), path);
}

LoadedCheckpoint checkpoint_load_full(const std::string& path) {
  const json j = read_checkpoint_doc(path);
  LoadedCheckpoint ck;
  ck.params = model_from_json(j, path);
  if (!j.contains("final") || !j.contains("resume")) return ck;
  try {
    // Final parameters share the best snapshot's architecture, so that copy
    // doubles as the shape skeleton for every stored tensor list.
    ck.final_params = ck.params;
    tensor_list_from_json(j.at("final"), ck.final_params.tensors(), "final");
    const json& r = j.at("resume");
    ck.resume.next_epoch = r.at("next_epoch").get<std::size_t>();
    ck.resume.best_val_rhat = r.at("best_val_rhat").get<double>();
    ck.resume.epochs_since_best = r.at("epochs_since_best").get<std::size_t>();
    ck.resume.adam.t = r.at("adam_t").get<long>();
    std::vector<RealTensor*> slots = ck.final_params.tensors();
    ck.resume.adam.m.assign(slots.size(), RealTensor());
    ck.resume.adam.v.assign(slots.size(), RealTensor());
    std::vector<RealTensor*> mslots, vslots;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      ck.resume.adam.m[i] = RealTensor(slots[i]->rows(), slots[i]->cols());
      ck.resume.adam.v[i] = RealTensor(slots[i]->rows(), slots[i]->cols());
      mslots.push_back(&ck.resume.adam.m[i]);
      vslots.push_back(&ck.resume.adam.v[i]);
    }
    tensor_list_from_json(r.at("adam_m"), mslots, "adam_m");
    tensor_list_from_json(r.at("adam_v"), vslots, "adam_v");
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint schema error in " + path + ": " + e.what());
  }
  ck.has_resume = true;
  return ck;
}

}  // namespace rbf
