#ifndef RBF_BGNN_HPP
#define RBF_BGNN_HPP

#include <cstddef>
#include <cstdint>
#include <vector>

#include "rbf/autodiff.hpp"
#include "rbf/beamform.hpp"
#include "rbf/rng.hpp"
#include "rbf/tensor.hpp"

namespace rbf {

enum class HeadActivation : std::uint8_t { kLinear = 0, kSoftmax = 1 };

// Architecture of one bipartite message-passing network.  The decision width
// head_dim doubles as dim(g): the user feature fed back into the next layer's
// edge operator is the previous decision.
struct BgnnConfig {
  std::size_t layers = 5;    // L
  std::size_t msg_dim = 3;   // per-edge message width M
  std::size_t hidden = 200;  // FCNN hidden width z
  std::size_t head_dim = 1;  // decision width (1 = s head, 2 = power pair)
  HeadActivation head = HeadActivation::kLinear;
  bool power_input = true;   // append normalized power to the decision input

  // FCNN input widths.
  std::size_t c_in() const { return head_dim + msg_dim + 2; }
  std::size_t m_in() const { return 3 * msg_dim + 2; }
  std::size_t d_in() const { return 2 * msg_dim + (power_input ? 1 : 0); }

  void validate() const;  // throws ConfigError
};

inline BgnnConfig snet_config() {
  return BgnnConfig{5, 3, 200, 1, HeadActivation::kLinear, true};
}
inline BgnnConfig pnet_config() {
  return BgnnConfig{5, 5, 200, 2, HeadActivation::kSoftmax, true};
}

// Normalized power input for the decision networks: dB-domain compression of
// the 0..35 dBm operating range into [0, 1].
inline constexpr double kPowerDbmMax = 35.0;
inline double power_norm(double p_dbm) { return p_dbm / kPowerDbmMax; }

// Two-layer perceptron: x (rows x in) -> relu(x w1 + b1) -> w2, b2 -> head.
struct Fcnn {
  RealTensor w1, b1, w2, b2;  // in x z, 1 x z, z x out, 1 x out
};

struct LayerParams {
  Fcnn phi_c, phi_m, phi_d;
};

struct BgnnParams {
  BgnnConfig cfg;
  std::vector<LayerParams> layers;

  std::size_t param_count() const;  // total scalar count (independent of N, K)
  // Flat tensor list in a fixed order (layer-major; phi_c, phi_m, phi_d;
  // w1, b1, w2, b2 within each FCNN).  Both views share that order.
  std::vector<RealTensor*> tensors();
  std::vector<const RealTensor*> tensors() const;
};

// Gaussian message state threaded through the layers.  m is stored
// antenna-major: row n*K + k holds m_nk.
struct MessagesState {
  RealTensor g;  // K x head_dim
  RealTensor b;  // K x msg_dim, aggregated antenna messages b_k
  RealTensor m;  // (N*K) x 2*msg_dim, antenna memories m_nk
};

// Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases.
// Draw order: per layer, per FCNN (C, M, D), w1 then w2, each row-major.
BgnnParams init_params(Rng& rng, const BgnnConfig& cfg);

// g0, b0, m0 iid Normal(0,1).  Draw order: g, b, m, each row-major.
MessagesState init_messages(Rng& rng, std::size_t n, std::size_t k,
                            const BgnnConfig& cfg);

// ---- Tape forward ----

struct FcnnVars {
  Var w1, b1, w2, b2;
};
struct LayerVars {
  FcnnVars phi_c, phi_m, phi_d;
};
struct BgnnVars {
  BgnnConfig cfg;
  std::vector<LayerVars> layers;
  std::vector<Var> flat;  // aligned with BgnnParams::tensors()
};

// trainable=false records the weights as constants (evaluation forwards).
BgnnVars push_params(Tape& t, const BgnnParams& params, bool trainable = true);

struct StateVars {
  Var g, b, m;
};

// One message-passing layer: user edge operator, antenna sum-pool, antenna
// edge operator, memory update {b_nk, sum_{j!=k} b_nj}, user sum-pools, and
// the decision head with the power input appended.  All edge batches are
// single matmuls; sum-pools accumulate in ascending value order, which makes
// the decisions bit-exactly equivariant under user permutations and invariant
// under antenna permutations.
StateVars layer_forward(Tape& t, const StateVars& st, const ComplexMat& h_est,
                        double p_norm, const LayerVars& layer,
                        const BgnnConfig& cfg);

// L layers from the given initial messages; returns the final decision
// (K x head_dim).
Var bgnn_forward(Tape& t, const ComplexMat& h_est, double p_norm,
                 const BgnnVars& vars, const MessagesState& init);

// ---- Plain (evaluation) forwards; thin wrappers over a local tape ----

// Raw s_k (pre-clamp); params must carry a linear head of width 1.
std::vector<double> snet_forward(const ComplexMat& h_est, double p_norm,
                                 const BgnnParams& params,
                                 const MessagesState& init);

// Per-user softmax pairs (p~, q~) as a K x 2 tensor; params must carry a
// softmax head of width 2.
RealTensor pnet_forward(const ComplexMat& h_est, double p_norm,
                        const BgnnParams& params, const MessagesState& init);

// ---- Composed map Psi: channel estimate + power -> beams ----

struct PipelineParams {
  BgnnParams snet;  // linear head, width 1
  BgnnParams pnet;  // softmax head, width 2
};

PipelineParams init_pipeline(Rng& rng);

struct PipelineMessages {
  MessagesState s, p;
};

// Draw order pinned: S-Net messages first, then Power-Net messages.
PipelineMessages init_pipeline_messages(Rng& rng, std::size_t n, std::size_t k,
                                        const PipelineParams& params);

struct PipelineVars {
  BgnnVars snet, pnet;
};

PipelineVars push_pipeline(Tape& t, const PipelineParams& params,
                           bool trainable = true);

struct PipelineForward {
  CVar w;                 // N x K beams, sum_k |w_k|^2 = P by construction
  BeamFeaturesVar feats;  // normalized (s, p, q); carries the clamp count
};

PipelineForward pipeline_forward_var(Tape& t, const ComplexMat& h_est,
                                     double p_dbm, const PipelineVars& vars,
                                     const std::vector<double>& noise_mw,
                                     const PipelineMessages& msgs);

BeamMatrix pipeline_forward(const ComplexMat& h_est, double p_dbm,
                            const PipelineParams& params,
                            const std::vector<double>& noise_mw,
                            const PipelineMessages& msgs);

}  // namespace rbf

#endif  // RBF_BGNN_HPP
