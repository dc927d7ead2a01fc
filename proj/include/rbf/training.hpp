#ifndef RBF_TRAINING_HPP
#define RBF_TRAINING_HPP

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rbf/bgnn.hpp"
#include "rbf/channel.hpp"
#include "rbf/tensor.hpp"

namespace rbf {

enum class TrainMode : std::uint8_t {
  proposed = 0,        // S-Net + Power-Net, robust recovery
  s_zero = 1,          // Power-Net only, s_k forced to 0 (perfect-CSI structure)
  rzf_power_only = 2,  // Power-Net only, RZF directions
  direct_dnn = 3,      // plain FCNN emitting W directly
};

const char* mode_name(TrainMode mode);
TrainMode mode_from_name(const std::string& name);  // throws ConfigError

struct TrainConfig {
  std::size_t epochs = 150;
  std::size_t batch_size = 100;
  double lr = 1e-3;
  std::size_t u_train = 500;   // error draws per quantile during training
  std::size_t u_eval = 1000;   // error draws for evaluation tables
  double power_lo_dbm = 0.0;
  double power_hi_dbm = 35.0;
  std::size_t patience = 10;   // early-stop epochs without validation gain
  double val_power_dbm = 30.0;
  std::uint64_t seed = 1;
  TrainMode mode = TrainMode::proposed;

  void validate(double outage_target) const;  // throws ConfigError
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_rhat_mbps = 0.0;
  double seconds = 0.0;
  double clamp_rate = 0.0;  // fraction of s_k that hit the (1+s) floor
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

// epoch,train_loss,val_rhat_mbps,seconds,clamp_rate with a leading comment.
void history_save_csv(const TrainHistory& hist, const std::string& path,
                      const std::string& header_comment);

// W = reshape(FCNN([vec Re H, vec Im H, p_norm])) scaled onto the power
// sphere; input 2NK+1, two hidden ReLU layers of width 200, linear 2NK out.
struct DirectDnnParams {
  std::size_t n = 0, k = 0;
  RealTensor w1, b1, w2, b2, w3, b3;

  std::size_t param_count() const;
  std::vector<RealTensor*> tensors();
  std::vector<const RealTensor*> tensors() const;
};

inline constexpr std::size_t kDirectDnnHidden = 200;

DirectDnnParams init_direct_dnn(Rng& rng, std::size_t n, std::size_t k);

// One trained model of any mode; exactly the slots the mode needs are filled.
struct ModelParams {
  TrainMode mode = TrainMode::proposed;
  BgnnParams snet;      // proposed
  BgnnParams pnet;      // proposed, s_zero, rzf_power_only
  DirectDnnParams dnn;  // direct_dnn

  std::size_t param_count() const;
  std::vector<RealTensor*> tensors();  // fixed order: snet, pnet, dnn
  std::vector<const RealTensor*> tensors() const;
};

ModelParams init_model(Rng& rng, TrainMode mode, std::size_t n, std::size_t k);

// Per-channel message draws for the modes that use them (draw order: S-Net
// messages, then Power-Net messages; unused slots left empty).
struct ModelMessages {
  MessagesState s, p;
};

ModelMessages draw_model_messages(Rng& rng, std::size_t n, std::size_t k,
                                  const ModelParams& params);

// Deterministic evaluation forward shared by every consumer (tables, CDF,
// bisection): beams for one channel at one power.
BeamMatrix model_beamform(const ModelParams& params, const ComplexMat& h_est,
                          double p_dbm, const std::vector<double>& noise_mw,
                          const ModelMessages& msgs);

// ---- Loss ----

// One batch element: dataset sample plus its sampled transmit power.  The
// error batch and messages are drawn from streams keyed by (global_index,
// nonce), so duplicated elements see identical draws.
struct BatchItem {
  std::size_t global_index = 0;
  double p_dbm = 30.0;
};

// Mean over the batch of -r_hat.  Pure function of its
// arguments; train() uses nonce = epoch * 1e6 + step.
double batch_loss(const ModelParams& params, const Dataset& ds,
                  const std::vector<BatchItem>& batch, const TrainConfig& cfg,
                  std::uint64_t nonce);

// Same value, plus the summed parameter gradients scaled by 1/batch size
// (aligned with ModelParams::tensors()) and the clamp-activation rate.
double batch_loss_grad(const ModelParams& params, const Dataset& ds,
                       const std::vector<BatchItem>& batch,
                       const TrainConfig& cfg, std::uint64_t nonce,
                       std::vector<RealTensor>& grads_out,
                       double* clamp_rate = nullptr);

// ---- Training loop ----

// Optimizer continuation carried inside training checkpoints: a resumed run
// replays exactly the epochs an uninterrupted longer run would have executed
// (epoch-keyed shuffle and noise streams make the tail independent of how the
// run was split).
struct ResumeState {
  std::size_t next_epoch = 0;       // first epoch index still to run
  AdamState adam;                   // aligned with ModelParams::tensors()
  double best_val_rhat = 0.0;
  std::size_t epochs_since_best = 0;
};

struct TrainResult {
  ModelParams params;        // best-validation snapshot
  ModelParams final_params;  // parameters after the last executed epoch
  TrainHistory history;      // epochs executed by this call only
  ResumeState resume;
};

// A checkpoint always holds the best snapshot; files written by
// checkpoint_save_full additionally carry the final parameters and optimizer
// state needed to continue training.
struct LoadedCheckpoint {
  ModelParams params;
  bool has_resume = false;
  ModelParams final_params;  // valid only when has_resume
  ResumeState resume;        // valid only when has_resume
};

// Adam over shuffled mini-batches with P ~ Uniform(lo, hi) dBm per (epoch,
// sample); early stopping on validation mean r_hat at val_power_dbm with
// error batches held fixed across epochs.  Throws NumericError naming the
// offending sample if a loss goes non-finite.  Pass a resumable checkpoint
// to continue a previous run up to cfg.epochs total epochs.
TrainResult train(const Dataset& ds, const TrainConfig& cfg,
                  const LoadedCheckpoint* resume = nullptr);

// ---- Evaluation ----

// r_hat per sample of the split at one power; error and message streams are
// keyed by (eval_seed, global sample index) only, so every power and every
// model sees common random numbers.  Channels are independent; `threads`
// splits them across workers with index-ordered output assembly, so results
// do not depend on the thread count.
std::vector<double> evaluate_rhats(const ModelParams& params, const Dataset& ds,
                                   Split split, double p_dbm,
                                   std::size_t u_eval, std::uint64_t eval_seed,
                                   std::size_t threads = 1);

struct EvalPoint {
  double p_dbm = 0.0;
  double mean_rhat_mbps = 0.0;
  double std_rhat_mbps = 0.0;
};

std::vector<EvalPoint> evaluate(const ModelParams& params, const Dataset& ds,
                                Split split, const std::vector<double>& p_grid_dbm,
                                std::size_t u_eval, std::uint64_t eval_seed,
                                std::size_t threads = 1);

// ---- Checkpoints ----

inline constexpr int kCheckpointVersion = 1;

void checkpoint_save(const ModelParams& params, const std::string& path);
void checkpoint_save_full(const TrainResult& result, const std::string& path);
ModelParams checkpoint_load(const std::string& path);
LoadedCheckpoint checkpoint_load_full(const std::string& path);

}  // namespace rbf

#endif  // RBF_TRAINING_HPP
