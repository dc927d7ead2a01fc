#ifndef RBF_BEAMFORM_HPP
#define RBF_BEAMFORM_HPP

#include <cstddef>
#include <vector>

#include "rbf/autodiff.hpp"
#include "rbf/tensor.hpp"

namespace rbf {

// Floor on (1 + s_k): keeps A_k positive definite (the q-sum term is PSD)
// regardless of what the raw S-Net head emits.
inline constexpr double kSFloor = 1e-3;

// Low-dimensional beam representation: per-user (s_k, p_k, q_k) plus the
// total power P; powers in milliwatts.
struct BeamFeatures {
  std::vector<double> s, p, q;
  double total_power_mw = 0.0;
};

struct BeamMatrix {
  ComplexMat w;  // N x K; column k serves user k
};

// ---- Plain (evaluation) paths ----

// w_k = sqrt(p_k) * A_k^{-1} h_k / |A_k^{-1} h_k| with
// A_k = (1+s_k) I + sum_j (q_j / sigma_j^2) h_j h_j^H.
BeamMatrix recover_robust(const ComplexMat& h_est, const BeamFeatures& feats,
                          const std::vector<double>& noise_mw);

// Perfect-CSI structure: recover_robust with s identically zero.
BeamMatrix recover_perfect(const ComplexMat& h, const std::vector<double>& p,
                           const std::vector<double>& q,
                           const std::vector<double>& noise_mw);

// Regularized zero-forcing directions with alpha = K sigma^2 / P.
BeamMatrix rzf(const ComplexMat& h_est, const std::vector<double>& p, double total_power_mw,
               const std::vector<double>& noise_mw);

// w_k = sqrt(p_k) h_k / |h_k|.
BeamMatrix mrt(const ComplexMat& h_est, const std::vector<double>& p);

// ---- Tape (training) paths; all K x 1 column Vars ----

struct BeamFeaturesVar {
  Var s, p, q;
  double total_power_mw = 0.0;
  std::size_t clamp_active = 0;  // how many s_k hit the (1+s_k) floor
};

// raw_s: K x 1 (pre-clamp); pq: K x 2, each row a softmax pair (p~, q~).
// Scales both columns so they sum to P; clamps s.
BeamFeaturesVar normalize_features_var(Tape& t, Var raw_s, Var pq, double total_power_mw);

CVar recover_robust_var(Tape& t, CVar h_est, const BeamFeaturesVar& feats,
                        const std::vector<double>& noise_mw);

CVar rzf_var(Tape& t, CVar h_est, Var p, double total_power_mw,
             const std::vector<double>& noise_mw);

CVar mrt_var(Tape& t, CVar h_est, Var p);

// Column k of an N x K complex Var (via flat-index gathers).
CVar ccol(Tape& t, CVar h, std::size_t k);

}  // namespace rbf

#endif  // RBF_BEAMFORM_HPP
