#ifndef RBF_CHANNEL_HPP
#define RBF_CHANNEL_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rbf/rng.hpp"
#include "rbf/tensor.hpp"

namespace rbf {

// Opt-in large-scale fading block: users placed uniformly in [d_min, d_max] km.
struct LargeScaleConfig {
  double d_min_km = 0.1;
  double d_max_km = 0.5;
};

struct SystemConfig {
  std::size_t n = 4;                      // antennas N
  std::size_t k = 4;                      // users K
  double bandwidth_hz = 10e6;             // B
  double noise_psd_dbm_per_hz = -75.0;
  double error_variance = 0.075;          // sigma_e^2
  double outage_target = 0.05;            // rho
  double power_lo_dbm = 0.0;
  double power_hi_dbm = 35.0;
  std::optional<LargeScaleConfig> large_scale;

  // sigma^2 per user in milliwatts: 10^(psd/10) * B.
  double noise_power_mw() const {
    return std::pow(10.0, noise_psd_dbm_per_hz / 10.0) * bandwidth_hz;
  }
  double bandwidth_mhz() const { return bandwidth_hz / 1e6; }
  void validate() const;  // throws ConfigError
};

inline double dbm_to_mw(double dbm) { return std::pow(10.0, dbm / 10.0); }
inline double mw_to_dbm(double mw) { return 10.0 * std::log10(mw); }

struct ChannelSample {
  ComplexMat h_est;                  // H-tilde, N x K
  std::vector<double> gain_linear;   // per-user large-scale gain; empty if unused
};

struct ErrorBatch {
  std::vector<ComplexMat> errors;    // U matrices, N x K, iid CN(0, sigma_e^2)
};

// 128.1 + 37.6 log10(d_km); throws on nonpositive distance.
double pathloss_db(double d_km);

ChannelSample gen_channel(Rng& rng, const SystemConfig& cfg);

ErrorBatch gen_errors(Rng& rng, std::size_t n, std::size_t k,
                      double error_variance, std::size_t u);

// True channel superposition H = H-tilde + E.
ComplexMat apply_error(const ComplexMat& h_est, const ComplexMat& e);

enum class Split : std::uint8_t { train = 0, validation = 1, test = 2 };

struct Dataset {
  SystemConfig config;
  std::uint64_t seed = 0;
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  // Samples stored train block, then validation, then test.
  std::vector<ChannelSample> samples;

  std::size_t count(Split s) const {
    switch (s) {
      case Split::train: return n_train;
      case Split::validation: return n_val;
      default: return n_test;
    }
  }
  // Global index of the i-th sample of a split.
  std::size_t index_of(Split s, std::size_t i) const {
    switch (s) {
      case Split::train: return i;
      case Split::validation: return n_train + i;
      default: return n_train + n_val + i;
    }
  }
  const ChannelSample& sample(Split s, std::size_t i) const {
    return samples[index_of(s, i)];
  }
};

// Deterministic per-sample streams: sample i uses mix_seed(seed, tag, i).
Dataset generate_dataset(const SystemConfig& cfg, std::uint64_t seed,
                         std::size_t n_train, std::size_t n_val,
                         std::size_t n_test);

void dataset_save(const Dataset& ds, const std::string& path);
Dataset dataset_load(const std::string& path);

// Stream tags for mix_seed, shared across modules so streams never collide.
inline constexpr std::uint64_t kStreamChannel = 0x11;
inline constexpr std::uint64_t kStreamTrainError = 0x22;
inline constexpr std::uint64_t kStreamValError = 0x33;
inline constexpr std::uint64_t kStreamEvalError = 0x44;
inline constexpr std::uint64_t kStreamMessages = 0x55;
inline constexpr std::uint64_t kStreamPower = 0x66;
inline constexpr std::uint64_t kStreamShuffle = 0x77;
inline constexpr std::uint64_t kStreamInit = 0x88;

}  // namespace rbf

#endif  // RBF_CHANNEL_HPP
