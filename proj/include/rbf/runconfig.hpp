#ifndef RBF_RUNCONFIG_HPP
#define RBF_RUNCONFIG_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "rbf/channel.hpp"
#include "rbf/powermin.hpp"
#include "rbf/training.hpp"

namespace rbf {

// Everything a command run needs, parsed from one JSON document.  Unknown
// keys are rejected so typos fail loudly instead of silently using defaults.
struct RunConfig {
  SystemConfig system;  // desk defaults: N = K = 4
  TrainConfig train;
  BisectConfig bisect;
  std::uint64_t data_seed = 1;
  std::size_t n_train = 20000;
  std::size_t n_val = 2000;
  std::size_t n_test = 2000;
  std::uint64_t eval_seed = 1000;
  std::string out_dir = ".";

  void validate() const;  // throws ConfigError
};

// Canonical JSON serialization (stable key order; used for hashing too).
std::string run_config_to_json(const RunConfig& cfg);

// Strict parse: every key must be known, every value well-typed.
RunConfig run_config_from_json(const std::string& text);

// Load `path` (empty path = defaults), then apply "dotted.path=value"
// overrides; each override must address an existing key.
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides);

// Same, starting from explicit JSON text instead of a file.
RunConfig run_config_with_overrides(const std::string& json_text,
                                    const std::vector<std::string>& overrides);

// FNV-1a over the canonical serialization, as a 16-digit hex string; CSV
// outputs embed it so rows can be traced back to an exact configuration.
std::string config_hash(const RunConfig& cfg);

}  // namespace rbf

#endif  // RBF_RUNCONFIG_HPP
