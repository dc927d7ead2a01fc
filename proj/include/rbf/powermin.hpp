#ifndef RBF_POWERMIN_HPP
#define RBF_POWERMIN_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "rbf/errors.hpp"
#include "rbf/training.hpp"

namespace rbf {

struct BisectConfig {
  double p_lo_dbm = 0.0;
  double p_hi_dbm = 35.0;
  double rate_target_mbps = 0.0;
  double eps_mbps = 0.01;      // rate tolerance for early exit
  double power_tol_db = 0.05;  // bracket width stop on the dBm axis
  std::size_t max_iterations = 40;
  std::size_t u_eval = 1000;

  void validate() const;  // throws ConfigError
};

enum class Feasibility : std::uint8_t { feasible = 0, infeasible = 1 };

struct BisectResult {
  Feasibility status = Feasibility::infeasible;
  double p_star_dbm = 0.0;  // feasible only
  BeamMatrix w;             // beams at p_star (model searches only)
  double rhat_mbps = 0.0;   // r_hat at p_star, or at p_hi when infeasible
  std::size_t iterations = 0;
  std::vector<std::pair<double, double>> trace;  // every (p_dbm, r_hat) probe
};

// Raised when the midpoint loop hits max_iterations; carries the probe trace.
class IterationCapError : public NumericError {
 public:
  IterationCapError(const std::string& msg,
                    std::vector<std::pair<double, double>> trace)
      : NumericError(msg), trace_(std::move(trace)) {}
  const std::vector<std::pair<double, double>>& trace() const noexcept {
    return trace_;
  }

 private:
  std::vector<std::pair<double, double>> trace_;
};

using RateFn = std::function<double(double p_dbm)>;

// Bisection over the dBm axis against an arbitrary rate curve.  Endpoint
// probes are not counted as iterations; midpoint probes and the final secant
// refinement are.  The secant step pins the returned power near the true
// inverse once the bracket is below power_tol_db.
BisectResult bisect_power_fn(const RateFn& rate_fn, const BisectConfig& cfg);

// Model-driven search: one error batch and one message
// draw per call, reused at every probe, so the searched curve is a fixed
// function of P.
BisectResult bisect_power(const ModelParams& params, const ComplexMat& h_est,
                          const SystemConfig& sys, const BisectConfig& cfg,
                          std::uint64_t seed, std::size_t channel_index);

// Fraction of split channels whose target is feasible.
double feasibility_rate(const ModelParams& params, const Dataset& ds,
                        Split split, double rate_target_mbps,
                        const BisectConfig& cfg, std::uint64_t seed);

// One row of the power-minimization table for a whole split.
struct PowerMinRow {
  double rate_target_mbps = 0.0;
  double feasibility = 0.0;
  double mean_pstar_dbm = 0.0;  // over feasible channels; NaN if none
  double mean_ms = 0.0;         // wall time per channel
};

// Channels are searched independently; `threads` splits them across workers
// with index-ordered aggregation, so the row is thread-count invariant.
PowerMinRow power_min_over_split(const ModelParams& params, const Dataset& ds,
                                 Split split, double rate_target_mbps,
                                 const BisectConfig& cfg, std::uint64_t seed,
                                 std::size_t threads = 1);

}  // namespace rbf

#endif  // RBF_POWERMIN_HPP
