#include "rbf/powermin.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "rbf/metrics.hpp"
#include "rbf/parallel.hpp"

namespace rbf {

void BisectConfig::validate() const {
  if (!(p_lo_dbm < p_hi_dbm))
    throw ConfigError("bisect: p_lo_dbm must be below p_hi_dbm");
  if (!(eps_mbps > 0.0)) throw ConfigError("bisect: eps_mbps must be positive");
  if (!(power_tol_db > 0.0))
    throw ConfigError("bisect: power_tol_db must be positive");
  if (max_iterations < 1)
    throw ConfigError("bisect: max_iterations must be >= 1");
  if (rate_target_mbps < 0.0)
    throw ConfigError("bisect: rate target must be nonnegative");
}

BisectResult bisect_power_fn(const RateFn& rate_fn, const BisectConfig& cfg) {
  cfg.validate();
  const double target = cfg.rate_target_mbps;
  BisectResult res;
  auto probe = [&](double p) {
    const double r = rate_fn(p);
    res.trace.emplace_back(p, r);
    return r;
  };

  // Endpoint checks (outside the iteration budget): feasibility at the top,
  // trivial targets at the bottom.
  const double r_hi0 = probe(cfg.p_hi_dbm);
  if (r_hi0 < target) {
    res.status = Feasibility::infeasible;
    res.rhat_mbps = r_hi0;
    return res;
  }
  const double r_lo0 = probe(cfg.p_lo_dbm);
  if (r_lo0 >= target) {
    res.status = Feasibility::feasible;
    res.p_star_dbm = cfg.p_lo_dbm;
    res.rhat_mbps = r_lo0;
    return res;
  }

  // Invariant from here on: rate(lo) < target <= rate(hi).
  double lo = cfg.p_lo_dbm, hi = cfg.p_hi_dbm;
  double r_lo = r_lo0, r_hi = r_hi0;
  while (hi - lo > cfg.power_tol_db) {
    if (res.iterations >= cfg.max_iterations)
      throw IterationCapError(
          "bisect: no convergence within " +
              std::to_string(cfg.max_iterations) + " iterations",
          res.trace);
    const double mid = 0.5 * (lo + hi);
    const double r_mid = probe(mid);
    ++res.iterations;
    if (std::fabs(r_mid - target) <= cfg.eps_mbps) {
      res.status = Feasibility::feasible;
      res.p_star_dbm = mid;
      res.rhat_mbps = r_mid;
      return res;
    }
    if (r_mid < target) {
      lo = mid;
      r_lo = r_mid;
    } else {
      hi = mid;
      r_hi = r_mid;
    }
  }

  // Secant refinement inside the final bracket; the curve is near-linear at
  // this width, so this lands within eps of the target in one evaluation.
  res.status = Feasibility::feasible;
  if (r_hi > r_lo) {
    const double frac = (target - r_lo) / (r_hi - r_lo);
    const double p_sec = lo + (hi - lo) * std::min(1.0, std::max(0.0, frac));
    const double r_sec = probe(p_sec);
    ++res.iterations;
    if (r_sec >= target - cfg.eps_mbps) {
      res.p_star_dbm = p_sec;
      res.rhat_mbps = r_sec;
      return res;
    }
  }
  res.p_star_dbm = hi;  // rate(hi) >= target by the loop invariant
  res.rhat_mbps = r_hi;
  return res;
}

BisectResult bisect_power(const ModelParams& params, const ComplexMat& h_est,
                          const SystemConfig& sys, const BisectConfig& cfg,
                          std::uint64_t seed, std::size_t channel_index) {
  cfg.validate();
  const std::size_t n = h_est.rows(), k = h_est.cols();
  const std::vector<double> noise(k, sys.noise_power_mw());
  // One error batch and one message draw per call: every probe sees the same
  // randomness, making the searched curve monotone in P for a fixed model.
  Rng err_rng(mix_seed(seed, kStreamEvalError, channel_index));
  const ErrorBatch errs =
      gen_errors(err_rng, n, k, sys.error_variance, cfg.u_eval);
  Rng msg_rng(mix_seed(seed, kStreamMessages, channel_index));
  const ModelMessages msgs = draw_model_messages(msg_rng, n, k, params);

  auto rate_at = [&](double p_dbm) {
    BeamMatrix w = model_beamform(params, h_est, p_dbm, noise, msgs);
    return daqe(h_est, w, errs, sys.outage_target, sys.bandwidth_mhz(), noise)
        .r_hat;
  };
  BisectResult res = bisect_power_fn(rate_at, cfg);
  if (res.status == Feasibility::feasible)
    res.w = model_beamform(params, h_est, res.p_star_dbm, noise, msgs);
  return res;
}

PowerMinRow power_min_over_split(const ModelParams& params, const Dataset& ds,
                                 Split split, double rate_target_mbps,
                                 const BisectConfig& cfg, std::uint64_t seed,
                                 std::size_t threads) {
  BisectConfig c = cfg;
  c.rate_target_mbps = rate_target_mbps;
  PowerMinRow row;
  row.rate_target_mbps = rate_target_mbps;
  const std::size_t count = ds.count(split);
  // Per-channel slots, aggregated in index order after the parallel region.
  std::vector<double> p_star(count, std::numeric_limits<double>::quiet_NaN());
  std::vector<double> ms(count, 0.0);
  for_each_index(count, threads, [&](std::size_t i) {
    const std::size_t gi = ds.index_of(split, i);
    const auto t0 = std::chrono::steady_clock::now();
    BisectResult res =
        bisect_power(params, ds.sample(split, i).h_est, ds.config, c, seed, gi);
    ms[i] = std::chrono::duration<double, std::milli>(
                std::chrono::steady_clock::now() - t0)
                .count();
    if (res.status == Feasibility::feasible) p_star[i] = res.p_star_dbm;
  });
  std::size_t feasible = 0;
  double p_sum = 0.0, ms_sum = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    ms_sum += ms[i];
    if (!std::isnan(p_star[i])) {
      ++feasible;
      p_sum += p_star[i];
    }
  }
  row.feasibility =
      count ? static_cast<double>(feasible) / static_cast<double>(count) : 0.0;
  row.mean_pstar_dbm = feasible ? p_sum / static_cast<double>(feasible)
                                : std::numeric_limits<double>::quiet_NaN();
  row.mean_ms = count ? ms_sum / static_cast<double>(count) : 0.0;
  return row;
}

double feasibility_rate(const ModelParams& params, const Dataset& ds,
                        Split split, double rate_target_mbps,
                        const BisectConfig& cfg, std::uint64_t seed) {
  return power_min_over_split(params, ds, split, rate_target_mbps, cfg, seed)
      .feasibility;
}

}  // namespace rbf
