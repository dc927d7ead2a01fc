#ifndef RBF_METRICS_HPP
#define RBF_METRICS_HPP

#include <cstddef>
#include <vector>

#include "rbf/autodiff.hpp"
#include "rbf/beamform.hpp"
#include "rbf/channel.hpp"
#include "rbf/tensor.hpp"

namespace rbf {

// Gamma_k = |h_k^H w_k|^2 / (sum_{j != k} |h_k^H w_j|^2 + sigma_k^2).
std::vector<double> sinr(const ComplexMat& h, const BeamMatrix& w,
                         const std::vector<double>& noise_mw);

// R_k = B log2(1 + Gamma_k); Mbps when B is in MHz.
std::vector<double> rate(const std::vector<double>& gamma, double bandwidth_mhz);

// min_k R_k for one realized channel.
double min_rate(const ComplexMat& h, const BeamMatrix& w,
                const std::vector<double>& noise_mw, double bandwidth_mhz);

struct QuantileResult {
  double r_hat = 0.0;      // Mbps
  std::size_t lower = 0;   // 1-based rank floor(U rho)
  std::size_t upper = 0;   // 1-based rank ceil(U rho)
  double beta = 0.0;       // fractional weight in [0, 1)
};

// Quantile ranks with a near-integer snap: idx = U*rho is treated
// as exact when within 1e-9 of an integer (so e.g. U=1000, rho=0.05 lands on
// rank 50 with beta = 0 despite float rounding).  Throws QuantileUnderflow
// when idx < 1.
QuantileResult quantile_ranks(std::size_t u, double rho);

// Plain DAQE: min-rates over the error batch, sorted
// ascending, linear interpolation between order statistics.
QuantileResult daqe(const ComplexMat& h_est, const BeamMatrix& w,
                    const ErrorBatch& errs, double rho, double bandwidth_mhz,
                    const std::vector<double>& noise_mw);

// Min-rate per error sample (the DAQE intermediate), exposed for CDF output.
std::vector<double> min_rates_over_errors(const ComplexMat& h_est,
                                          const BeamMatrix& w,
                                          const ErrorBatch& errs,
                                          double bandwidth_mhz,
                                          const std::vector<double>& noise_mw);

// Fraction of error samples with R_min <= r.
double empirical_outage(const ComplexMat& h_est, const BeamMatrix& w,
                        const ErrorBatch& errs, double r, double bandwidth_mhz,
                        const std::vector<double>& noise_mw);

// Differentiable DAQE on the tape: the U error channels are batched into one
// (U*K) x N constant, so the whole estimate is a handful of tape nodes.
// Returns r_hat as a 1x1 Var.
Var daqe_var(Tape& t, const ComplexMat& h_est, CVar w, const ErrorBatch& errs,
             double rho, double bandwidth_mhz, const std::vector<double>& noise_mw);

}  // namespace rbf

#endif  // RBF_METRICS_HPP
