#include "robustbf.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "rbf/channel.hpp"
#include "rbf/errors.hpp"
#include "rbf/metrics.hpp"
#include "rbf/powermin.hpp"
#include "rbf/runconfig.hpp"
#include "rbf/training.hpp"

namespace {

thread_local std::string tl_error;

rbf_status status_for(rbf::ErrorCode code) {
  switch (code) {
    case rbf::ErrorCode::config: return RBF_ERR_CONFIG;
    case rbf::ErrorCode::io: return RBF_ERR_IO;
    case rbf::ErrorCode::numeric: return RBF_ERR_NUMERIC;
    default: return RBF_ERR;
  }
}

// Runs the body, translating exceptions into status codes + thread-local
// message.  Every public entry point goes through here so no exception ever
// crosses the C boundary.
template <typename F>
rbf_status guarded(F&& body) {
  try {
    body();
    return RBF_OK;
  } catch (const rbf::Error& e) {
    tl_error = e.what();
    return status_for(e.code());
  } catch (const std::bad_alloc&) {
    tl_error = "out of memory";
    return RBF_ERR;
  } catch (const std::exception& e) {
    tl_error = e.what();
    return RBF_ERR;
  } catch (...) {
    tl_error = "unknown error";
    return RBF_ERR;
  }
}

void require(bool ok, const std::string& what) {
  if (!ok) throw rbf::ConfigError(what);
}

std::vector<std::string> collect_strings(const char* const* arr, size_t n,
                                         const char* what) {
  std::vector<std::string> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    require(arr != nullptr && arr[i] != nullptr,
            std::string(what) + ": null entry");
    out.emplace_back(arr[i]);
  }
  return out;
}

rbf::RunConfig merged_config(const char* config_json,
                             const char* const* overrides, size_t n_overrides) {
  const std::string text = config_json != nullptr ? config_json : "";
  return rbf::run_config_with_overrides(
      text, collect_strings(overrides, n_overrides, "overrides"));
}

std::size_t thread_count() {
  const char* env = std::getenv("RBF_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == nullptr || *end != '\0' || v < 1)
    throw rbf::ConfigError("RBF_THREADS must be a positive integer");
  return static_cast<std::size_t>(std::min<long>(v, 64));
}

// Grid specs: "lo:hi:step" (inclusive endpoints) or a comma list of values.
std::vector<double> parse_grid(const std::string& spec, const char* what) {
  require(!spec.empty(), std::string(what) + ": empty grid");
  std::vector<double> out;
  const auto parse_num = [&](const std::string& s) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      require(pos == s.size(), std::string(what) + ": bad number '" + s + "'");
      return v;
    } catch (const std::logic_error&) {
      throw rbf::ConfigError(std::string(what) + ": bad number '" + s + "'");
    }
  };
  if (spec.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (std::size_t pos; (pos = spec.find(':', start)) != std::string::npos;
         start = pos + 1)
      parts.push_back(spec.substr(start, pos - start));
    parts.push_back(spec.substr(start));
    require(parts.size() == 3, std::string(what) + ": expected lo:hi:step");
    const double lo = parse_num(parts[0]);
    const double hi = parse_num(parts[1]);
    const double step = parse_num(parts[2]);
    require(step > 0.0, std::string(what) + ": step must be positive");
    require(hi >= lo, std::string(what) + ": hi must be >= lo");
    // Small slack keeps the upper endpoint included despite rounding.
    for (double v = lo; v <= hi + 1e-9 * std::max(1.0, std::fabs(hi));
         v += step)
      out.push_back(std::min(v, hi));
    if (!out.empty()) out.back() = std::min(out.back(), hi);
  } else {
    std::size_t start = 0;
    for (std::size_t pos; (pos = spec.find(',', start)) != std::string::npos;
         start = pos + 1)
      out.push_back(parse_num(spec.substr(start, pos - start)));
    out.push_back(parse_num(spec.substr(start)));
  }
  require(!out.empty(), std::string(what) + ": empty grid");
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string csv_header(const char* command, const rbf::RunConfig& cfg,
                       const std::string& extra = "") {
  std::string line = std::string("# robustbf ") + command +
                     " config=" + rbf::config_hash(cfg) +
                     " data_seed=" + std::to_string(cfg.data_seed) +
                     " train_seed=" + std::to_string(cfg.train.seed) +
                     " eval_seed=" + std::to_string(cfg.eval_seed);
  if (!extra.empty()) line += " " + extra;
  return line;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw rbf::IoError("cannot open output file: " + path);
  out << text;
  if (!out) throw rbf::IoError("failed writing output file: " + path);
}

std::string file_stem(const std::string& path) {
  const std::size_t slash = path.find_last_of("/\\");
  std::string name = slash == std::string::npos ? path : path.substr(slash + 1);
  const std::size_t dot = name.find_last_of('.');
  if (dot != std::string::npos && dot > 0) name = name.substr(0, dot);
  return name.empty() ? path : name;
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

double percentile95(std::vector<double> ms) {
  std::sort(ms.begin(), ms.end());
  const std::size_t idx = static_cast<std::size_t>(
      std::ceil(0.95 * static_cast<double>(ms.size())));
  return ms[std::min(ms.size() - 1, idx == 0 ? 0 : idx - 1)];
}

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

}  // namespace

extern "C" {

struct rbf_dataset_s {
  rbf::Dataset ds;
};

struct rbf_model_s {
  rbf::ModelParams params;
};

const char* rbf_last_error(void) { return tl_error.c_str(); }

const char* rbf_version(void) { return "robustbf 1.0.0"; }

void rbf_string_free(char* s) { std::free(s); }

rbf_status rbf_config_render(const char* config_json,
                             const char* const* overrides, size_t n_overrides,
                             char** out_json) {
  return guarded([&] {
    require(out_json != nullptr, "config_render: null output pointer");
    const rbf::RunConfig cfg = merged_config(config_json, overrides, n_overrides);
    *out_json = dup_string(rbf::run_config_to_json(cfg));
  });
}

rbf_status rbf_config_hash(const char* config_json,
                           const char* const* overrides, size_t n_overrides,
                           char* out_hex) {
  return guarded([&] {
    require(out_hex != nullptr, "config_hash: null output pointer");
    const rbf::RunConfig cfg = merged_config(config_json, overrides, n_overrides);
    const std::string hex = rbf::config_hash(cfg);
    std::memcpy(out_hex, hex.c_str(), hex.size() + 1);
  });
}

rbf_status rbf_cmd_gen(const char* config_json, const char* const* overrides,
                       size_t n_overrides, const char* out_path) {
  return guarded([&] {
    require(out_path != nullptr, "gen: null output path");
    const rbf::RunConfig cfg = merged_config(config_json, overrides, n_overrides);
    const rbf::Dataset ds = rbf::generate_dataset(
        cfg.system, cfg.data_seed, cfg.n_train, cfg.n_val, cfg.n_test);
    rbf::dataset_save(ds, out_path);
  });
}

rbf_status rbf_cmd_train(const char* config_json, const char* const* overrides,
                         size_t n_overrides, const char* data_path,
                         const char* mode, const char* resume_path,
                         const char* checkpoint_out, const char* history_csv) {
  return guarded([&] {
    require(data_path != nullptr, "train: null dataset path");
    require(checkpoint_out != nullptr, "train: null checkpoint path");
    rbf::RunConfig cfg = merged_config(config_json, overrides, n_overrides);
    if (mode != nullptr) cfg.train.mode = rbf::mode_from_name(mode);
    const rbf::Dataset ds = rbf::dataset_load(data_path);

    rbf::LoadedCheckpoint previous;
    const rbf::LoadedCheckpoint* resume = nullptr;
    if (resume_path != nullptr) {
      previous = rbf::checkpoint_load_full(resume_path);
      resume = &previous;
    }
    const rbf::TrainResult result = rbf::train(ds, cfg.train, resume);
    rbf::checkpoint_save_full(result, checkpoint_out);
    if (history_csv != nullptr) {
      rbf::history_save_csv(
          result.history, history_csv,
          csv_header("train", cfg,
                     std::string("mode=") + rbf::mode_name(cfg.train.mode))
              .substr(2));  // history_save_csv prepends the "# " itself
    }
  });
}

rbf_status rbf_cmd_rate_curve(const char* config_json,
                              const char* const* overrides, size_t n_overrides,
                              const char* data_path,
                              const char* const* checkpoint_paths,
                              size_t n_checkpoints, const char* p_grid,
                              const char* csv_out) {
  return guarded([&] {
    require(data_path != nullptr, "rate-curve: null dataset path");
    require(csv_out != nullptr, "rate-curve: null output path");
    require(n_checkpoints > 0, "rate-curve: need at least one checkpoint");
    const std::vector<std::string> paths =
        collect_strings(checkpoint_paths, n_checkpoints, "rate-curve");
    const rbf::RunConfig cfg = merged_config(config_json, overrides, n_overrides);
    const std::string grid_spec = p_grid != nullptr ? p_grid : "0:35:5";
    const std::vector<double> grid = parse_grid(grid_spec, "rate-curve grid");
    const rbf::Dataset ds = rbf::dataset_load(data_path);
    const std::size_t threads = thread_count();

    std::ostringstream csv;
    csv << csv_header("rate-curve", cfg,
                      "u_eval=" + std::to_string(cfg.train.u_eval) +
                          " grid=" + grid_spec)
        << "\n";
    csv << "p_dbm,method,mean_rhat_mbps,std_rhat_mbps\n";
    for (const std::string& path : paths) {
      const rbf::ModelParams params = rbf::checkpoint_load(path);
      const std::vector<rbf::EvalPoint> table =
          rbf::evaluate(params, ds, rbf::Split::test, grid, cfg.train.u_eval,
                        cfg.eval_seed, threads);
      const std::string method = file_stem(path);
      for (const rbf::EvalPoint& pt : table)
        csv << fmt(pt.p_dbm) << ',' << method << ',' << fmt(pt.mean_rhat_mbps)
            << ',' << fmt(pt.std_rhat_mbps) << "\n";
    }
    write_text_file(csv_out, csv.str());
  });
}

rbf_status rbf_cmd_cdf(const char* config_json, const char* const* overrides,
                       size_t n_overrides, const char* data_path,
                       const char* checkpoint_path, size_t channel_index,
                       size_t n_errors, double p_dbm, const char* csv_out) {
  return guarded([&] {
    require(data_path != nullptr, "cdf: null dataset path");
    require(checkpoint_path != nullptr, "cdf: null checkpoint path");
    require(csv_out != nullptr, "cdf: null output path");
    require(n_errors > 0, "cdf: n_errors must be positive");
    const rbf::RunConfig cfg = merged_config(config_json, overrides, n_overrides);
    const rbf::Dataset ds = rbf::dataset_load(data_path);
    const rbf::ModelParams params = rbf::checkpoint_load(checkpoint_path);
    if (channel_index >= ds.n_test)
      throw rbf::ConfigError("cdf: channel index " +
                             std::to_string(channel_index) +
                             " out of range (test split has " +
                             std::to_string(ds.n_test) + " channels)");

    const rbf::SystemConfig& sys = ds.config;
    const std::size_t gi = ds.index_of(rbf::Split::test, channel_index);
    const rbf::ChannelSample& cs = ds.sample(rbf::Split::test, channel_index);
    const std::vector<double> noise(sys.k, sys.noise_power_mw());
    rbf::Rng err_rng(rbf::mix_seed(cfg.eval_seed, rbf::kStreamEvalError, gi));
    const rbf::ErrorBatch errs = rbf::gen_errors(
        err_rng, cs.h_est.rows(), cs.h_est.cols(), sys.error_variance, n_errors);
    rbf::Rng msg_rng(rbf::mix_seed(cfg.eval_seed, rbf::kStreamMessages, gi));
    const rbf::ModelMessages msgs = rbf::draw_model_messages(
        msg_rng, cs.h_est.rows(), cs.h_est.cols(), params);
    const rbf::BeamMatrix w =
        rbf::model_beamform(params, cs.h_est, p_dbm, noise, msgs);
    std::vector<double> rates = rbf::min_rates_over_errors(
        cs.h_est, w, errs, sys.bandwidth_mhz(), noise);
    std::sort(rates.begin(), rates.end(), rbf::value_less);
    const double r_hat = rbf::daqe(cs.h_est, w, errs, sys.outage_target,
                                   sys.bandwidth_mhz(), noise)
                             .r_hat;

    std::ostringstream csv;
    csv << csv_header("cdf", cfg,
                      "channel_index=" + std::to_string(channel_index) +
                          " p_dbm=" + fmt(p_dbm) + " r_hat_mbps=" + fmt(r_hat))
        << "\n";
    csv << "rate_mbps,empirical_cdf\n";
    for (std::size_t i = 0; i < rates.size(); ++i)
      csv << fmt(rates[i]) << ','
          << fmt(static_cast<double>(i + 1) / static_cast<double>(rates.size()))
          << "\n";
    write_text_file(csv_out, csv.str());
  });
}

rbf_status rbf_cmd_power_min(const char* config_json,
                             const char* const* overrides, size_t n_overrides,
                             const char* data_path, const char* checkpoint_path,
                             const char* rate_targets, const char* csv_out) {
  return guarded([&] {
    require(data_path != nullptr, "power-min: null dataset path");
    require(checkpoint_path != nullptr, "power-min: null checkpoint path");
    require(csv_out != nullptr, "power-min: null output path");
    const rbf::RunConfig cfg = merged_config(config_json, overrides, n_overrides);
    const std::string targets_spec =
        rate_targets != nullptr ? rate_targets : "6:12:2";
    const std::vector<double> targets =
        parse_grid(targets_spec, "power-min targets");
    const rbf::Dataset ds = rbf::dataset_load(data_path);
    const rbf::ModelParams params = rbf::checkpoint_load(checkpoint_path);
    const std::size_t threads = thread_count();

    std::ostringstream csv;
    csv << csv_header("power-min", cfg,
                      "u_eval=" + std::to_string(cfg.bisect.u_eval) +
                          " targets=" + targets_spec)
        << "\n";
    csv << "rate_target_mbps,mean_pstar_dbm_over_feasible,feasibility,mean_ms\n";
    for (double target : targets) {
      const rbf::PowerMinRow row =
          rbf::power_min_over_split(params, ds, rbf::Split::test, target,
                                    cfg.bisect, cfg.eval_seed, threads);
      csv << fmt(row.rate_target_mbps) << ',' << fmt(row.mean_pstar_dbm) << ','
          << fmt(row.feasibility) << ',' << fmt(row.mean_ms) << "\n";
    }
    write_text_file(csv_out, csv.str());
  });
}

rbf_status rbf_cmd_bench(const char* config_json, const char* const* overrides,
                         size_t n_overrides, const char* data_path,
                         const char* checkpoint_path, size_t rounds,
                         const char* csv_out) {
  return guarded([&] {
    require(data_path != nullptr, "bench: null dataset path");
    require(checkpoint_path != nullptr, "bench: null checkpoint path");
    require(csv_out != nullptr, "bench: null output path");
    require(rounds > 0, "bench: rounds must be positive");
    const rbf::RunConfig cfg = merged_config(config_json, overrides, n_overrides);
    const rbf::Dataset ds = rbf::dataset_load(data_path);
    const rbf::ModelParams params = rbf::checkpoint_load(checkpoint_path);
    require(ds.n_test > 0, "bench: dataset has no test channels");

    const rbf::SystemConfig& sys = ds.config;
    const std::vector<double> noise(sys.k, sys.noise_power_mw());
    using clock = std::chrono::steady_clock;

    // Phase 1: one inference forward per round (message draw excluded; it
    // is input preparation, not the network).
    std::vector<double> fwd_ms;
    fwd_ms.reserve(rounds);
    for (std::size_t r = 0; r < rounds; ++r) {
      const std::size_t i = r % ds.n_test;
      const std::size_t gi = ds.index_of(rbf::Split::test, i);
      const rbf::ChannelSample& cs = ds.sample(rbf::Split::test, i);
      rbf::Rng msg_rng(rbf::mix_seed(cfg.eval_seed, rbf::kStreamMessages, gi));
      const rbf::ModelMessages msgs = rbf::draw_model_messages(
          msg_rng, cs.h_est.rows(), cs.h_est.cols(), params);
      const auto t0 = clock::now();
      const rbf::BeamMatrix w = rbf::model_beamform(
          params, cs.h_est, cfg.train.val_power_dbm, noise, msgs);
      fwd_ms.push_back(
          std::chrono::duration<double, std::milli>(clock::now() - t0).count());
      (void)w;
    }

    // Phase 2: a full minimum-power search per round.  The target is set to
    // 70% of the channel's own top-of-range rate so the bracket genuinely
    // has to shrink instead of exiting at an endpoint.
    std::vector<double> bis_ms;
    bis_ms.reserve(rounds);
    for (std::size_t r = 0; r < rounds; ++r) {
      const std::size_t i = r % ds.n_test;
      const std::size_t gi = ds.index_of(rbf::Split::test, i);
      const rbf::ChannelSample& cs = ds.sample(rbf::Split::test, i);
      rbf::BisectConfig bc = cfg.bisect;
      {
        rbf::Rng err_rng(
            rbf::mix_seed(cfg.eval_seed, rbf::kStreamEvalError, gi));
        const rbf::ErrorBatch errs =
            rbf::gen_errors(err_rng, cs.h_est.rows(), cs.h_est.cols(),
                            sys.error_variance, bc.u_eval);
        rbf::Rng msg_rng(
            rbf::mix_seed(cfg.eval_seed, rbf::kStreamMessages, gi));
        const rbf::ModelMessages msgs = rbf::draw_model_messages(
            msg_rng, cs.h_est.rows(), cs.h_est.cols(), params);
        const rbf::BeamMatrix w_hi =
            rbf::model_beamform(params, cs.h_est, bc.p_hi_dbm, noise, msgs);
        bc.rate_target_mbps = 0.7 * rbf::daqe(cs.h_est, w_hi, errs,
                                              sys.outage_target,
                                              sys.bandwidth_mhz(), noise)
                                        .r_hat;
      }
      const auto t0 = clock::now();
      const rbf::BisectResult res = rbf::bisect_power(
          params, cs.h_est, sys, bc, cfg.eval_seed, gi);
      bis_ms.push_back(
          std::chrono::duration<double, std::milli>(clock::now() - t0).count());
      (void)res;
    }

    std::ostringstream csv;
    csv << csv_header("bench", cfg, "rounds=" + std::to_string(rounds)) << "\n";
    csv << "phase,mean_ms,p95_ms\n";
    csv << "p1_forward," << fmt(mean_of(fwd_ms)) << ','
        << fmt(percentile95(fwd_ms)) << "\n";
    csv << "p2_bisect," << fmt(mean_of(bis_ms)) << ','
        << fmt(percentile95(bis_ms)) << "\n";
    write_text_file(csv_out, csv.str());
  });
}

rbf_status rbf_dataset_open(const char* path, rbf_dataset** out) {
  return guarded([&] {
    require(path != nullptr, "dataset_open: null path");
    require(out != nullptr, "dataset_open: null output pointer");
    auto* handle = new rbf_dataset_s{rbf::dataset_load(path)};
    *out = handle;
  });
}

void rbf_dataset_close(rbf_dataset* ds) { delete ds; }

rbf_status rbf_dataset_info(const rbf_dataset* ds, size_t* n, size_t* k,
                            size_t* n_train, size_t* n_val, size_t* n_test) {
  return guarded([&] {
    require(ds != nullptr, "dataset_info: null handle");
    if (n != nullptr) *n = ds->ds.config.n;
    if (k != nullptr) *k = ds->ds.config.k;
    if (n_train != nullptr) *n_train = ds->ds.n_train;
    if (n_val != nullptr) *n_val = ds->ds.n_val;
    if (n_test != nullptr) *n_test = ds->ds.n_test;
  });
}

rbf_status rbf_model_open(const char* path, rbf_model** out) {
  return guarded([&] {
    require(path != nullptr, "model_open: null path");
    require(out != nullptr, "model_open: null output pointer");
    auto* handle = new rbf_model_s{rbf::checkpoint_load(path)};
    *out = handle;
  });
}

void rbf_model_close(rbf_model* m) { delete m; }

rbf_status rbf_model_mode(const rbf_model* m, const char** mode) {
  return guarded([&] {
    require(m != nullptr, "model_mode: null handle");
    require(mode != nullptr, "model_mode: null output pointer");
    *mode = rbf::mode_name(m->params.mode);
  });
}

rbf_status rbf_model_beamform(const rbf_model* m, size_t n, size_t k,
                              const double* h_re, const double* h_im,
                              double p_dbm, double noise_mw,
                              unsigned long long msg_seed, double* w_re,
                              double* w_im) {
  return guarded([&] {
    require(m != nullptr, "model_beamform: null handle");
    require(n > 0 && k > 0, "model_beamform: n and k must be positive");
    require(h_re != nullptr && h_im != nullptr,
            "model_beamform: null channel buffers");
    require(w_re != nullptr && w_im != nullptr,
            "model_beamform: null output buffers");
    require(noise_mw > 0.0, "model_beamform: noise power must be positive");
    if (m->params.mode == rbf::TrainMode::direct_dnn)
      require(m->params.dnn.n == n && m->params.dnn.k == k,
              "model_beamform: checkpoint sized for a different system");

    rbf::RealTensor re(n, k), im(n, k);
    std::memcpy(re.data(), h_re, n * k * sizeof(double));
    std::memcpy(im.data(), h_im, n * k * sizeof(double));
    const rbf::ComplexMat h(std::move(re), std::move(im));
    const std::vector<double> noise(k, noise_mw);
    rbf::Rng msg_rng(msg_seed);
    const rbf::ModelMessages msgs =
        rbf::draw_model_messages(msg_rng, n, k, m->params);
    const rbf::BeamMatrix w =
        rbf::model_beamform(m->params, h, p_dbm, noise, msgs);
    std::memcpy(w_re, w.w.re.data(), n * k * sizeof(double));
    std::memcpy(w_im, w.w.im.data(), n * k * sizeof(double));
  });
}

}  // extern "C"
