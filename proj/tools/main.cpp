// robustbf command-line interface. A thin veneer over the C API in
// robustbf.h: flags are collected here, all real work happens behind the
// shared library boundary.  Exit codes: 0 success, 2 configuration error,
// 3 I/O error, 4 numerical abort, 1 anything else.

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "robustbf.h"

namespace {

// Shared by every subcommand: optional config file plus dotted overrides.
struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> sets;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path,
                    "JSON configuration file (defaults used when omitted)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--set", sets,
                    "Override a config field by dotted path, e.g. "
                    "--set train.lr=0.003 (repeatable)");
  }

  // File text, or empty string for defaults.  Returns false on read failure.
  bool read_file(std::string& out) const {
    out.clear();
    if (config_path.empty()) return true;
    std::FILE* f = std::fopen(config_path.c_str(), "rb");
    if (f == nullptr) return false;
    char buf[4096];
    std::size_t got;
    while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) out.append(buf, got);
    std::fclose(f);
    return true;
  }

  std::vector<const char*> set_ptrs() const {
    std::vector<const char*> ptrs;
    ptrs.reserve(sets.size());
    for (const std::string& s : sets) ptrs.push_back(s.c_str());
    return ptrs;
  }
};

int finish(rbf_status status, const char* command) {
  if (status == RBF_OK) return 0;
  std::fprintf(stderr, "robustbf %s: %s\n", command, rbf_last_error());
  switch (status) {
    case RBF_ERR_CONFIG: return 2;
    case RBF_ERR_IO: return 3;
    case RBF_ERR_NUMERIC: return 4;
    default: return 1;
  }
}

int run_gen(const ConfigArgs& cargs, const std::string& out_path) {
  std::string cfg;
  if (!cargs.read_file(cfg)) {
    std::fprintf(stderr, "robustbf gen: cannot read config '%s'\n",
                 cargs.config_path.c_str());
    return 3;
  }
  const auto sets = cargs.set_ptrs();
  const rbf_status st = rbf_cmd_gen(cfg.c_str(), sets.data(), sets.size(),
                                    out_path.c_str());
  if (st != RBF_OK) return finish(st, "gen");

  char hash[17] = {0};
  rbf_config_hash(cfg.c_str(), sets.data(), sets.size(), hash);
  rbf_dataset* ds = nullptr;
  if (rbf_dataset_open(out_path.c_str(), &ds) == RBF_OK) {
    size_t n = 0, k = 0, n_train = 0, n_val = 0, n_test = 0;
    rbf_dataset_info(ds, &n, &k, &n_train, &n_val, &n_test);
    std::printf("wrote %s: N=%zu K=%zu train=%zu val=%zu test=%zu config=%s\n",
                out_path.c_str(), n, k, n_train, n_val, n_test, hash);
    rbf_dataset_close(ds);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robust downlink beamforming pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(rbf_version()));

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a channel dataset");
  ConfigArgs gen_cfg;
  gen_cfg.attach(gen);
  std::string gen_out;
  gen->add_option("--out", gen_out, "Output dataset path")->required();

  // train
  auto* train = app.add_subcommand("train", "Train a model");
  ConfigArgs train_cfg;
  train_cfg.attach(train);
  std::string train_data, train_mode, train_resume, train_out, train_history;
  train->add_option("--data", train_data, "Dataset path")->required();
  train->add_option("--mode", train_mode,
                    "proposed | s_zero | rzf_power_only | direct_dnn "
                    "(overrides config train.mode)");
  train->add_option("--resume", train_resume,
                    "Continue training from this checkpoint");
  train->add_option("--out", train_out, "Checkpoint output path")->required();
  train->add_option("--history", train_history, "Per-epoch history CSV path");

  // rate-curve
  auto* curve = app.add_subcommand(
      "rate-curve", "Mean robust rate over a transmit-power grid");
  ConfigArgs curve_cfg;
  curve_cfg.attach(curve);
  std::string curve_data, curve_grid = "0:35:5", curve_out;
  std::vector<std::string> curve_ckpts;
  curve->add_option("--data", curve_data, "Dataset path")->required();
  curve->add_option("--checkpoint", curve_ckpts,
                    "Model checkpoint (repeatable; one curve per model)")
      ->required();
  curve->add_option("--p-grid", curve_grid,
                    "Power grid, lo:hi:step dBm or comma list");
  curve->add_option("--out", curve_out, "Output CSV path")->required();

  // cdf
  auto* cdf = app.add_subcommand(
      "cdf", "Empirical rate CDF for one test channel under fresh errors");
  ConfigArgs cdf_cfg;
  cdf_cfg.attach(cdf);
  std::string cdf_data, cdf_ckpt, cdf_out;
  std::size_t cdf_index = 0, cdf_errors = 2000;
  double cdf_p_dbm = 30.0;
  cdf->add_option("--data", cdf_data, "Dataset path")->required();
  cdf->add_option("--checkpoint", cdf_ckpt, "Model checkpoint")->required();
  cdf->add_option("--channel-index", cdf_index, "Test-split channel index");
  cdf->add_option("--errors", cdf_errors, "Number of fresh error draws");
  cdf->add_option("--p-dbm", cdf_p_dbm, "Transmit power in dBm");
  cdf->add_option("--out", cdf_out, "Output CSV path")->required();

  // power-min
  auto* pmin = app.add_subcommand(
      "power-min", "Minimum transmit power per rate target (bisection)");
  ConfigArgs pmin_cfg;
  pmin_cfg.attach(pmin);
  std::string pmin_data, pmin_ckpt, pmin_targets = "6:12:2", pmin_out;
  pmin->add_option("--data", pmin_data, "Dataset path")->required();
  pmin->add_option("--checkpoint", pmin_ckpt, "Model checkpoint")->required();
  pmin->add_option("--rate-targets", pmin_targets,
                   "Rate targets, lo:hi:step Mbps or comma list");
  pmin->add_option("--out", pmin_out, "Output CSV path")->required();

  // bench
  auto* bench = app.add_subcommand(
      "bench", "Time the inference forward pass and the power bisection");
  ConfigArgs bench_cfg;
  bench_cfg.attach(bench);
  std::string bench_data, bench_ckpt, bench_out;
  std::size_t bench_rounds = 200;
  bench->add_option("--data", bench_data, "Dataset path")->required();
  bench->add_option("--checkpoint", bench_ckpt, "Model checkpoint")->required();
  bench->add_option("--n", bench_rounds, "Timing rounds per phase");
  bench->add_option("--out", bench_out, "Output CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Help/version "errors" exit 0 through CLI11; real flag mistakes are
    // configuration errors per the exit-code contract.
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const auto run = [&](const ConfigArgs& cargs, const char* name,
                       auto&& call) -> int {
    std::string cfg;
    if (!cargs.read_file(cfg)) {
      std::fprintf(stderr, "robustbf %s: cannot read config '%s'\n", name,
                   cargs.config_path.c_str());
      return 3;
    }
    const auto sets = cargs.set_ptrs();
    return finish(call(cfg.c_str(), sets.data(), sets.size()), name);
  };

  if (gen->parsed()) return run_gen(gen_cfg, gen_out);

  if (train->parsed()) {
    return run(train_cfg, "train",
               [&](const char* cfg, const char* const* sets, size_t n_sets) {
                 return rbf_cmd_train(
                     cfg, sets, n_sets, train_data.c_str(),
                     train_mode.empty() ? nullptr : train_mode.c_str(),
                     train_resume.empty() ? nullptr : train_resume.c_str(),
                     train_out.c_str(),
                     train_history.empty() ? nullptr : train_history.c_str());
               });
  }

  if (curve->parsed()) {
    return run(curve_cfg, "rate-curve",
               [&](const char* cfg, const char* const* sets, size_t n_sets) {
                 std::vector<const char*> ckpts;
                 for (const std::string& c : curve_ckpts)
                   ckpts.push_back(c.c_str());
                 return rbf_cmd_rate_curve(cfg, sets, n_sets,
                                           curve_data.c_str(), ckpts.data(),
                                           ckpts.size(), curve_grid.c_str(),
                                           curve_out.c_str());
               });
  }

  if (cdf->parsed()) {
    return run(cdf_cfg, "cdf",
               [&](const char* cfg, const char* const* sets, size_t n_sets) {
                 return rbf_cmd_cdf(cfg, sets, n_sets, cdf_data.c_str(),
                                    cdf_ckpt.c_str(), cdf_index, cdf_errors,
                                    cdf_p_dbm, cdf_out.c_str());
               });
  }

  if (pmin->parsed()) {
    return run(pmin_cfg, "power-min",
               [&](const char* cfg, const char* const* sets, size_t n_sets) {
                 return rbf_cmd_power_min(cfg, sets, n_sets, pmin_data.c_str(),
                                          pmin_ckpt.c_str(),
                                          pmin_targets.c_str(),
                                          pmin_out.c_str());
               });
  }

  if (bench->parsed()) {
    return run(bench_cfg, "bench",
               [&](const char* cfg, const char* const* sets, size_t n_sets) {
                 return rbf_cmd_bench(cfg, sets, n_sets, bench_data.c_str(),
                                      bench_ckpt.c_str(), bench_rounds,
                                      bench_out.c_str());
               });
  }
  return 2;  // unreachable: require_subcommand(1)
}
