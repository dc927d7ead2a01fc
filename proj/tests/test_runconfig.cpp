// Configuration schema tests: strict key checking, dotted-path overrides,
// and hash stability, with expected values spelled out by hand.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cctype>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "rbf/errors.hpp"
#include "rbf/runconfig.hpp"

using namespace rbf;

namespace {

RunConfig from_overrides(const std::vector<std::string>& sets) {
  return run_config_with_overrides("", sets);
}

}  // namespace

TEST_CASE("defaults describe the desk system") {
  const RunConfig cfg = from_overrides({});
  CHECK(cfg.system.n == 4);
  CHECK(cfg.system.k == 4);
  CHECK(cfg.system.error_variance == doctest::Approx(0.075));
  CHECK(cfg.system.outage_target == doctest::Approx(0.05));
  CHECK(cfg.train.epochs == 150);
  CHECK(cfg.train.u_train == 500);
  CHECK(cfg.bisect.power_tol_db == doctest::Approx(0.05));
  CHECK(cfg.n_train == 20000);
  CHECK(cfg.data_seed == 1);
  CHECK(cfg.eval_seed == 1000);
  CHECK_FALSE(cfg.system.large_scale.has_value());
}

TEST_CASE("partial documents keep defaults elsewhere") {
  const RunConfig cfg = run_config_from_json(
      R"({"train": {"lr": 0.003, "epochs": 7}, "data": {"seed": 9}})");
  CHECK(cfg.train.lr == doctest::Approx(0.003));
  CHECK(cfg.train.epochs == 7);
  CHECK(cfg.data_seed == 9);
  CHECK(cfg.system.n == 4);           // untouched section
  CHECK(cfg.train.batch_size == 100);  // untouched field in a touched section
}

TEST_CASE("unknown keys are rejected at every level") {
  CHECK_THROWS_AS(run_config_from_json(R"({"sytem": {}})"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"system": {"antennas": 4}})"),
                  ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"train": {"learning_rate": 1e-3}})"),
                  ConfigError);
  CHECK_THROWS_AS(
      run_config_from_json(R"({"system": {"large_scale": {"dmin": 0.1}}})"),
      ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"eval": {"sed": 3}})"), ConfigError);
}

TEST_CASE("malformed and mistyped documents are config errors") {
  CHECK_THROWS_AS(run_config_from_json("{oops"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json("[1,2]"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"system": 3})"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"system": {"n": "four"}})"),
                  ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"train": {"mode": "rzf"}})"),
                  ConfigError);
}

TEST_CASE("semantic validation still applies after parsing") {
  // u_train * outage_target must stay >= 1 for the quantile to exist.
  CHECK_THROWS_AS(
      run_config_from_json(R"({"train": {"u_train": 10}})"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"system": {"outage_target": 0}})"),
                  ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"data": {"n_train": 0}})"),
                  ConfigError);
}

TEST_CASE("mode names round-trip through the document") {
  for (const char* name :
       {"proposed", "s_zero", "rzf_power_only", "direct_dnn"}) {
    const RunConfig cfg = run_config_from_json(
        std::string(R"({"train": {"mode": ")") + name + R"("}})");
    CHECK(std::string(mode_name(cfg.train.mode)) == name);
  }
}

TEST_CASE("large_scale accepts null and a full object") {
  const RunConfig off =
      run_config_from_json(R"({"system": {"large_scale": null}})");
  CHECK_FALSE(off.system.large_scale.has_value());
  const RunConfig on = run_config_from_json(
      R"({"system": {"large_scale": {"d_min_km": 0.2, "d_max_km": 0.4}}})");
  REQUIRE(on.system.large_scale.has_value());
  CHECK(on.system.large_scale->d_min_km == doctest::Approx(0.2));
  CHECK(on.system.large_scale->d_max_km == doctest::Approx(0.4));
}

TEST_CASE("serialization round-trips every field") {
  RunConfig cfg;
  cfg.system.n = 3;
  cfg.system.k = 2;
  cfg.system.outage_target = 0.1;
  cfg.system.large_scale = LargeScaleConfig{0.15, 0.45};
  cfg.train.mode = TrainMode::direct_dnn;
  cfg.train.lr = 0.0007;
  cfg.train.epochs = 42;
  cfg.bisect.eps_mbps = 0.02;
  cfg.data_seed = 77;
  cfg.eval_seed = 1234;
  cfg.n_val = 321;
  cfg.out_dir = "results";
  const RunConfig back = run_config_from_json(run_config_to_json(cfg));
  CHECK(back.system.n == 3);
  CHECK(back.system.k == 2);
  CHECK(back.system.outage_target == doctest::Approx(0.1));
  REQUIRE(back.system.large_scale.has_value());
  CHECK(back.system.large_scale->d_max_km == doctest::Approx(0.45));
  CHECK(back.train.mode == TrainMode::direct_dnn);
  CHECK(back.train.lr == doctest::Approx(0.0007));
  CHECK(back.train.epochs == 42);
  CHECK(back.bisect.eps_mbps == doctest::Approx(0.02));
  CHECK(back.data_seed == 77);
  CHECK(back.eval_seed == 1234);
  CHECK(back.n_val == 321);
  CHECK(back.out_dir == "results");
}

TEST_CASE("overrides address fields by dotted path") {
  const RunConfig cfg = from_overrides(
      {"train.lr=0.01", "system.k=3", "data.n_test=5", "out_dir=runs",
       "train.mode=s_zero", "bisect.max_iterations=17"});
  CHECK(cfg.train.lr == doctest::Approx(0.01));
  CHECK(cfg.system.k == 3);
  CHECK(cfg.n_test == 5);
  CHECK(cfg.out_dir == "runs");
  CHECK(cfg.train.mode == TrainMode::s_zero);
  CHECK(cfg.bisect.max_iterations == 17);
}

TEST_CASE("overrides apply on top of a document") {
  const RunConfig cfg = run_config_with_overrides(
      R"({"train": {"lr": 0.5, "epochs": 9}})", {"train.lr=0.25"});
  CHECK(cfg.train.lr == doctest::Approx(0.25));  // override wins
  CHECK(cfg.train.epochs == 9);                  // document survives
}

TEST_CASE("bad overrides are rejected") {
  CHECK_THROWS_AS(from_overrides({"train.lr"}), ConfigError);        // no '='
  CHECK_THROWS_AS(from_overrides({"=3"}), ConfigError);              // no path
  CHECK_THROWS_AS(from_overrides({"train.speed=3"}), ConfigError);   // unknown
  CHECK_THROWS_AS(from_overrides({"nope.lr=3"}), ConfigError);       // unknown
  CHECK_THROWS_AS(from_overrides({"train=3"}), ConfigError);  // names a section
  CHECK_THROWS_AS(from_overrides({"train..lr=3"}), ConfigError);
  CHECK_THROWS_AS(from_overrides({"train.lr=fast"}), ConfigError);  // bad type
}

TEST_CASE("string override values need no quoting") {
  const RunConfig cfg = from_overrides({"train.mode=rzf_power_only"});
  CHECK(cfg.train.mode == TrainMode::rzf_power_only);
}

TEST_CASE("config hash is stable and key-sensitive") {
  const RunConfig a = from_overrides({});
  const RunConfig b = from_overrides({});
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  for (char c : config_hash(a)) CHECK(std::isxdigit(static_cast<unsigned char>(c)));

  const RunConfig c1 = from_overrides({"train.lr=0.002"});
  CHECK(config_hash(c1) != config_hash(a));
  // Equal content hashes equally no matter how it was specified.
  const RunConfig c2 = run_config_from_json(R"({"train": {"lr": 0.002}})");
  CHECK(config_hash(c1) == config_hash(c2));
}

TEST_CASE("load_run_config reads files and flags missing ones") {
  const std::string path = "tmp_runconfig_test.json";
  {
    std::ofstream out(path);
    out << R"({"system": {"n": 6}})";
  }
  const RunConfig cfg = load_run_config(path, {"system.k=5"});
  CHECK(cfg.system.n == 6);
  CHECK(cfg.system.k == 5);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_run_config("definitely_missing.json", {}), IoError);
  // Empty path means defaults.
  CHECK(load_run_config("", {}).system.n == 4);
}
