#include "rbf/runconfig.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rbf/errors.hpp"

namespace rbf {

using nlohmann::json;

namespace {

// Strict object reader: every key the document supplies must be consumed by
// a field() call, otherwise we name the stray key and its section.
class StrictObject {
 public:
  StrictObject(const json& j, std::string section)
      : obj_(j), section_(std::move(section)) {
    if (!j.is_object()) {
      throw ConfigError("config: '" + section_ + "' must be a JSON object");
    }
  }

  bool has(const char* key) {
    if (!obj_.contains(key)) return false;
    seen_.push_back(key);
    return true;
  }

  const json& get(const char* key) const { return obj_.at(key); }

  template <typename T>
  void field(const char* key, T& out) {
    if (!has(key)) return;
    try {
      out = get(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: bad value for '" + section_ + "." + key + "'");
    }
  }

  void finish() const {
    for (const auto& item : obj_.items()) {
      bool known = false;
      for (const auto& k : seen_) {
        if (item.key() == k) { known = true; break; }
      }
      if (!known) {
        throw ConfigError("config: unknown key '" + section_ + "." +
                          item.key() + "'");
      }
    }
  }

 private:
  const json& obj_;
  std::string section_;
  std::vector<std::string> seen_;
};

json system_to_json(const SystemConfig& s) {
  json j{{"n", s.n},
         {"k", s.k},
         {"bandwidth_hz", s.bandwidth_hz},
         {"noise_psd_dbm_per_hz", s.noise_psd_dbm_per_hz},
         {"error_variance", s.error_variance},
         {"outage_target", s.outage_target},
         {"power_lo_dbm", s.power_lo_dbm},
         {"power_hi_dbm", s.power_hi_dbm}};
  if (s.large_scale) {
    j["large_scale"] = json{{"d_min_km", s.large_scale->d_min_km},
                            {"d_max_km", s.large_scale->d_max_km}};
  } else {
    j["large_scale"] = nullptr;
  }
  return j;
}

SystemConfig system_from_json(const json& j) {
  SystemConfig s;
  StrictObject o(j, "system");
  o.field("n", s.n);
  o.field("k", s.k);
  o.field("bandwidth_hz", s.bandwidth_hz);
  o.field("noise_psd_dbm_per_hz", s.noise_psd_dbm_per_hz);
  o.field("error_variance", s.error_variance);
  o.field("outage_target", s.outage_target);
  o.field("power_lo_dbm", s.power_lo_dbm);
  o.field("power_hi_dbm", s.power_hi_dbm);
  if (o.has("large_scale")) {
    const json& ls = o.get("large_scale");
    if (ls.is_null()) {
      s.large_scale.reset();
    } else {
      LargeScaleConfig lc;
      StrictObject lo(ls, "system.large_scale");
      lo.field("d_min_km", lc.d_min_km);
      lo.field("d_max_km", lc.d_max_km);
      lo.finish();
      s.large_scale = lc;
    }
  }
  o.finish();
  return s;
}

json train_to_json(const TrainConfig& t) {
  return json{{"mode", mode_name(t.mode)},
              {"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"lr", t.lr},
              {"u_train", t.u_train},
              {"u_eval", t.u_eval},
              {"power_lo_dbm", t.power_lo_dbm},
              {"power_hi_dbm", t.power_hi_dbm},
              {"patience", t.patience},
              {"val_power_dbm", t.val_power_dbm},
              {"seed", t.seed}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  StrictObject o(j, "train");
  if (o.has("mode")) {
    const json& m = o.get("mode");
    if (!m.is_string()) throw ConfigError("config: 'train.mode' must be a string");
    t.mode = mode_from_name(m.get<std::string>());
  }
  o.field("epochs", t.epochs);
  o.field("batch_size", t.batch_size);
  o.field("lr", t.lr);
  o.field("u_train", t.u_train);
  o.field("u_eval", t.u_eval);
  o.field("power_lo_dbm", t.power_lo_dbm);
  o.field("power_hi_dbm", t.power_hi_dbm);
  o.field("patience", t.patience);
  o.field("val_power_dbm", t.val_power_dbm);
  o.field("seed", t.seed);
  o.finish();
  return t;
}

json bisect_to_json(const BisectConfig& b) {
  return json{{"p_lo_dbm", b.p_lo_dbm},
              {"p_hi_dbm", b.p_hi_dbm},
              {"rate_target_mbps", b.rate_target_mbps},
              {"eps_mbps", b.eps_mbps},
              {"power_tol_db", b.power_tol_db},
              {"max_iterations", b.max_iterations},
              {"u_eval", b.u_eval}};
}

BisectConfig bisect_from_json(const json& j) {
  BisectConfig b;
  StrictObject o(j, "bisect");
  o.field("p_lo_dbm", b.p_lo_dbm);
  o.field("p_hi_dbm", b.p_hi_dbm);
  o.field("rate_target_mbps", b.rate_target_mbps);
  o.field("eps_mbps", b.eps_mbps);
  o.field("power_tol_db", b.power_tol_db);
  o.field("max_iterations", b.max_iterations);
  o.field("u_eval", b.u_eval);
  o.finish();
  return b;
}

json to_json_doc(const RunConfig& cfg) {
  return json{{"system", system_to_json(cfg.system)},
              {"data", json{{"seed", cfg.data_seed},
                            {"n_train", cfg.n_train},
                            {"n_val", cfg.n_val},
                            {"n_test", cfg.n_test}}},
              {"train", train_to_json(cfg.train)},
              {"bisect", bisect_to_json(cfg.bisect)},
              {"eval", json{{"seed", cfg.eval_seed}}},
              {"out_dir", cfg.out_dir}};
}

RunConfig from_json_doc(const json& j) {
  RunConfig cfg;
  StrictObject o(j, "config");
  if (o.has("system")) cfg.system = system_from_json(o.get("system"));
  if (o.has("data")) {
    StrictObject d(o.get("data"), "data");
    d.field("seed", cfg.data_seed);
    d.field("n_train", cfg.n_train);
    d.field("n_val", cfg.n_val);
    d.field("n_test", cfg.n_test);
    d.finish();
  }
  if (o.has("train")) cfg.train = train_from_json(o.get("train"));
  if (o.has("bisect")) cfg.bisect = bisect_from_json(o.get("bisect"));
  if (o.has("eval")) {
    StrictObject e(o.get("eval"), "eval");
    e.field("seed", cfg.eval_seed);
    e.finish();
  }
  o.field("out_dir", cfg.out_dir);
  o.finish();
  return cfg;
}

// Overrides look like "train.lr=0.003".  The value is parsed as JSON when
// possible ("0.003", "true", "\"rzf_power_only\"") and falls back to a bare
// string so users can write train.mode=proposed without quotes.
void apply_override(json& doc, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("config: override '" + spec + "' must be path=value");
  }
  const std::string path = spec.substr(0, eq);
  const std::string value = spec.substr(eq + 1);

  json* node = &doc;
  std::size_t start = 0;
  std::string walked;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (key.empty()) {
      throw ConfigError("config: override path '" + path + "' has an empty segment");
    }
    walked = walked.empty() ? key : walked + "." + key;
    if (!node->is_object() || !node->contains(key)) {
      throw ConfigError("config: override addresses unknown key '" + walked + "'");
    }
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) {
    throw ConfigError("config: override path '" + path +
                      "' names a section, not a value");
  }

  json parsed = json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = json(value);
  *node = parsed;
}

json parse_document(const std::string& text) {
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config: malformed JSON");
  if (!doc.is_object()) throw ConfigError("config: top level must be an object");
  return doc;
}

}  // namespace

void RunConfig::validate() const {
  system.validate();
  train.validate(system.outage_target);
  bisect.validate();
  if (n_train == 0 || n_val == 0 || n_test == 0) {
    throw ConfigError("config: data split sizes must be positive");
  }
  if (out_dir.empty()) throw ConfigError("config: out_dir must not be empty");
}

std::string run_config_to_json(const RunConfig& cfg) {
  return to_json_doc(cfg).dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text) {
  RunConfig cfg = from_json_doc(parse_document(text));
  cfg.validate();
  return cfg;
}

RunConfig run_config_with_overrides(const std::string& json_text,
                                    const std::vector<std::string>& overrides) {
  // Start from the fully-populated default document so overrides can address
  // any key, not just the ones the file mentions.
  json doc = to_json_doc(RunConfig{});
  if (!json_text.empty()) {
    const json file = parse_document(json_text);
    from_json_doc(file);  // reject unknown keys in the file itself
    doc.merge_patch(file);
  }
  for (const auto& spec : overrides) apply_override(doc, spec);
  RunConfig cfg = from_json_doc(doc);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides) {
  std::string text;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    text = buf.str();
  }
  return run_config_with_overrides(text, overrides);
}

std::string config_hash(const RunConfig& cfg) {
  const std::string canon = to_json_doc(cfg).dump();
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a 64-bit offset basis
  for (unsigned char c : canon) {
    h ^= c;
    h *= 1099511628211ull;
  }
  static const char* hex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = hex[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace rbf
