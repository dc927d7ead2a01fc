#include "rbf/channel.hpp"

#include <cstdio>
#include <cstring>
#include <memory>

#include "rbf/errors.hpp"

namespace rbf {

void SystemConfig::validate() const {
  if (n < 1) throw ConfigError("system.n must be >= 1");
  if (k < 1) throw ConfigError("system.k must be >= 1");
  if (bandwidth_hz <= 0) throw ConfigError("system.bandwidth_hz must be positive");
  if (error_variance < 0) throw ConfigError("system.error_variance must be >= 0");
  if (!(outage_target > 0.0 && outage_target < 1.0))
    throw ConfigError("system.outage_target must lie in (0, 1)");
  if (!(power_lo_dbm < power_hi_dbm))
    throw ConfigError("system.power_lo_dbm must be below power_hi_dbm");
  if (large_scale) {
    if (!(large_scale->d_min_km > 0) || !(large_scale->d_max_km >= large_scale->d_min_km))
      throw ConfigError("system.large_scale distances must satisfy 0 < d_min <= d_max");
  }
}

double pathloss_db(double d_km) {
  if (!(d_km > 0.0))
    throw ConfigError("pathloss_db: distance must be positive, got " +
                      std::to_string(d_km));
  return 128.1 + 37.6 * std::log10(d_km);
}

ChannelSample gen_channel(Rng& rng, const SystemConfig& cfg) {
  ChannelSample s;
  s.h_est = ComplexMat(cfg.n, cfg.k);
  // Draw order pinned for reproducibility: per user, optional distance first,
  // then the column entries (re, im interleaved).
  const double sd = std::sqrt(0.5);  // CN(0,1) = two Normal(0, 1/2) parts
  for (std::size_t k = 0; k < cfg.k; ++k) {
    double amp = 1.0;
    if (cfg.large_scale) {
      const double d = rng.uniform(cfg.large_scale->d_min_km, cfg.large_scale->d_max_km);
      const double gain = std::pow(10.0, -pathloss_db(d) / 10.0);
      s.gain_linear.push_back(gain);
      amp = std::sqrt(gain);
    }
    for (std::size_t n = 0; n < cfg.n; ++n) {
      s.h_est.re(n, k) = amp * rng.normal(0.0, sd);
      s.h_est.im(n, k) = amp * rng.normal(0.0, sd);
    }
  }
  return s;
}

ErrorBatch gen_errors(Rng& rng, std::size_t n, std::size_t k,
                      double error_variance, std::size_t u) {
  if (u < 1) throw ConfigError("gen_errors: U must be >= 1");
  if (error_variance < 0) throw ConfigError("gen_errors: sigma_e^2 must be >= 0");
  const double sd = std::sqrt(error_variance / 2.0);
  ErrorBatch b;
  b.errors.reserve(u);
  for (std::size_t i = 0; i < u; ++i) {
    ComplexMat e(n, k);
    for (std::size_t kk = 0; kk < k; ++kk)
      for (std::size_t nn = 0; nn < n; ++nn) {
        e.re(nn, kk) = rng.normal(0.0, sd);
        e.im(nn, kk) = rng.normal(0.0, sd);
      }
    b.errors.push_back(std::move(e));
  }
  return b;
}

ComplexMat apply_error(const ComplexMat& h_est, const ComplexMat& e) {
  if (!h_est.re.same_shape(e.re)) throw ShapeError("apply_error: shape mismatch");
  return cm_add(h_est, e);
}

Dataset generate_dataset(const SystemConfig& cfg, std::uint64_t seed,
                         std::size_t n_train, std::size_t n_val,
                         std::size_t n_test) {
  cfg.validate();
  Dataset ds;
  ds.config = cfg;
  ds.seed = seed;
  ds.n_train = n_train;
  ds.n_val = n_val;
  ds.n_test = n_test;
  const std::size_t total = n_train + n_val + n_test;
  ds.samples.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    Rng rng(mix_seed(seed, kStreamChannel, i));
    ds.samples.push_back(gen_channel(rng, cfg));
  }
  return ds;
}

namespace {

constexpr char kMagic[6] = {'R', 'B', 'F', 'D', 'S', '\0'};
constexpr std::uint32_t kVersion = 1;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void put_bytes(std::FILE* f, const void* p, std::size_t n) {
  if (std::fwrite(p, 1, n, f) != n) throw IoError("dataset write failed");
}
void put_u32(std::FILE* f, std::uint32_t v) { put_bytes(f, &v, 4); }
void put_u64(std::FILE* f, std::uint64_t v) { put_bytes(f, &v, 8); }
void put_f64(std::FILE* f, double v) { put_bytes(f, &v, 8); }

void get_bytes(std::FILE* f, void* p, std::size_t n) {
  if (std::fread(p, 1, n, f) != n) throw IoError("dataset file truncated");
}
std::uint32_t get_u32(std::FILE* f) {
  std::uint32_t v;
  get_bytes(f, &v, 4);
  return v;
}
std::uint64_t get_u64(std::FILE* f) {
  std::uint64_t v;
  get_bytes(f, &v, 8);
  return v;
}
double get_f64(std::FILE* f) {
  double v;
  get_bytes(f, &v, 8);
  return v;
}

}  // namespace

// Fixed-layout binary: magic, version, config header, seed, split counts,
// then per sample optional gains followed by all-re / all-im 64-bit floats.
// Multi-byte fields are stored in the host's little-endian layout.
void dataset_save(const Dataset& ds, const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot open for writing: " + path);
  put_bytes(f.get(), kMagic, sizeof(kMagic));
  put_u32(f.get(), kVersion);
  const SystemConfig& c = ds.config;
  put_u64(f.get(), c.n);
  put_u64(f.get(), c.k);
  put_f64(f.get(), c.bandwidth_hz);
  put_f64(f.get(), c.noise_psd_dbm_per_hz);
  put_f64(f.get(), c.error_variance);
  put_f64(f.get(), c.outage_target);
  put_f64(f.get(), c.power_lo_dbm);
  put_f64(f.get(), c.power_hi_dbm);
  put_u32(f.get(), c.large_scale ? 1u : 0u);
  put_f64(f.get(), c.large_scale ? c.large_scale->d_min_km : 0.0);
  put_f64(f.get(), c.large_scale ? c.large_scale->d_max_km : 0.0);
  put_u64(f.get(), ds.seed);
  put_u64(f.get(), ds.n_train);
  put_u64(f.get(), ds.n_val);
  put_u64(f.get(), ds.n_test);
  for (const ChannelSample& s : ds.samples) {
    if (c.large_scale) {
      if (s.gain_linear.size() != c.k)
        throw IoError("dataset_save: sample missing large-scale gains");
      for (double g : s.gain_linear) put_f64(f.get(), g);
    }
    put_bytes(f.get(), s.h_est.re.data(), s.h_est.re.size() * 8);
    put_bytes(f.get(), s.h_est.im.data(), s.h_est.im.size() * 8);
  }
}

Dataset dataset_load(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open dataset: " + path);
  char magic[6];
  get_bytes(f.get(), magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("not a dataset file (bad magic): " + path);
  const std::uint32_t ver = get_u32(f.get());
  if (ver != kVersion)
    throw IoError("unsupported dataset version " + std::to_string(ver) +
                  " (expected " + std::to_string(kVersion) + ")");
  Dataset ds;
  SystemConfig& c = ds.config;
  c.n = get_u64(f.get());
  c.k = get_u64(f.get());
  c.bandwidth_hz = get_f64(f.get());
  c.noise_psd_dbm_per_hz = get_f64(f.get());
  c.error_variance = get_f64(f.get());
  c.outage_target = get_f64(f.get());
  c.power_lo_dbm = get_f64(f.get());
  c.power_hi_dbm = get_f64(f.get());
  const bool has_ls = get_u32(f.get()) != 0;
  const double dmin = get_f64(f.get());
  const double dmax = get_f64(f.get());
  if (has_ls) c.large_scale = LargeScaleConfig{dmin, dmax};
  ds.seed = get_u64(f.get());
  ds.n_train = get_u64(f.get());
  ds.n_val = get_u64(f.get());
  ds.n_test = get_u64(f.get());
  c.validate();
  const std::size_t total = ds.n_train + ds.n_val + ds.n_test;
  ds.samples.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    ChannelSample s;
    if (has_ls) {
      s.gain_linear.resize(c.k);
      for (double& g : s.gain_linear) g = get_f64(f.get());
    }
    s.h_est = ComplexMat(c.n, c.k);
    get_bytes(f.get(), s.h_est.re.data(), s.h_est.re.size() * 8);
    get_bytes(f.get(), s.h_est.im.data(), s.h_est.im.size() * 8);
    s.h_est.re.assert_finite("dataset sample " + std::to_string(i));
    s.h_est.im.assert_finite("dataset sample " + std::to_string(i));
    ds.samples.push_back(std::move(s));
  }
  // Must be at end of file.
  char extra;
  if (std::fread(&extra, 1, 1, f.get()) == 1)
    throw IoError("dataset file has trailing bytes: " + path);
  return ds;
}

}  // namespace rbf
