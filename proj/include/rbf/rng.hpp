#ifndef RBF_RNG_HPP
#define RBF_RNG_HPP

#include <cmath>
#include <cstdint>

namespace rbf {

// splitmix64 finalizer (Steele, Lea, Flood 2014).  Used both as the stream
// mixer and, iterated over a counter, as the generator itself.  A fully
// pinned generator keeps datasets and training runs bit-reproducible across
// standard libraries, which std::normal_distribution does not guarantee.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives an independent stream seed from a base seed and up to three
// coordinates (e.g. epoch/step/sample).  Feeding each word through the
// finalizer decorrelates neighbouring coordinates.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a = 0,
                              std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t s = base;
  splitmix64(s);
  s ^= 0x632be59bd9b4e019ULL + a;
  splitmix64(s);
  s ^= 0x9e6c63d0876a9a47ULL + b;
  splitmix64(s);
  s ^= 0xc2b2ae3d27d4eb4fULL + c;
  splitmix64(s);
  return s;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the spare draw is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();  // guard log(0)
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace rbf

#endif  // RBF_RNG_HPP
