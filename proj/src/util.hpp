#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mem {

// Error taxonomy. The C API and the CLI map these onto status/exit codes,
// so new error paths should reuse one of them instead of raw exceptions.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};
struct ContractError : std::logic_error {
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};
struct MismatchError : std::runtime_error {
  explicit MismatchError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace util {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a master seed, a purpose tag and an
// optional index. Every random decision in the pipeline goes through this so
// reruns with the same config are bit-identical.
inline uint64_t derive_seed(uint64_t master, uint64_t purpose, uint64_t index = 0) {
  return splitmix64(splitmix64(master ^ purpose) ^ (index * 0x9e3779b97f4a7c15ULL + 0x1234abcd));
}

// Purpose tags for derive_seed.
constexpr uint64_t kSeedInit = 0x494e4954;      // parameter init
constexpr uint64_t kSeedShuffle = 0x53485546;   // epoch shuffles
constexpr uint64_t kSeedMask = 0x4d41534b;      // mask sampling
constexpr uint64_t kSeedSynth = 0x53594e54;     // corpus synthesis
constexpr uint64_t kSeedSplit = 0x53504c54;     // dataset splits
constexpr uint64_t kSeedEval = 0x4556414c;      // inference-time masking
constexpr uint64_t kSeedBalance = 0x42414c43;   // class-balance subsampling

// Deterministic RNG facade. std's engine is portable; its distributions are
// not, so the transforms live here.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Unbiased integer in [0, n).
  uint64_t uniform_int(uint64_t n) {
    if (n == 0) throw ContractError("Rng::uniform_int: n must be positive");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; caches the second variate.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double two_pi = 6.283185307179586476925286766559;
    cached_ = r * std::sin(two_pi * u2);
    have_cached_ = true;
    return r * std::cos(two_pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

// FNV-1a over a byte string; used for config hashes.
inline uint64_t fnv1a64(const std::string& bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(uint64_t v);

// Percentile with linear interpolation between order statistics
// (rank = p/100 * (n-1)).
double percentile(std::vector<double> values, double p);

std::string format_double(double v);  // shortest round-trip decimal

}  // namespace util

namespace log {

enum class Level { kQuiet = 0, kWarn = 1, kInfo = 2 };

void set_level(Level level);
Level level();
void info(const std::string& msg);
void warn(const std::string& msg);

}  // namespace log

}  // namespace mem
