#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace units {

/// Portable 64-bit FNV-1a; used to derive RNG substreams from names.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Counter-based generator (splitmix64 over an incrementing counter).
/// Output is identical on every platform, which keeps generated datasets
/// and training runs reproducible bit-for-bit.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : counter_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (counter_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    // 128-bit multiply rejection-free mapping; bias is < 2^-64, irrelevant here.
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    cached_ = r * std::sin(theta);
    have_cached_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Independent substream derived from this generator's seed and a stream id.
  Rng fork(std::uint64_t stream) const {
    return Rng(counter_ ^ (0x5851f42d4c957f2dULL * (stream + 1)));
  }

 private:
  std::uint64_t counter_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace units
