#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace decoyforge {

/// Seeded random source with explicitly-coded distributions.
///
/// std::mt19937_64 output is pinned by the standard, but the standard
/// distribution objects are not; every transform here is spelled out so that
/// a given seed yields the same stream on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller; one spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform(); // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  /// Index drawn from a normalized discrete distribution given by cumulative
  /// weights (last entry == 1 up to rounding).
  std::size_t pick_cumulative(const std::vector<double>& cumulative) {
    const double u = uniform();
    std::size_t lo = 0, hi = cumulative.size();
    while (lo + 1 < hi) {
      const std::size_t mid = (lo + hi) / 2;
      if (u < cumulative[mid - 1]) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    return lo;
  }

  /// Derives an independent stream for a subcomponent.
  Rng fork(std::uint64_t salt) {
    return Rng(next_u64() ^ (salt * 0x9e3779b97f4a7c15ULL + 0x165667b19e3779f9ULL));
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

} // namespace decoyforge
