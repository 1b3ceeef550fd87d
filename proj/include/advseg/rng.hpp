#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "advseg/core.hpp"

namespace advseg {

/// Deterministic 64-bit generator (SplitMix64, Steele et al.). Every random
/// draw in the project routes through this so runs are reproducible from a
/// single seed, independent of platform library implementations.
///
/// state' = state + 0x9E3779B97F4A7C15
/// z = state'; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9
/// z = (z ^ z>>27) * 0x94D049BB133111EB; output z ^ z>>31
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {}

  uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 mantissa bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). Multiply-shift mapping; n must be > 0.
  uint64_t below(uint64_t n) {
    return static_cast<uint64_t>((static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  int range(int lo, int hi_inclusive) {
    return lo + static_cast<int>(below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
  }

  /// Standard normal via Box-Muller on two uniform draws.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Independent substream derived from this seed and a purpose tag, so that
  /// e.g. batch sampling and weight init never share a draw sequence.
  Rng fork(std::string_view tag) const {
    uint64_t h = fnv1a64(tag.data(), tag.size());
    Rng mix(state_ ^ h);
    uint64_t s = mix.next();
    return Rng(s);
  }

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; }

 private:
  uint64_t state_;
};

}  // namespace advseg
