#pragma once

#include <cstdint>
#include <string_view>

namespace rslab {

/// Deterministic 64-bit splitmix generator. All randomness in the project
/// (parameter init, data synthesis, shuffles, splits) flows through this
/// generator so that a single seed reproduces a run exactly.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi], both ends inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next() % span);
  }

 private:
  std::uint64_t state_;
};

/// Stable sub-seed for a named purpose ("shuffle", "init:encoder.b0.W", ...).
/// FNV-1a over the purpose string mixed with the base seed through one
/// splitmix step; stable across platforms and runs.
std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose);

/// Same, additionally mixing an index (per-sample and per-epoch seeds).
std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose, std::uint64_t index);

}  // namespace rslab
