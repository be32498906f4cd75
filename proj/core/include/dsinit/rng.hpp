#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace dsinit {

/// Seeded generator with platform-independent draws.
///
/// Only the raw 64-bit output of std::mt19937_64 is used; every derived
/// distribution is computed here so that the same seed yields bit-identical
/// streams with any standard library.
///
/// normal() uses the Box–Muller transform. Each pair of calls consumes two
/// uniforms (u1 first, then u2): the first call returns r·cos(2πu2) and
/// caches r·sin(2πu2), which the second call returns.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on {0, ..., n-1}; rejection sampling, no modulo bias.
  std::size_t index(std::size_t n);

  double normal();

  /// Fisher–Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

/// Derives an independent seed for a named sub-stream (SplitMix64 mixing).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace dsinit
