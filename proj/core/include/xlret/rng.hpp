// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace xlret {

// SplitMix64 finalizer. Used for seed derivation and counter-based dropout
// streams; stable across platforms and standard library implementations.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) noexcept {
  return splitmix64(seed ^ (v + 0x9e3779b97f4a7c15ull));
}

// Maps 64 random bits to a double in [0, 1).
constexpr double unit_double(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Deterministic random source. The distribution transforms are implemented
// here rather than with std::*_distribution so that streams are reproducible
// independent of the standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return unit_double(next_u64()); }

  // Box-Muller transform.
  double normal(double mean = 0.0, double stddev = 1.0);

  // Uniform in [0, n); rejection sampling keeps the draw unbiased.
  std::size_t uniform_index(std::size_t n);

  // Fisher-Yates.
  template <typename Container>
  void shuffle(Container& c) {
    if (c.size() < 2) return;
    for (std::size_t i = c.size() - 1; i > 0; --i) {
      std::size_t j = uniform_index(i + 1);
      using std::swap;
      swap(c[i], c[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace xlret
