#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace pseudocam {

// Seeded random stream. The engine is std::mt19937_64, whose output sequence
// is fixed by the standard; uniform and normal draws are computed here rather
// than through <random> distributions, whose algorithms vary between standard
// libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller; the second variate is cached.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Uniform integer on [0, n), rejection sampled. n must be positive.
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

// Sub-seed for a named purpose: FNV-1a over the label, mixed with the root
// through splitmix64.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label);
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

}  // namespace pseudocam
