#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace gocn {

// Deterministic pseudo-random generator: xoshiro256** seeded through
// splitmix64. All sampling (uniform, normal, shuffles) is implemented
// here rather than with <random> distributions, so a given seed yields
// the same stream on every platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform double in [0, 1) with 53-bit resolution.
  double uniform();
  // Uniform double in [lo, hi).
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller; the spare draw is cached.
  double normal();
  // Uniform integer in [0, n), rejection-sampled (no modulo bias).
  std::size_t uniform_index(std::size_t n);

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = uniform_index(i + 1);
      std::swap(v[i], v[j]);
    }
  }

  // Derive an independent child stream. Children with distinct salts are
  // decorrelated from the parent and from each other.
  Rng fork(std::uint64_t salt) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t state_[4];
  std::uint64_t seed_;
  double spare_normal_ = 0.0;
  bool has_spare_normal_ = false;
};

}  // namespace gocn
