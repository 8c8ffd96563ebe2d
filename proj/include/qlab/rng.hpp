#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include <random>

namespace qlab {

// Derives an independent stream seed from a run seed (splitmix64 finalizer).
// Different subsystems (init, data order, directions) use distinct stream ids
// so that changing one consumer never perturbs another.
uint64_t mix_seed(uint64_t seed, uint64_t stream);

// Deterministic sampling helpers over std::mt19937_64.
//
// The engine itself is pinned by the standard, but std::*_distribution is not,
// so every transformation from raw engine output to a sample lives here.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  // Uniform double in [0, 1), 53-bit resolution.
  double uniform();

  // Standard normal via Box-Muller; one spare value is cached.
  double normal();

  // Uniform integer in [0, n); n must be positive.
  uint64_t below(uint64_t n);

  // Fisher-Yates shuffle driven by below().
  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
      size_t j = static_cast<size_t>(below(static_cast<uint64_t>(i) + 1));
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace qlab
