#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>

namespace retex {

// Deterministic random source.  The engine is std::mt19937_64 (its output
// sequence is fixed by the C++ standard) and the uniform and normal
// transforms are implemented here rather than with std::*_distribution, whose
// algorithms vary between standard libraries.  The full state round-trips
// through serialize()/deserialize() so streams can be checkpointed and
// resumed bit exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0,1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller.  One value per call, no cached mate, so
  // the draw count is predictable.
  double normal() {
    double u1 = 1.0 - uniform();  // (0,1], keeps the log finite
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Uniform integer in [0,n); n must be positive.
  std::size_t index(std::size_t n) {
    std::size_t i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return i < n ? i : n - 1;
  }

  // Fisher-Yates.
  template <typename It>
  void shuffle(It first, It last) {
    std::size_t n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = index(i);
      std::swap(first[i - 1], first[j]);
    }
  }

  std::string serialize() const;
  static Rng deserialize(const std::string& text);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

// Derives an independent stream seed (splitmix64 finalizer over seed and
// stream id), used to give every scene or draw site its own generator.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace retex
