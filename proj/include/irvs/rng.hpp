#pragma once

#include <cstdint>
#include <random>

namespace irvs {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent child seeds so that a
// stream's contents depend only on (parent seed, index), never on the order
// in which streams are created.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Rng child_rng(std::uint64_t seed, std::uint64_t index) { return Rng(mix_seed(seed, index)); }

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace irvs
