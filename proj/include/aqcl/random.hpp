#pragma once

#include <cstdint>
#include <random>

namespace aqcl {

using Rng = std::mt19937_64;

// Independent streams derived from one run seed. Each consumer of randomness
// in the trainer gets its own stream so enabling one code path never shifts
// the draws seen by another.
enum class Stream : std::uint64_t {
  Init = 1,
  Shuffle = 2,
  Dropout = 3,
  Augment = 4,
  Codebook = 5,
  Generator = 6,
};

inline Rng make_rng(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

}  // namespace aqcl
