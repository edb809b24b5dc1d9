#pragma once

#include <cstdint>
#include <random>

#include "glab/vec.hpp"

namespace glab {

// splitmix64 step, used to derive substream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// Seeded generator with platform-stable output. The 64-bit Mersenne engine
// sequence is fixed by the standard, and normal draws go through our own
// Box-Muller so no implementation-defined distribution code is involved.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  double uniform();                            // [0, 1), 53 bits
  std::uint64_t uniform_index(std::uint64_t n);  // [0, n)
  double gaussian();
  Vec gaussian_vec(std::size_t dim);

  // Independent stream derived from this generator's original seed.
  // Does not disturb or depend on the current draw position.
  Rng substream(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace glab
