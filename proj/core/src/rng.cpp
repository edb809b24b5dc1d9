#include "glab/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace glab {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + stream * 0x9e3779b97f4a7c15ull + 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

std::uint64_t Rng::next_u64() {
  has_spare_ = false;
  return engine_();
}

double Rng::uniform() {
  has_spare_ = false;
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
  std::uint64_t i = static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  return i < n ? i : n - 1;
}

double Rng::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; u1 is bumped off zero so the log stays finite.
  double u1 = uniform();
  double u2 = uniform();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

Vec Rng::gaussian_vec(std::size_t dim) {
  Vec out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = gaussian();
  return out;
}

Rng Rng::substream(std::uint64_t stream) const {
  return Rng(mix_seed(seed_, stream));
}

}  // namespace glab
