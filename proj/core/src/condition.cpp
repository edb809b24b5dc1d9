#include "glab/condition.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <utility>

namespace glab {

Condition Condition::unconditional(std::size_t length) {
  Condition c;
  c.tokens.assign(length == 0 ? 1 : length, kEmptyToken);
  return c;
}

bool Condition::is_unconditional() const {
  for (int tok : tokens) {
    if (tok != kEmptyToken) return false;
  }
  return true;
}

Condition mask_condition(const Condition& c, double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) {
    throw std::invalid_argument("mask_condition: ratio must lie in [0, 1]");
  }
  const std::size_t n = c.tokens.size();
  if (n == 0) throw std::invalid_argument("mask_condition: empty condition");

  auto k = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(n)));
  if (k > n) k = n;

  // Partial Fisher-Yates: the first k entries of `order` are a uniform
  // k-subset of positions.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Condition out = c;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.uniform_index(n - i);
    std::swap(order[i], order[j]);
    out.tokens[order[i]] = Condition::kEmptyToken;
  }
  return out;
}

}  // namespace glab
