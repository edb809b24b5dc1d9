#pragma once

#include <cstddef>
#include <vector>

#include "glab/rng.hpp"

namespace glab {

// Token sequence over a finite class vocabulary. kEmptyToken marks a masked
// slot; a sequence of only empty tokens is the unconditional input.
struct Condition {
  static constexpr int kEmptyToken = -1;

  std::vector<int> tokens;

  Condition() = default;
  explicit Condition(std::vector<int> toks) : tokens(std::move(toks)) {}

  static Condition unconditional(std::size_t length = 1);
  bool is_unconditional() const;
  std::size_t size() const { return tokens.size(); }

  bool operator==(const Condition&) const = default;
};

// Copy of c with round(ratio * n) positions replaced by the empty token,
// chosen uniformly without replacement.
Condition mask_condition(const Condition& c, double ratio, Rng& rng);

}  // namespace glab
