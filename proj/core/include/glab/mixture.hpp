#pragma once

#include <map>
#include <string>
#include <vector>

#include "glab/condition.hpp"
#include "glab/vec.hpp"

namespace glab {

struct MixtureComponent {
  double weight = 0.0;
  Vec mean;
  Vec variance;  // diagonal covariance entries
};

// Class-labeled Gaussian mixture with diagonal covariances. token_map sends
// each vocabulary token to the component indices it selects; a condition
// selects the union over its non-empty tokens, and the full mixture when
// unconditional.
struct GaussianMixtureModel {
  std::vector<MixtureComponent> components;
  std::map<int, std::vector<int>> token_map;

  std::size_t dimension() const;
  void validate() const;  // throws ConfigError

  // Sorted, deduplicated component indices for a condition. Unknown tokens
  // throw ConfigError.
  std::vector<int> selected_components(const Condition& c) const;

  static GaussianMixtureModel from_json_text(const std::string& text);
  static GaussianMixtureModel load(const std::string& path);
  std::string to_json_text() const;
  void save(const std::string& path) const;
};

// log p(x | selected) for the mixture diffused to a given cumulative alpha:
// component k contributes N(x; sqrt(abar)*mu_k, abar*var_k + (1-abar)).
// abar = 1 recovers the data-level density. Weights are renormalized over
// the selected set.
double diffused_log_density(const GaussianMixtureModel& gmm, const Vec& x,
                            double alpha_bar, const std::vector<int>& selected);

// Gradient of diffused_log_density with respect to x.
Vec diffused_score(const GaussianMixtureModel& gmm, const Vec& x,
                   double alpha_bar, const std::vector<int>& selected);

// log p(selected-class set | x) at the data level. Computed through the
// complement's log-density so it stays accurate near saturation; exactly 0
// when the selection covers the whole mixture.
double class_log_posterior(const GaussianMixtureModel& gmm, const Vec& x,
                           const std::vector<int>& selected);

// Deterministic toy mixture: `vocab` tokens with mean directions on a ring
// in the first two coordinates, two mirrored components per token.
GaussianMixtureModel make_default_mixture(std::size_t dimension, int vocab = 8,
                                          double radius = 4.0,
                                          double pair_offset = 1.0);

}  // namespace glab
