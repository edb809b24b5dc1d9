#pragma once

#include <cstdint>
#include <vector>

#include "glab/metrics.hpp"

namespace glab {

// One condition's matched-seed outputs: the method sample, the CFG baseline
// at the working scale, and the CFG replay at the calibrated scale.
struct ComparisonTriple {
  int condition_id = 0;
  Condition condition;
  std::uint64_t seed = 0;
  double omega_e = 0.0;
  Vec x_star;
  Vec x_cfg;
  Vec x_ecfg;
};

// 1 iff a scores strictly better than b under the metric's orientation;
// equal scores count as 0. Throws MetricError on non-finite scores.
int indicator(const Metric& m, const Vec& x_a, const Vec& x_b,
              const Condition& c);

struct WinRateEntry {
  std::string metric;
  double eta_cfg = 0.0;    // fraction of strict wins over the CFG baseline
  double eta_ecfg = 0.0;   // fraction of strict wins over the calibrated replay
  double delta_eta = 0.0;  // eta_cfg - eta_ecfg
  int n = 0;
  int ties_cfg = 0;
  int ties_ecfg = 0;
};

WinRateEntry winning_rates(const std::vector<ComparisonTriple>& triples,
                           const Metric& m);

}  // namespace glab
