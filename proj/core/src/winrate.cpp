#include "glab/winrate.hpp"

#include <cmath>

#include "glab/errors.hpp"

namespace glab {

namespace {

double checked_score(const Metric& m, const Vec& x, const Condition& c) {
  const double s = m.score(x, c);
  if (!std::isfinite(s)) {
    throw MetricError("metric '" + m.name + "' produced a non-finite score");
  }
  return s;
}

int better(const Metric& m, double a, double b) {
  if (a == b) return 0;
  return (m.higher_is_better ? a > b : a < b) ? 1 : 0;
}

}  // namespace

int indicator(const Metric& m, const Vec& x_a, const Vec& x_b,
              const Condition& c) {
  return better(m, checked_score(m, x_a, c), checked_score(m, x_b, c));
}

WinRateEntry winning_rates(const std::vector<ComparisonTriple>& triples,
                           const Metric& m) {
  WinRateEntry e;
  e.metric = m.name;
  e.n = static_cast<int>(triples.size());
  if (triples.empty()) return e;
  int wins_cfg = 0, wins_ecfg = 0;
  for (const ComparisonTriple& tr : triples) {
    const double s_star = checked_score(m, tr.x_star, tr.condition);
    const double s_cfg = checked_score(m, tr.x_cfg, tr.condition);
    const double s_ecfg = checked_score(m, tr.x_ecfg, tr.condition);
    wins_cfg += better(m, s_star, s_cfg);
    wins_ecfg += better(m, s_star, s_ecfg);
    if (s_star == s_cfg) ++e.ties_cfg;
    if (s_star == s_ecfg) ++e.ties_ecfg;
  }
  e.eta_cfg = static_cast<double>(wins_cfg) / e.n;
  e.eta_ecfg = static_cast<double>(wins_ecfg) / e.n;
  e.delta_eta = e.eta_cfg - e.eta_ecfg;
  return e;
}

}  // namespace glab
