#pragma once

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "glab/calibration.hpp"
#include "glab/winrate.hpp"

namespace glab {

struct MethodConfig {
  std::string label;
  GuidanceSpec spec;
};

struct MetricConfig {
  std::string name;
  bool external = false;
  std::string command;  // external only
  bool higher_is_better = true;
};

struct RunConfig {
  int T = 50;
  double beta_min = 0.002;
  double beta_max = 0.4;
  std::string mixture_path;
  std::size_t dimension = 2;
  double base_omega = 5.5;
  std::vector<MethodConfig> methods;
  std::vector<MetricConfig> metrics;
  int prompts = 100;
  int condition_length = 4;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  std::vector<double> sweep_g;     // TDG sweep grid, optional
  std::vector<double> sweep_beta;

  static RunConfig from_json_text(const std::string& text);
  static RunConfig load(const std::string& path);

  // Canonical serialization: fixed key set, sorted keys, round-trip floats.
  // Identical configs hash identically regardless of input formatting.
  std::string canonical_json() const;
  std::string config_hash() const;  // fnv64 hex of canonical_json()

  // Structural validation plus referenced-file checks (mixture file must
  // exist, parse, and match `dimension`). Throws ConfigError.
  void validate() const;
};

// Per-condition detail kept alongside the aggregate rates.
struct ConditionRecord {
  double omega_e = 0.0;
  std::vector<std::pair<int, double>> omega_e_series;  // (t, omega_e_t)
  // scores[metric_index] = {star, cfg, ecfg}
  std::vector<std::array<double, 3>> scores;
};

struct MethodEvaluation {
  std::string label;
  GuidanceSpec spec;
  double omega_e = 0.0;  // mean of per-condition calibrated scales
  std::vector<ComparisonTriple> triples;
  std::vector<ConditionRecord> records;
  std::vector<WinRateEntry> rates;  // one per metric
};

struct ExperimentResult {
  std::vector<Condition> conditions;
  std::vector<MethodEvaluation> methods;
};

// Deterministic prompt set: `prompts` conditions of `condition_length`
// distinct tokens drawn from the mixture vocabulary.
std::vector<Condition> draw_conditions(const RunConfig& cfg,
                                       const GaussianMixtureModel& gmm);

// For every method and condition: run the method at a per-condition seed,
// calibrate its trajectory, replay CFG at the working scale and at the
// calibrated scale under the same seed, then score and fold winning rates.
// Identical output for any worker count.
ExperimentResult run_experiment(const RunConfig& cfg, int workers = 1);

struct SweepPoint {
  double g = 0.0;
  double beta = 0.0;
  double omega_e = 0.0;
  std::vector<WinRateEntry> rates;
};

// Re-runs the experiment's first TDG method over the (g, beta) grid.
std::vector<SweepPoint> run_sweep(const RunConfig& cfg, int workers = 1);

void parallel_for(int n, int workers, const std::function<void(int)>& body);

std::string report_csv(const ExperimentResult& result);
std::string report_json(const ExperimentResult& result, const RunConfig& cfg);
std::string sweep_csv(const std::vector<SweepPoint>& points,
                      const std::vector<MetricConfig>& metrics);

}  // namespace glab
