#pragma once

#include <string>
#include <vector>

#include "glab/guidance.hpp"

namespace glab {

// Largest admissible ratio between the update norm and the guidance
// direction norm. Past this the two predictions agree to within the noise
// floor of the update and the recovered scale is meaningless; such steps
// are skipped instead of averaged.
inline constexpr double kMaxScaleRatio = 1e6;

// Directions smaller than this fraction of the prediction magnitude are
// dominated by floating-point noise in the predictions themselves and are
// skipped as well.
inline constexpr double kDirectionNoiseFloor = 1e-8;

// One committed step split into the component along the guidance direction
// eps_c - eps_u and the remainder orthogonal to it. omega_e is always the
// absolute projection coefficient; the signed coefficient is kept alongside.
struct StepDecomposition {
  int t = 0;
  Vec eps_parallel;
  Vec eps_orth;
  double coefficient = 0.0;
  double omega_e = 0.0;
};

struct SkippedStep {
  int t = 0;
  std::string reason;
};

struct CalibrationResult {
  std::vector<StepDecomposition> per_step;  // trajectory order (t descending)
  std::vector<SkippedStep> skipped;
  double omega_e_mean = 0.0;  // mean over decomposed steps, 0 when none

  std::string to_json_text() const;
  std::string series_csv() const;  // t, omega_e, coefficient, orth_norm
};

StepDecomposition decompose_step(const Vec& eps_star, const Vec& eps_u,
                                 const Vec& eps_c, int t = 0);

// Recover the effective noise of every committed transition, decompose it
// against the guidance direction at the recorded entry state, and average
// the per-step effective scales. Steps whose guidance direction falls under
// the zero guard are reported as skipped, not folded into the mean.
// `verify_predictions` re-evaluates the predictor at each entry state and
// rejects recorded predictions that disagree (guards against corrupted
// trajectory files).
CalibrationResult calibrate(const Trajectory& traj,
                            const NoisePredictor& predictor,
                            const Condition& c, const NoiseSchedule& sched,
                            bool verify_predictions = false);

// CFG run at the calibrated scale; matched seeds come from passing an Rng
// seeded identically to the original run.
SampleResult replay_ecfg(double omega_e, const NoisePredictor& predictor,
                         const Condition& c, const NoiseSchedule& sched,
                         Rng& rng);

}  // namespace glab
