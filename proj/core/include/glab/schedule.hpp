#pragma once

#include "glab/rng.hpp"
#include "glab/vec.hpp"

namespace glab {

// Discrete variance schedule, indexed by timestep t in [0, T]. beta[0] and
// alpha[0] are unused padding so beta[t] is the step-t value; alpha_bar[0] is
// exactly 1 and alpha_bar[t] = alpha_bar[t-1] * alpha[t] as computed.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
};

struct LatentState {
  Vec x;
  int t = 0;
};

// recover_noise refuses transitions whose denominator is below this.
inline constexpr double kDegenerateTransitionGuard = 1e-14;

// Linear beta ramp from beta_min to beta_max over T steps.
NoiseSchedule make_schedule(int T, double beta_min, double beta_max);

// Ancestral reverse step with sigma_t = sqrt(beta_t); draws z from rng.
LatentState ddpm_step(const LatentState& state, const Vec& eps,
                      const NoiseSchedule& sched, Rng& rng);

// Deterministic reverse step (eta = 0):
//   x_{t-1} = sqrt(abar_{t-1}) * (x_t - sqrt(1-abar_t)*eps) / sqrt(abar_t)
//           + sqrt(1-abar_{t-1}) * eps
LatentState ddim_step(const LatentState& state, const Vec& eps,
                      const NoiseSchedule& sched);

// Exact algebraic inverse of ddim_step for the same eps; maps t to t+1.
LatentState ddim_invert_step(const LatentState& state, const Vec& eps,
                             const NoiseSchedule& sched);

// Noise implied by a deterministic transition x_t -> x_prev:
//   (sqrt(abar_t)*x_prev - sqrt(abar_{t-1})*x_t)
//   / (sqrt(abar_t*(1-abar_{t-1})) - sqrt(abar_{t-1}*(1-abar_t)))
Vec recover_noise(const Vec& x_t, const Vec& x_prev, int t,
                  const NoiseSchedule& sched);

}  // namespace glab
