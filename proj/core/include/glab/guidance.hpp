#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "glab/predictor.hpp"

namespace glab {

enum class GuidanceMethod { CFG, TDG, WeakPredictor, Zigzag, CFGpp };

const char* method_name(GuidanceMethod m);
std::optional<GuidanceMethod> method_from_name(std::string_view name);

struct GuidanceSpec {
  GuidanceMethod method = GuidanceMethod::CFG;
  double omega = 5.5;

  // TDG: overall gain g, direction-mixing beta, and the token mask ratio
  // that produces the weak condition.
  double tdg_g = 1.8;
  double tdg_beta = 2.6;
  double tdg_mask_ratio = 0.5;

  // WeakPredictor: extra push of s along eps_c - eps_w, with eps_w from a
  // degraded predictor.
  double weak_scale = 3.0;
  PerturbationSpec perturbation{};

  // Zigzag: per-step refinement cycles (denoise at omega, invert at
  // omega_inv). cycles defaults to T when unset.
  double omega_inv = 0.0;
  std::optional<int> zigzag_cycles;

  // CFGpp-style commit: denoise with the combine at renoise_scale, renoise
  // with the unconditional prediction.
  double renoise_scale = 0.4;

  void validate(int T) const;  // throws ConfigError
};

struct TrajectoryStep {
  int t = 0;
  Vec x_t;     // state entering the step
  Vec eps_u;   // predictor at (x_t, t, unconditional)
  Vec eps_c;   // predictor at (x_t, t, c)
  Vec x_prev;  // committed next state
};

struct Trajectory {
  GuidanceMethod method = GuidanceMethod::CFG;
  std::uint64_t seed = 0;
  double omega = 0.0;
  Condition condition;
  std::vector<TrajectoryStep> steps;  // t = T down to 1

  // Structural checks: step count and order, constant dimensions, and chain
  // continuity (each committed state equals the next step's entry state).
  // Throws TrajectoryError naming the offending step.
  void validate(const NoiseSchedule& sched) const;
};

// eps_u + omega * (eps_c - eps_u)
Vec cfg_combine(const Vec& eps_u, const Vec& eps_c, double omega);

// 0.5*(eps_u + eps_w)
//   + (omega*g*beta/(beta+1)) * (eps_c - eps_u)
//   + (omega*g/(beta+1)) * (eps_c - eps_w) * (|eps_c - eps_u| / |eps_c - eps_w|)
// The last term is dropped when |eps_c - eps_w| falls under the zero guard.
Vec tdg_combine(const Vec& eps_u, const Vec& eps_c, const Vec& eps_w,
                double omega, double g, double beta);

// cfg_combine(eps_u, eps_c, omega) + s * (eps_c - eps_w)
Vec weak_guidance_combine(const Vec& eps_u, const Vec& eps_c, const Vec& eps_w,
                          double omega, double s);

struct SampleResult {
  Vec sample;
  Trajectory trajectory;
};

// Run T reverse steps of the deterministic sampler from x_T ~ N(0, I),
// combining predictions per the method, and record the full trajectory.
// `weak_override`, when given, replaces the WeakPredictor method's internal
// degraded predictor.
SampleResult sample(const GuidanceSpec& spec, const NoisePredictor& predictor,
                    const Condition& c, const NoiseSchedule& sched, Rng& rng,
                    const NoisePredictor* weak_override = nullptr);

// JSON-lines trajectory files: a header object followed by one step record
// per line with fields t, x_t, eps_u, eps_c, x_prev.
void write_trajectory(const std::string& path, const Trajectory& traj);
Trajectory read_trajectory(const std::string& path);

}  // namespace glab
