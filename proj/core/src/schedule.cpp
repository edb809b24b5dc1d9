#include "glab/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace glab {

namespace {

void check_step_range(int t, const NoiseSchedule& sched, const char* where) {
  if (t < 1 || t > sched.T) {
    throw std::out_of_range(std::string(where) + ": t=" + std::to_string(t) +
                            " outside [1, " + std::to_string(sched.T) + "]");
  }
}

void check_dim(const Vec& x, const Vec& eps, const char* where) {
  if (x.size() != eps.size()) {
    throw DimensionMismatchError(std::string(where) + ": state dim " +
                                 std::to_string(x.size()) + " vs eps dim " +
                                 std::to_string(eps.size()));
  }
}

}  // namespace

NoiseSchedule make_schedule(int T, double beta_min, double beta_max) {
  if (T < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
  if (!(beta_min > 0.0) || !(beta_max < 1.0) || beta_min > beta_max) {
    throw std::invalid_argument("make_schedule: need 0 < beta_min <= beta_max < 1");
  }
  NoiseSchedule s;
  s.T = T;
  s.beta.assign(T + 1, 0.0);
  s.alpha.assign(T + 1, 1.0);
  s.alpha_bar.assign(T + 1, 1.0);
  for (int t = 1; t <= T; ++t) {
    const double frac = T > 1 ? static_cast<double>(t - 1) / (T - 1) : 0.0;
    s.beta[t] = beta_min + (beta_max - beta_min) * frac;
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
  }
  return s;
}

LatentState ddpm_step(const LatentState& state, const Vec& eps,
                      const NoiseSchedule& sched, Rng& rng) {
  check_step_range(state.t, sched, "ddpm_step");
  check_dim(state.x, eps, "ddpm_step");
  const int t = state.t;
  const double beta = sched.beta[t];
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha[t]);
  const double eps_coef = beta / std::sqrt(1.0 - sched.alpha_bar[t]);
  const double sigma = std::sqrt(beta);

  LatentState out;
  out.t = t - 1;
  out.x.resize(state.x.size());
  for (std::size_t i = 0; i < state.x.size(); ++i) {
    const double mean = inv_sqrt_alpha * (state.x[i] - eps_coef * eps[i]);
    out.x[i] = mean + sigma * rng.gaussian();
  }
  return out;
}

LatentState ddim_step(const LatentState& state, const Vec& eps,
                      const NoiseSchedule& sched) {
  check_step_range(state.t, sched, "ddim_step");
  check_dim(state.x, eps, "ddim_step");
  const int t = state.t;
  const double abar = sched.alpha_bar[t];
  const double abar_prev = sched.alpha_bar[t - 1];
  const double x_coef = std::sqrt(abar_prev / abar);
  const double eps_coef =
      std::sqrt(1.0 - abar_prev) - x_coef * std::sqrt(1.0 - abar);

  LatentState out;
  out.t = t - 1;
  out.x.resize(state.x.size());
  for (std::size_t i = 0; i < state.x.size(); ++i) {
    out.x[i] = x_coef * state.x[i] + eps_coef * eps[i];
  }
  return out;
}

LatentState ddim_invert_step(const LatentState& state, const Vec& eps,
                             const NoiseSchedule& sched) {
  const int t_next = state.t + 1;
  if (state.t < 0 || t_next > sched.T) {
    throw std::out_of_range("ddim_invert_step: t=" + std::to_string(state.t) +
                            " cannot be inverted past T=" + std::to_string(sched.T));
  }
  check_dim(state.x, eps, "ddim_invert_step");
  const double abar = sched.alpha_bar[state.t];
  const double abar_next = sched.alpha_bar[t_next];
  const double x_coef = std::sqrt(abar_next / abar);
  const double eps_coef =
      std::sqrt(1.0 - abar_next) - x_coef * std::sqrt(1.0 - abar);

  LatentState out;
  out.t = t_next;
  out.x.resize(state.x.size());
  for (std::size_t i = 0; i < state.x.size(); ++i) {
    out.x[i] = x_coef * state.x[i] + eps_coef * eps[i];
  }
  return out;
}

Vec recover_noise(const Vec& x_t, const Vec& x_prev, int t,
                  const NoiseSchedule& sched) {
  check_step_range(t, sched, "recover_noise");
  check_dim(x_t, x_prev, "recover_noise");
  const double abar = sched.alpha_bar[t];
  const double abar_prev = sched.alpha_bar[t - 1];
  const double sq_abar = std::sqrt(abar);
  const double sq_abar_prev = std::sqrt(abar_prev);
  const double denom = std::sqrt(abar * (1.0 - abar_prev)) -
                       std::sqrt(abar_prev * (1.0 - abar));
  if (std::fabs(denom) < kDegenerateTransitionGuard) {
    throw DegenerateTransitionError(
        "recover_noise: transition at t=" + std::to_string(t) +
        " is degenerate (denominator " + std::to_string(denom) + ")");
  }
  Vec eps(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    eps[i] = (sq_abar * x_prev[i] - sq_abar_prev * x_t[i]) / denom;
  }
  return eps;
}

}  // namespace glab
