#include "glab/guidance.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "glab/errors.hpp"
#include "json.hpp"

namespace glab {

namespace {

void require_finite(const Vec& v, const char* where) {
  if (!all_finite(v)) {
    throw std::invalid_argument(std::string(where) + ": non-finite input");
  }
}

void require_same_dim(const Vec& a, const Vec& b, const char* where) {
  if (a.size() != b.size()) {
    throw DimensionMismatchError(std::string(where) + ": dimensions " +
                                 std::to_string(a.size()) + " vs " +
                                 std::to_string(b.size()));
  }
}

}  // namespace

const char* method_name(GuidanceMethod m) {
  switch (m) {
    case GuidanceMethod::CFG: return "cfg";
    case GuidanceMethod::TDG: return "tdg";
    case GuidanceMethod::WeakPredictor: return "weak";
    case GuidanceMethod::Zigzag: return "zigzag";
    case GuidanceMethod::CFGpp: return "cfgpp";
  }
  return "unknown";
}

std::optional<GuidanceMethod> method_from_name(std::string_view name) {
  if (name == "cfg") return GuidanceMethod::CFG;
  if (name == "tdg") return GuidanceMethod::TDG;
  if (name == "weak") return GuidanceMethod::WeakPredictor;
  if (name == "zigzag") return GuidanceMethod::Zigzag;
  if (name == "cfgpp") return GuidanceMethod::CFGpp;
  return std::nullopt;
}

void GuidanceSpec::validate(int T) const {
  if (!std::isfinite(omega)) throw ConfigError("guidance: omega must be finite");
  switch (method) {
    case GuidanceMethod::CFG:
      break;
    case GuidanceMethod::TDG:
      if (!(tdg_g > 0.0) || !std::isfinite(tdg_g)) {
        throw ConfigError("guidance: tdg g must be positive");
      }
      if (!(tdg_beta > 0.0) || !std::isfinite(tdg_beta)) {
        throw ConfigError("guidance: tdg beta must be positive");
      }
      if (!(tdg_mask_ratio >= 0.0 && tdg_mask_ratio <= 1.0)) {
        throw ConfigError("guidance: tdg mask ratio must lie in [0, 1]");
      }
      break;
    case GuidanceMethod::WeakPredictor:
      if (!std::isfinite(weak_scale)) {
        throw ConfigError("guidance: weak scale must be finite");
      }
      break;
    case GuidanceMethod::Zigzag: {
      if (!(omega_inv >= 0.0) || !std::isfinite(omega_inv)) {
        throw ConfigError("guidance: omega_inv must be finite and >= 0");
      }
      const int cycles = zigzag_cycles.value_or(T);
      if (cycles < 1 || cycles > T) {
        throw ConfigError("guidance: zigzag cycles must lie in [1, T]");
      }
      break;
    }
    case GuidanceMethod::CFGpp:
      if (!std::isfinite(renoise_scale)) {
        throw ConfigError("guidance: renoise scale must be finite");
      }
      break;
  }
}

void Trajectory::validate(const NoiseSchedule& sched) const {
  if (static_cast<int>(steps.size()) != sched.T) {
    throw TrajectoryError("trajectory has " + std::to_string(steps.size()) +
                          " steps, schedule expects " + std::to_string(sched.T));
  }
  std::size_t dim = 0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const TrajectoryStep& s = steps[i];
    const std::string tag = "trajectory step " + std::to_string(i) +
                            " (t=" + std::to_string(s.t) + ")";
    if (s.t != sched.T - static_cast<int>(i)) {
      throw TrajectoryError(tag + ": expected t=" +
                            std::to_string(sched.T - static_cast<int>(i)));
    }
    if (i == 0) dim = s.x_t.size();
    if (dim == 0) throw TrajectoryError(tag + ": empty state");
    // Recorded predictions are optional (calibration recomputes them), but
    // when present they must match the state dimension.
    if (s.x_t.size() != dim || s.x_prev.size() != dim ||
        (!s.eps_u.empty() && s.eps_u.size() != dim) ||
        (!s.eps_c.empty() && s.eps_c.size() != dim)) {
      throw TrajectoryError(tag + ": inconsistent dimensions");
    }
    if (i > 0 && steps[i - 1].x_prev != s.x_t) {
      throw TrajectoryError(tag + ": entry state does not match the previous "
                                  "step's committed state");
    }
  }
}

Vec cfg_combine(const Vec& eps_u, const Vec& eps_c, double omega) {
  require_same_dim(eps_u, eps_c, "cfg_combine");
  require_finite(eps_u, "cfg_combine");
  require_finite(eps_c, "cfg_combine");
  if (!std::isfinite(omega)) {
    throw std::invalid_argument("cfg_combine: omega must be finite");
  }
  Vec out(eps_u.size());
  for (std::size_t i = 0; i < eps_u.size(); ++i) {
    out[i] = eps_u[i] + omega * (eps_c[i] - eps_u[i]);
  }
  return out;
}

Vec tdg_combine(const Vec& eps_u, const Vec& eps_c, const Vec& eps_w,
                double omega, double g, double beta) {
  require_same_dim(eps_u, eps_c, "tdg_combine");
  require_same_dim(eps_u, eps_w, "tdg_combine");
  require_finite(eps_u, "tdg_combine");
  require_finite(eps_c, "tdg_combine");
  require_finite(eps_w, "tdg_combine");
  if (!std::isfinite(omega) || !std::isfinite(g) || !std::isfinite(beta) ||
      beta <= -1.0) {
    throw std::invalid_argument("tdg_combine: need finite omega, g, beta > -1");
  }
  const std::size_t d = eps_u.size();
  Vec delta_u = sub(eps_c, eps_u);
  Vec delta_w = sub(eps_c, eps_w);
  const double nu = norm(delta_u);
  const double nw = norm(delta_w);

  Vec out(d);
  for (std::size_t i = 0; i < d; ++i) {
    out[i] = 0.5 * (eps_u[i] + eps_w[i]);
  }
  axpy(omega * g * beta / (beta + 1.0), delta_u, out);
  // The norm-matched term degenerates when the weak direction vanishes.
  if (nw >= kZeroDirectionGuard) {
    axpy(omega * g / (beta + 1.0) * (nu / nw), delta_w, out);
  }
  return out;
}

Vec weak_guidance_combine(const Vec& eps_u, const Vec& eps_c, const Vec& eps_w,
                          double omega, double s) {
  require_same_dim(eps_u, eps_w, "weak_guidance_combine");
  if (!std::isfinite(s)) {
    throw std::invalid_argument("weak_guidance_combine: s must be finite");
  }
  require_finite(eps_w, "weak_guidance_combine");
  Vec out = cfg_combine(eps_u, eps_c, omega);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += s * (eps_c[i] - eps_w[i]);
  }
  return out;
}

SampleResult sample(const GuidanceSpec& spec, const NoisePredictor& predictor,
                    const Condition& c, const NoiseSchedule& sched, Rng& rng,
                    const NoisePredictor* weak_override) {
  spec.validate(sched.T);
  const std::size_t d = predictor.dimension();

  SampleResult res;
  res.trajectory.method = spec.method;
  res.trajectory.seed = rng.seed();
  res.trajectory.omega = spec.omega;
  res.trajectory.condition = c;
  res.trajectory.steps.reserve(static_cast<std::size_t>(sched.T));

  Vec x = rng.gaussian_vec(d);

  // Method-specific setup. The weak condition / degraded predictor are fixed
  // for the whole path.
  Condition weak_cond;
  if (spec.method == GuidanceMethod::TDG) {
    weak_cond = mask_condition(c, spec.tdg_mask_ratio, rng);
  }
  std::optional<PerturbedPredictor> weak_owned;
  const NoisePredictor* weak = weak_override;
  if (spec.method == GuidanceMethod::WeakPredictor && weak == nullptr) {
    weak_owned.emplace(predictor, spec.perturbation);
    weak = &*weak_owned;
  }

  const Condition uncond = Condition::unconditional(std::max<std::size_t>(c.size(), 1));
  const int cycles = spec.zigzag_cycles.value_or(sched.T);

  for (int t = sched.T; t >= 1; --t) {
    Vec eps_u = predictor.predict(x, t, uncond, sched);
    Vec eps_c = predictor.predict(x, t, c, sched);
    Vec x_prev;

    switch (spec.method) {
      case GuidanceMethod::CFG: {
        x_prev = ddim_step({x, t}, cfg_combine(eps_u, eps_c, spec.omega), sched).x;
        break;
      }
      case GuidanceMethod::TDG: {
        Vec eps_w = predictor.predict(x, t, weak_cond, sched);
        x_prev = ddim_step({x, t},
                           tdg_combine(eps_u, eps_c, eps_w, spec.omega,
                                       spec.tdg_g, spec.tdg_beta),
                           sched)
                     .x;
        break;
      }
      case GuidanceMethod::WeakPredictor: {
        Vec eps_w = weak->predict(x, t, c, sched);
        x_prev = ddim_step({x, t},
                           weak_guidance_combine(eps_u, eps_c, eps_w, spec.omega,
                                                 spec.weak_scale),
                           sched)
                     .x;
        break;
      }
      case GuidanceMethod::Zigzag: {
        // Each cycle denoises one step at omega and inverts it back at
        // omega_inv, reusing the cycle's predictions for the inversion so
        // equal scales cancel exactly. The final denoise at omega commits.
        Vec xz = x;
        for (int k = 0; k < cycles; ++k) {
          Vec zu = k == 0 ? eps_u : predictor.predict(xz, t, uncond, sched);
          Vec zc = k == 0 ? eps_c : predictor.predict(xz, t, c, sched);
          LatentState down =
              ddim_step({xz, t}, cfg_combine(zu, zc, spec.omega), sched);
          xz = ddim_invert_step(down, cfg_combine(zu, zc, spec.omega_inv), sched)
                   .x;
        }
        Vec fu = predictor.predict(xz, t, uncond, sched);
        Vec fc = predictor.predict(xz, t, c, sched);
        x_prev = ddim_step({xz, t}, cfg_combine(fu, fc, spec.omega), sched).x;
        break;
      }
      case GuidanceMethod::CFGpp: {
        // Denoise toward x0 with the low-scale combine, renoise with the
        // unconditional prediction.
        const double abar = sched.alpha_bar[t];
        const double abar_prev = sched.alpha_bar[t - 1];
        Vec mixed = cfg_combine(eps_u, eps_c, spec.renoise_scale);
        const double sq_abar = std::sqrt(abar);
        const double sq_prev = std::sqrt(abar_prev);
        const double sig_t = std::sqrt(1.0 - abar);
        const double sig_prev = std::sqrt(1.0 - abar_prev);
        x_prev.resize(d);
        for (std::size_t i = 0; i < d; ++i) {
          const double x0_hat = (x[i] - sig_t * mixed[i]) / sq_abar;
          x_prev[i] = sq_prev * x0_hat + sig_prev * eps_u[i];
        }
        break;
      }
    }

    res.trajectory.steps.push_back(
        {t, x, std::move(eps_u), std::move(eps_c), x_prev});
    x = std::move(x_prev);
  }

  res.sample = x;
  return res;
}

void write_trajectory(const std::string& path, const Trajectory& traj) {
  std::ofstream out(path);
  if (!out) throw TrajectoryError("cannot write trajectory file " + path);
  nlohmann::json header = {
      {"type", "trajectory"},
      {"method", method_name(traj.method)},
      {"seed", traj.seed},
      {"omega", traj.omega},
      {"condition", traj.condition.tokens},
      {"steps", traj.steps.size()},
      {"dimension", traj.steps.empty() ? 0 : traj.steps.front().x_t.size()},
  };
  out << header.dump() << "\n";
  for (const TrajectoryStep& s : traj.steps) {
    nlohmann::json line = {{"t", s.t},
                           {"x_t", s.x_t},
                           {"eps_u", s.eps_u},
                           {"eps_c", s.eps_c},
                           {"x_prev", s.x_prev}};
    out << line.dump() << "\n";
  }
}

Trajectory read_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TrajectoryError("cannot open trajectory file " + path);
  std::string line;
  std::size_t lineno = 0;
  Trajectory traj;
  bool have_header = false;
  std::size_t expected_steps = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw TrajectoryError(path + ":" + std::to_string(lineno) +
                            ": parse failure: " + e.what());
    }
    try {
      if (!have_header) {
        if (j.value("type", "") != "trajectory") {
          throw TrajectoryError(path + ": first line is not a trajectory header");
        }
        auto m = method_from_name(j.at("method").get<std::string>());
        if (!m) {
          throw TrajectoryError(path + ": unknown method in header");
        }
        traj.method = *m;
        traj.seed = j.at("seed").get<std::uint64_t>();
        traj.omega = j.at("omega").get<double>();
        traj.condition.tokens = j.at("condition").get<std::vector<int>>();
        expected_steps = j.at("steps").get<std::size_t>();
        have_header = true;
        continue;
      }
      TrajectoryStep s;
      s.t = j.at("t").get<int>();
      s.x_t = j.at("x_t").get<Vec>();
      s.eps_u = j.at("eps_u").get<Vec>();
      s.eps_c = j.at("eps_c").get<Vec>();
      s.x_prev = j.at("x_prev").get<Vec>();
      traj.steps.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw TrajectoryError(path + ":" + std::to_string(lineno) +
                            ": malformed record: " + e.what());
    }
  }
  if (!have_header) throw TrajectoryError(path + ": missing header line");
  if (traj.steps.size() != expected_steps) {
    throw TrajectoryError(path + ": header declares " +
                          std::to_string(expected_steps) + " steps, found " +
                          std::to_string(traj.steps.size()));
  }
  return traj;
}

}  // namespace glab
