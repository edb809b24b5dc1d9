#include "glab/calibration.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "glab/errors.hpp"
#include "json.hpp"

namespace glab {

namespace {

double rel_gap(const Vec& a, const Vec& b) {
  double diff = 0.0, scale = 1.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::fabs(a[i] - b[i]));
    scale = std::max(scale, std::fabs(b[i]));
  }
  return diff / scale;
}

}  // namespace

StepDecomposition decompose_step(const Vec& eps_star, const Vec& eps_u,
                                 const Vec& eps_c, int t) {
  if (eps_star.size() != eps_u.size() || eps_u.size() != eps_c.size()) {
    throw DimensionMismatchError("decompose_step: input dimensions disagree");
  }
  Vec delta = sub(eps_c, eps_u);
  const double guard =
      kZeroDirectionGuard * std::sqrt(static_cast<double>(delta.size()));
  if (norm(delta) < guard) {
    throw ZeroGuidanceDirectionError(
        "decompose_step: guidance direction under zero guard at t=" +
        std::to_string(t));
  }
  // The direction is a difference of two predictions, each carrying absolute
  // rounding noise around 1e-16 of the quantities entering them. Below this
  // floor the difference is mostly that noise and any ratio against it is
  // meaningless.
  const double floor_scale =
      kDirectionNoiseFloor * std::max({1.0, norm(eps_u), norm(eps_c)});
  if (norm(delta) < floor_scale) {
    throw ZeroGuidanceDirectionError(
        "decompose_step: guidance direction under the prediction noise floor "
        "at t=" +
        std::to_string(t));
  }
  Vec update = sub(eps_star, eps_u);
  // When the conditional and unconditional predictions agree to one part in
  // kMaxScaleRatio of the update, the scale ratio is pure noise; the step is
  // reported as skipped rather than folded into the mean as a huge outlier.
  if (norm(delta) * kMaxScaleRatio < norm(update)) {
    throw ZeroGuidanceDirectionError(
        "decompose_step: guidance direction ill-conditioned against the "
        "update at t=" +
        std::to_string(t));
  }
  Projection p = project(update, delta);
  StepDecomposition out;
  out.t = t;
  out.eps_parallel = std::move(p.parallel);
  out.eps_orth = std::move(p.orthogonal);
  out.coefficient = p.coefficient;
  out.omega_e = std::fabs(p.coefficient);
  return out;
}

CalibrationResult calibrate(const Trajectory& traj,
                            const NoisePredictor& predictor,
                            const Condition& c, const NoiseSchedule& sched,
                            bool verify_predictions) {
  traj.validate(sched);
  CalibrationResult out;
  double sum = 0.0;
  int count = 0;
  for (const TrajectoryStep& step : traj.steps) {
    Vec eps_star = recover_noise(step.x_t, step.x_prev, step.t, sched);
    // The recovered noise must reproduce the committed transition; anything
    // else means the record is corrupt.
    LatentState redo = ddim_step({step.x_t, step.t}, eps_star, sched);
    if (!all_finite(eps_star) || rel_gap(redo.x, step.x_prev) > 1e-6) {
      throw TrajectoryError(
          "calibrate: step t=" + std::to_string(step.t) +
          " fails the transition consistency check");
    }

    Vec eps_u = step.eps_u;
    Vec eps_c = step.eps_c;
    const bool recorded = !eps_u.empty() && !eps_c.empty();
    if (!recorded || verify_predictions) {
      const Condition uncond =
          Condition::unconditional(std::max<std::size_t>(c.size(), 1));
      Vec ref_u = predictor.predict(step.x_t, step.t, uncond, sched);
      Vec ref_c = predictor.predict(step.x_t, step.t, c, sched);
      if (recorded &&
          (rel_gap(eps_u, ref_u) > 1e-9 || rel_gap(eps_c, ref_c) > 1e-9)) {
        throw TrajectoryError(
            "calibrate: step t=" + std::to_string(step.t) +
            " has recorded predictions inconsistent with the predictor");
      }
      if (!recorded) {
        eps_u = std::move(ref_u);
        eps_c = std::move(ref_c);
      }
    }

    try {
      StepDecomposition dec = decompose_step(eps_star, eps_u, eps_c, step.t);
      sum += dec.omega_e;
      ++count;
      out.per_step.push_back(std::move(dec));
    } catch (const ZeroGuidanceDirectionError& e) {
      out.skipped.push_back({step.t, e.what()});
    }
  }
  out.omega_e_mean = count > 0 ? sum / count : 0.0;
  return out;
}

SampleResult replay_ecfg(double omega_e, const NoisePredictor& predictor,
                         const Condition& c, const NoiseSchedule& sched,
                         Rng& rng) {
  if (!std::isfinite(omega_e)) {
    throw std::invalid_argument("replay_ecfg: omega_e must be finite");
  }
  GuidanceSpec spec;
  spec.method = GuidanceMethod::CFG;
  spec.omega = omega_e;
  return sample(spec, predictor, c, sched, rng);
}

std::string CalibrationResult::to_json_text() const {
  nlohmann::json j;
  j["omega_e_mean"] = omega_e_mean;
  j["per_step"] = nlohmann::json::array();
  for (const StepDecomposition& d : per_step) {
    j["per_step"].push_back({{"t", d.t},
                             {"omega_e", d.omega_e},
                             {"coefficient", d.coefficient},
                             {"parallel_norm", norm(d.eps_parallel)},
                             {"orth_norm", norm(d.eps_orth)}});
  }
  j["skipped"] = nlohmann::json::array();
  for (const SkippedStep& s : skipped) {
    j["skipped"].push_back({{"t", s.t}, {"reason", s.reason}});
  }
  return j.dump(2) + "\n";
}

std::string CalibrationResult::series_csv() const {
  std::ostringstream out;
  out << "t,omega_e,coefficient,orth_norm\n";
  char buf[128];
  for (const StepDecomposition& d : per_step) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", d.t, d.omega_e,
                  d.coefficient, norm(d.eps_orth));
    out << buf;
  }
  return out.str();
}

}  // namespace glab
