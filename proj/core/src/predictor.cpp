#include "glab/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#include "glab/errors.hpp"

namespace glab {

namespace {

void check_predict_args(std::size_t dim, const Vec& x, int t,
                        const NoiseSchedule& sched) {
  if (t < 1 || t > sched.T) {
    throw std::out_of_range("predict: t=" + std::to_string(t) + " outside [1, " +
                            std::to_string(sched.T) + "]");
  }
  if (x.size() != dim) {
    throw DimensionMismatchError("predict: point dim " +
                                 std::to_string(x.size()) + " vs predictor dim " +
                                 std::to_string(dim));
  }
}

std::uint64_t hash_double(std::uint64_t h, double v) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &v, sizeof(bits));
  return mix_seed(h, bits);
}

}  // namespace

AnalyticPredictor::AnalyticPredictor(GaussianMixtureModel gmm)
    : gmm_(std::move(gmm)) {
  gmm_.validate();
}

Vec AnalyticPredictor::predict(const Vec& x, int t, const Condition& c,
                               const NoiseSchedule& sched) const {
  return predict_restricted(x, t, gmm_.selected_components(c), sched);
}

Vec AnalyticPredictor::predict_restricted(const Vec& x, int t,
                                          const std::vector<int>& selected,
                                          const NoiseSchedule& sched) const {
  check_predict_args(dimension(), x, t, sched);
  const double abar = sched.alpha_bar[t];
  Vec score = diffused_score(gmm_, x, abar, selected);
  const double coef = -std::sqrt(1.0 - abar);
  for (double& v : score) v *= coef;
  return score;
}

PerturbedPredictor::PerturbedPredictor(const NoisePredictor& base,
                                       PerturbationSpec spec)
    : base_(base), spec_(spec) {
  switch (spec_.kind) {
    case PerturbationSpec::Kind::OutputNoise:
      if (!(spec_.strength >= 0.0) || !std::isfinite(spec_.strength)) {
        throw ConfigError("perturbation: strength must be finite and >= 0");
      }
      break;
    case PerturbationSpec::Kind::ComponentDropout:
      if (!(spec_.keep_fraction > 0.0 && spec_.keep_fraction <= 1.0)) {
        throw ConfigError("perturbation: keep_fraction must lie in (0, 1]");
      }
      analytic_ = dynamic_cast<const AnalyticPredictor*>(&base);
      if (analytic_ == nullptr) {
        throw ConfigError(
            "perturbation: component dropout needs an analytic predictor base");
      }
      break;
    case PerturbationSpec::Kind::Unconditional:
      break;
    default:
      throw ConfigError("perturbation: unknown degradation kind");
  }
}

Vec PerturbedPredictor::predict(const Vec& x, int t, const Condition& c,
                                const NoiseSchedule& sched) const {
  switch (spec_.kind) {
    case PerturbationSpec::Kind::OutputNoise: {
      Vec eps = base_.predict(x, t, c, sched);
      if (spec_.strength == 0.0) return eps;
      // Noise is a pure function of (seed, t, x) so repeated evaluation at
      // the same point stays deterministic.
      std::uint64_t h = mix_seed(spec_.seed, static_cast<std::uint64_t>(t));
      for (double v : x) h = hash_double(h, v);
      Rng noise_rng(h);
      for (double& v : eps) v += spec_.strength * noise_rng.gaussian();
      return eps;
    }
    case PerturbationSpec::Kind::Unconditional:
      return base_.predict(x, t, Condition::unconditional(std::max<std::size_t>(
                                     c.size(), 1)),
                           sched);
    case PerturbationSpec::Kind::ComponentDropout: {
      std::vector<int> selected =
          analytic_->mixture().selected_components(c);
      const std::size_t n = selected.size();
      auto keep = static_cast<std::size_t>(
          std::ceil(spec_.keep_fraction * static_cast<double>(n)));
      keep = std::clamp<std::size_t>(keep, 1, n);
      if (keep < n) {
        // Stable per condition: the kept subset depends only on the seed and
        // the selected component set.
        std::uint64_t h = spec_.seed;
        for (int k : selected) {
          h = mix_seed(h, static_cast<std::uint64_t>(k) + 1);
        }
        Rng pick(h);
        for (std::size_t i = 0; i < keep; ++i) {
          const std::size_t j = i + pick.uniform_index(n - i);
          std::swap(selected[i], selected[j]);
        }
        selected.resize(keep);
        std::sort(selected.begin(), selected.end());
      }
      return analytic_->predict_restricted(x, t, selected, sched);
    }
  }
  throw ConfigError("perturbation: unknown degradation kind");
}

PerturbedPredictor perturbed_predictor(const NoisePredictor& base,
                                       const PerturbationSpec& spec) {
  return PerturbedPredictor(base, spec);
}

}  // namespace glab
