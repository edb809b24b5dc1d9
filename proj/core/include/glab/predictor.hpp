#pragma once

#include <cstdint>
#include <vector>

#include "glab/mixture.hpp"
#include "glab/schedule.hpp"

namespace glab {

// Noise prediction contract eps(x, t, c). Implementations must be
// deterministic functions of their arguments and preserve the dimension.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual std::size_t dimension() const = 0;
  virtual Vec predict(const Vec& x, int t, const Condition& c,
                      const NoiseSchedule& sched) const = 0;
};

// Exact prediction for a known mixture: -sqrt(1 - abar_t) times the score of
// the conditional density diffused to abar_t.
class AnalyticPredictor : public NoisePredictor {
 public:
  explicit AnalyticPredictor(GaussianMixtureModel gmm);

  std::size_t dimension() const override { return gmm_.dimension(); }
  Vec predict(const Vec& x, int t, const Condition& c,
              const NoiseSchedule& sched) const override;

  // Same prediction over an explicit component subset.
  Vec predict_restricted(const Vec& x, int t, const std::vector<int>& selected,
                         const NoiseSchedule& sched) const;

  const GaussianMixtureModel& mixture() const { return gmm_; }

 private:
  GaussianMixtureModel gmm_;
};

struct PerturbationSpec {
  enum class Kind {
    OutputNoise,       // add seeded Gaussian noise of stddev `strength`
    ComponentDropout,  // drop components from the conditional restriction
    Unconditional,     // ignore the condition entirely
  };
  Kind kind = Kind::OutputNoise;
  double strength = 0.0;
  double keep_fraction = 1.0;
  std::uint64_t seed = 0;
};

// Degraded view of `base`. Holds a reference; the base predictor must
// outlive it. ComponentDropout requires an AnalyticPredictor base.
class PerturbedPredictor : public NoisePredictor {
 public:
  PerturbedPredictor(const NoisePredictor& base, PerturbationSpec spec);

  std::size_t dimension() const override { return base_.dimension(); }
  Vec predict(const Vec& x, int t, const Condition& c,
              const NoiseSchedule& sched) const override;

 private:
  const NoisePredictor& base_;
  const AnalyticPredictor* analytic_ = nullptr;
  PerturbationSpec spec_;
};

PerturbedPredictor perturbed_predictor(const NoisePredictor& base,
                                       const PerturbationSpec& spec);

}  // namespace glab
