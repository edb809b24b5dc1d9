#pragma once

#include <functional>
#include <memory>
#include <string>

#include "glab/mixture.hpp"
#include "glab/schedule.hpp"

namespace glab {

// A scalar judgment of a sample under a condition. Scores must be
// deterministic; orientation says which direction is better.
struct Metric {
  std::string name;
  bool higher_is_better = true;
  std::function<double(const Vec& x, const Condition& c)> score;
};

// Exact log-density of the sample under the conditional mixture.
Metric metric_cond_loglik(std::shared_ptr<const GaussianMixtureModel> gmm,
                          const NoiseSchedule& sched);

// Log class posterior of the condition's component set given the sample.
// Rewards being deep inside the class region regardless of likelihood.
Metric metric_alignment(std::shared_ptr<const GaussianMixtureModel> gmm);

// Long-running child process scored over a line protocol: each request is
// one JSON object {"condition": [...], "sample": [...]} on stdin, each reply
// one JSON object {"score": ...} on stdout. Thread-safe; requests are
// serialized.
class ExternalScorer {
 public:
  explicit ExternalScorer(std::string command);
  ~ExternalScorer();
  ExternalScorer(const ExternalScorer&) = delete;
  ExternalScorer& operator=(const ExternalScorer&) = delete;

  double score(const Vec& sample, const Condition& c);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

Metric metric_external(const std::string& name, const std::string& command,
                       bool higher_is_better);

}  // namespace glab
