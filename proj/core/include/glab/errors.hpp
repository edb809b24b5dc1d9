#pragma once

#include <stdexcept>
#include <string>

namespace glab {

// Two vectors that must share a dimension do not.
struct DimensionMismatchError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Projection direction shorter than the zero-direction guard.
struct ZeroDirectionError : std::domain_error {
  using std::domain_error::domain_error;
};

// recover_noise denominator below the degeneracy guard.
struct DegenerateTransitionError : std::domain_error {
  using std::domain_error::domain_error;
};

// Guidance direction eps_c - eps_u too short to decompose against.
struct ZeroGuidanceDirectionError : std::domain_error {
  using std::domain_error::domain_error;
};

// Trajectory fails a structural or consistency check.
struct TrajectoryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad run configuration, mixture file, or method parameters.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Metric produced a non-finite value or an external scorer misbehaved.
struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace glab
