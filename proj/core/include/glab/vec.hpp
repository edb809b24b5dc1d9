#pragma once

#include <cstddef>
#include <vector>

#include "glab/errors.hpp"

namespace glab {

using Vec = std::vector<double>;

// Directions with norm below kZeroDirectionGuard * sqrt(d) are treated as zero.
inline constexpr double kZeroDirectionGuard = 1e-12;

double dot(const Vec& a, const Vec& b);
double norm(const Vec& v);
bool all_finite(const Vec& v);

Vec add(const Vec& a, const Vec& b);
Vec sub(const Vec& a, const Vec& b);
Vec scaled(const Vec& v, double s);
// y += a * x
void axpy(double a, const Vec& x, Vec& y);

struct Projection {
  Vec parallel;
  Vec orthogonal;
  double coefficient = 0.0;  // <v,d> / <d,d>
};

// Split v into its component along d and the remainder orthogonal to d.
// Throws ZeroDirectionError when d falls under the zero-direction guard.
Projection project(const Vec& v, const Vec& d);

}  // namespace glab
