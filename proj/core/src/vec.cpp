#include "glab/vec.hpp"

#include <cmath>
#include <string>

namespace glab {

namespace {
void check_same_dim(const Vec& a, const Vec& b, const char* where) {
  if (a.size() != b.size()) {
    throw DimensionMismatchError(std::string(where) + ": dimensions " +
                                 std::to_string(a.size()) + " vs " +
                                 std::to_string(b.size()));
  }
}
}  // namespace

double dot(const Vec& a, const Vec& b) {
  check_same_dim(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const Vec& v) { return std::sqrt(dot(v, v)); }

bool all_finite(const Vec& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Vec add(const Vec& a, const Vec& b) {
  check_same_dim(a, b, "add");
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Vec sub(const Vec& a, const Vec& b) {
  check_same_dim(a, b, "sub");
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

Vec scaled(const Vec& v, double s) {
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * s;
  return out;
}

void axpy(double a, const Vec& x, Vec& y) {
  check_same_dim(x, y, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

Projection project(const Vec& v, const Vec& d) {
  check_same_dim(v, d, "project");
  const double dd = dot(d, d);
  const double guard = kZeroDirectionGuard * std::sqrt(static_cast<double>(d.size()));
  if (std::sqrt(dd) < guard) {
    throw ZeroDirectionError("project: direction norm under zero guard");
  }
  Projection p;
  p.coefficient = dot(v, d) / dd;
  p.parallel = scaled(d, p.coefficient);
  p.orthogonal = sub(v, p.parallel);
  return p;
}

}  // namespace glab
