#include "margin_audit/norm.hpp"

#include <algorithm>
#include <cmath>

namespace margin_audit {

std::string_view norm_name(Norm p) { return p == Norm::Linf ? "linf" : "l2"; }

Norm parse_norm(std::string_view name) {
  if (name == "linf" || name == "inf" || name == "Linf") return Norm::Linf;
  if (name == "l2" || name == "2" || name == "L2") return Norm::L2;
  throw std::invalid_argument("unknown norm '" + std::string(name) + "' (expected linf or l2)");
}

double norm_of(std::span<const double> v, Norm p) {
  if (p == Norm::Linf) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
  }
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dual_norm_of(std::span<const double> v, Norm p) {
  if (p == Norm::Linf) {
    double s = 0.0;
    for (double x : v) s += std::abs(x);
    return s;
  }
  return norm_of(v, Norm::L2);
}

double distance(std::span<const double> a, std::span<const double> b, Norm p) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return norm_of(d, p);
}

void project_into_ball(std::span<double> delta, double radius, Norm p) {
  if (p == Norm::Linf) {
    for (auto& v : delta) v = std::clamp(v, -radius, radius);
    return;
  }
  const double n = norm_of(delta, Norm::L2);
  if (n > radius && n > 0.0) {
    const double s = radius / n;
    for (auto& v : delta) v *= s;
  }
}

void clip_to_bounds(std::span<double> x, const std::vector<FeatureBounds>& bounds) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], bounds[i].lo, bounds[i].hi);
}

bool within_bounds(std::span<const double> x, const std::vector<FeatureBounds>& bounds) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < bounds[i].lo || x[i] > bounds[i].hi) return false;
  }
  return true;
}

std::vector<double> steepest_direction(std::span<const double> g, Norm p) {
  std::vector<double> d(g.size(), 0.0);
  if (p == Norm::Linf) {
    for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
    return d;
  }
  const double n = norm_of(g, Norm::L2);
  if (n > 0.0) {
    for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] / n;
  }
  return d;
}

}  // namespace margin_audit
