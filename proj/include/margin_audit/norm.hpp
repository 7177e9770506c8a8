#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "margin_audit/dataset.hpp"

namespace margin_audit {

enum class Norm { Linf, L2 };

std::string_view norm_name(Norm p);
Norm parse_norm(std::string_view name);

double norm_of(std::span<const double> v, Norm p);
// ‖v‖_q with q the dual exponent of p (ℓ1 for ℓ∞, ℓ2 for ℓ2).
double dual_norm_of(std::span<const double> v, Norm p);
double distance(std::span<const double> a, std::span<const double> b, Norm p);

// Scales or clips `delta` so that ‖delta‖_p ≤ radius.
void project_into_ball(std::span<double> delta, double radius, Norm p);
void clip_to_bounds(std::span<double> x, const std::vector<FeatureBounds>& bounds);
bool within_bounds(std::span<const double> x, const std::vector<FeatureBounds>& bounds);

// Unit-ℓp direction of steepest ascent for a linear function with gradient g:
// sign(g) for ℓ∞, g/‖g‖₂ for ℓ2. Zero when g = 0.
std::vector<double> steepest_direction(std::span<const double> g, Norm p);

}  // namespace margin_audit
