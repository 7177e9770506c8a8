#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "margin_audit/dataset.hpp"
#include "margin_audit/model.hpp"
#include "margin_audit/norm.hpp"

namespace margin_audit {

class AttackError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// On success `adversarial` is classified differently from the source and
// lies inside the feature bounds; `norm` is ‖adversarial - x‖_p.
struct AttackResult {
  bool success = false;
  std::vector<double> adversarial;
  double norm = std::numeric_limits<double>::infinity();
  std::size_t queries = 0;
  std::size_t iterations = 0;
};

struct PgdConfig {
  double epsilon = 0.0;
  Norm norm = Norm::Linf;
  std::size_t steps = 20;
  double step_size = 0.0;  // 0 selects 2.5·ε/steps
  std::size_t restarts = 1;
  std::uint64_t seed = 0;

  double effective_step_size() const;
};

// Untargeted PGD on the margin loss max_{j≠label} f^j - f^label, random start
// inside the ball, projection onto ball ∩ bounds after every step. Returns the
// first point whose prediction differs from predict(x). Failure is not a
// robustness certificate.
AttackResult pgd(const Classifier& classifier, std::span<const double> x, std::size_t label,
                 const std::vector<FeatureBounds>& bounds, const PgdConfig& config);

struct MarginSearchConfig {
  Norm norm = Norm::Linf;
  std::size_t max_iterations = 50;
  double tolerance = 1e-4;  // bisection tolerance in input units
  std::size_t restarts = 1;
  std::size_t pgd_steps = 40;
  double search_bound = 0.0;  // 0 selects half the feature-box diameter
  double overshoot = 1.02;

  void validate() const;
  double effective_search_bound(const std::vector<FeatureBounds>& bounds) const;
};

// Closest-adversary estimate: iterated linearized projection onto the nearest
// of the K-1 class boundaries (overshoot 1.02), PGD at the search bound as a
// fallback, exact bisection on the segment from x, then projection of x onto
// the boundary linearized at the current boundary point, repeated while it
// shortens the perturbation. Restarts begin from random points near x and the
// best result over all restarts is kept.
//
// On success the returned point is adversarial and the point one tolerance
// step back along the segment towards x is not. Failure means nothing was
// found within the search bound.
AttackResult minimal_norm_adversarial(const Classifier& classifier, std::span<const double> x,
                                      const std::vector<FeatureBounds>& bounds,
                                      const MarginSearchConfig& config, std::uint64_t seed = 0);

using DecisionFunction = std::function<std::size_t(std::span<const double>)>;

struct OracleResult {
  double distance = std::numeric_limits<double>::infinity();
  // Worst-case over-approximation from the direction grid spacing.
  double error_bound = 0.0;
  std::vector<double> boundary_point;
};

// Brute-force input margin for n ≤ 3: rings of geometrically growing radius
// are probed over a dense direction set until one flips the decision, then
// every flipping direction is bisected. Points outside the bounds are skipped.
OracleResult grid_margin_oracle(const DecisionFunction& decide, std::span<const double> x,
                                const std::vector<FeatureBounds>& bounds, Norm norm,
                                std::size_t resolution = 64, double max_radius = 0.0);
OracleResult grid_margin_oracle(const Classifier& classifier, std::span<const double> x,
                                const std::vector<FeatureBounds>& bounds, Norm norm,
                                std::size_t resolution = 64, double max_radius = 0.0);

struct RobustAccuracyResult {
  double robust_accuracy = 0.0;
  double clean_accuracy = 0.0;
  // true when the sample is misclassified or the attack succeeded
  std::vector<bool> vulnerable;
};

// Fraction of samples classified correctly and not attackable at ε. Each
// sample's attack seed is mix_seed(config.seed, index) so results do not
// depend on the thread count.
RobustAccuracyResult robust_accuracy(const Classifier& classifier, const Dataset& dataset,
                                     const PgdConfig& config, std::size_t threads = 1);

}  // namespace margin_audit
