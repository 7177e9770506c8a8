#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "margin_audit/attacks.hpp"
#include "margin_audit/dataset.hpp"
#include "margin_audit/model.hpp"
#include "margin_audit/norm.hpp"

namespace margin_audit {

class MarginError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kNoMargin = std::numeric_limits<double>::infinity();

// f^i - max_{j≠i} f^j with i the predicted class.
double logit_margin(std::span<const double> logits);

// min_{j≠i} (f^i - f^j) / ‖w_i - w_j‖_q with q dual to p: distance in feature
// space to the nearest pairwise decision hyperplane of the head.
double feature_margin(std::span<const double> logits, const LinearHead& head, Norm p);

// ‖w_i - w_j‖_q for all i < j, q dual to p, ordered (0,1), (0,2), ..., (K-2,K-1).
std::vector<double> classifier_pairwise_distances(const LinearHead& head, Norm p);

struct EquidistanceStats {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  double max_over_min = 0.0;  // +inf when some distance is 0
};

// Quantile at level q in [0,1] with linear interpolation between order statistics.
double quantile(std::vector<double> values, double q);
EquidistanceStats equidistance_stats(const std::vector<double>& distances);

double feature_distance(const Classifier& classifier, std::span<const double> x,
                        std::span<const double> x_adv, Norm p);

struct MarginRecord {
  std::size_t id = 0;
  std::size_t label = 0;
  std::size_t pred = 0;
  bool correct = false;
  double d_in_hat = kNoMargin;
  double d_out = 0.0;
  double d_feat = 0.0;
  double feat_dist = kNoMargin;
  bool adv_found = false;
};

// Builds the record for one sample; `attack` may be a failed result.
MarginRecord make_record(const Classifier& classifier, std::size_t id, std::span<const double> x,
                         std::size_t label, const AttackResult& attack, Norm p);

// Runs minimal_norm_adversarial on every sample with seed mix_seed(seed, i).
// Output is identical for any thread count. When `adversaries` is given it
// receives the adversarial point per sample (empty when none was found).
std::vector<MarginRecord> estimate_margins(const Classifier& classifier, const Dataset& dataset,
                                           const MarginSearchConfig& config, std::uint64_t seed,
                                           std::size_t threads = 1,
                                           std::vector<std::vector<double>>* adversaries = nullptr);

}  // namespace margin_audit
