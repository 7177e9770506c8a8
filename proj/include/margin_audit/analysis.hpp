#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "margin_audit/detection.hpp"
#include "margin_audit/kendall.hpp"
#include "margin_audit/margins.hpp"

namespace margin_audit {

// 1 where d_in_hat ≤ ε (non-robust); the +inf sentinel is always negative.
std::vector<char> label_nonrobust(const std::vector<MarginRecord>& records, double epsilon);

std::vector<double> column_d_in(const std::vector<MarginRecord>& records);
std::vector<double> column_d_out(const std::vector<MarginRecord>& records);
std::vector<double> column_d_feat(const std::vector<MarginRecord>& records);

struct ProfileBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double mean = 0.0;
  double stderr_ = 0.0;  // sample sd / sqrt(count); 0 below two points
  bool empty = true;
};

// Equal-width bins over [min x, max x]; the last bin is closed on the right.
// Non-finite x values are skipped.
std::vector<ProfileBin> binned_profile(std::span<const double> x, std::span<const double> y,
                                       std::size_t n_bins);

enum class Population { All, CorrectOnly };

struct ConsistencyReport {
  KendallResult kendall;
  std::vector<ProfileBin> profile;
  std::vector<std::pair<std::size_t, double>> per_class_tau;
  Population population = Population::All;

  nlohmann::json to_json() const;
};

// τ between d_in_hat and `score` (d_out unless given), with a binned profile
// of the score against d_in_hat.
ConsistencyReport consistency_report(const std::vector<MarginRecord>& records, std::size_t n_bins,
                                     Population population = Population::All,
                                     std::span<const double> score = {});

struct EpsilonDetection {
  double epsilon = 0.0;
  double positive_fraction = 0.0;
  std::optional<DetectionReport> report;  // absent when one class is empty
};

std::vector<EpsilonDetection> auroc_vs_epsilon(const std::vector<MarginRecord>& records,
                                               const std::vector<double>& epsilons,
                                               std::span<const double> score = {});
nlohmann::json to_json(const std::vector<EpsilonDetection>& curve);

struct SeparationStep {
  double epsilon = 0.0;
  bool separable = false;
  std::optional<double> lambda;  // max d_out over the non-robust set when it is nonempty
};

struct SeparationVerdict {
  std::vector<SeparationStep> steps;
  bool consistent = false;
  // (x1, x2) with d_out(x1) ≤ d_out(x2) and d_in(x1) > d_in(x2), chosen with
  // the widest d_in gap; separation fails for d_in(x2) ≤ ε < d_in(x1).
  std::optional<std::pair<std::size_t, std::size_t>> witness;

  nlohmann::json to_json() const;
};

// Decides per ε whether some λ gives {d_in ≤ ε} = {d_out ≤ λ} on the sample.
SeparationVerdict separation_check(std::span<const double> d_in, std::span<const double> d_out,
                                   const std::vector<double>& epsilons);

struct BoxStats {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
};
BoxStats box_stats(std::vector<double> values);

struct ClassConsistency {
  std::size_t label = 0;
  std::size_t count = 0;
  bool excluded = false;  // fewer than two samples
  BoxStats d_in;          // over finite d_in_hat only
  BoxStats d_out;
  std::optional<double> tau;
};

struct BiasReport {
  std::vector<ClassConsistency> classes;
  double global_tau = 0.0;

  nlohmann::json to_json() const;
};

BiasReport per_class_consistency(const std::vector<MarginRecord>& records);

struct RobustnessEstimate {
  double estimate = 0.0;
  double lambda = 0.0;
  double alpha = 0.0;
  double subset_estimate = 0.0;
  double subset_attack_ra = 0.0;

  nlohmann::json to_json() const;
};

// α grid {0.80, 0.81, ..., 0.99}.
std::vector<double> default_alpha_grid();

// Sample-efficient robust accuracy: only `subset` (indices into `records`) is
// assumed attacked. λ_α is the d_out value reaching TPR α on the subset's
// non-robust samples; the α whose subset estimate is closest to the subset's
// attack-based robust accuracy is applied to the full set.
RobustnessEstimate estimate_robust_accuracy(const std::vector<MarginRecord>& records,
                                            const std::vector<std::size_t>& subset, double epsilon,
                                            const std::vector<double>& alphas = default_alpha_grid());

struct AdversarialAudit {
  std::size_t count = 0;
  double p99_d_out = 0.0;
  double lambda = 0.0;
  double flagged_fraction = 0.0;  // adversaries with d_out < λ

  nlohmann::json to_json() const;
};

AdversarialAudit adversarial_margin_audit(const Classifier& classifier,
                                          const std::vector<std::vector<double>>& sources,
                                          const std::vector<std::vector<double>>& adversaries,
                                          double lambda);

}  // namespace margin_audit
