#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "margin_audit/kendall.hpp"

namespace margin_audit {

// Metrics for a score where larger means "more likely positive".
struct ScoreMetrics {
  std::size_t positives = 0;
  std::size_t negatives = 0;
  double auroc = 0.0;
  double aupr = 0.0;
  double fpr_at_95 = 0.0;
  double threshold_at_95 = 0.0;  // predicted positive iff score ≥ threshold
};

// AUROC by Mann-Whitney with ties counted 1/2, AUPR as average precision
// (step integration over distinct thresholds), FPR at the largest threshold
// whose TPR is at least 0.95.
ScoreMetrics score_metrics(std::span<const double> scores, std::span<const char> labels);

struct DetectionReport {
  double epsilon = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  double auroc = 0.0;
  double aupr = 0.0;
  double fpr_at_95 = 0.0;
  double lambda = 0.0;  // flag non-robust iff d_out ≤ lambda
  std::string orientation = "-d_out";

  nlohmann::json to_json() const;
};

// Positive class = non-robust, scored by -d_out (or -column for another margin-like score).
DetectionReport detection_metrics(std::span<const double> d_out, std::span<const char> nonrobust,
                                  double epsilon = 0.0);

}  // namespace margin_audit
