#include "margin_audit/detection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace margin_audit {

ScoreMetrics score_metrics(std::span<const double> scores, std::span<const char> labels) {
  if (scores.size() != labels.size()) throw AnalysisError("scores and labels differ in length");
  ScoreMetrics m;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) throw AnalysisError("NaN detection score");
    (labels[i] ? m.positives : m.negatives) += 1;
  }
  if (m.positives == 0) throw AnalysisError("AUROC/AUPR/FPR@95 undefined: no positive samples");
  if (m.negatives == 0) throw AnalysisError("AUROC/FPR@95 undefined: no negative samples");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  const double p_total = static_cast<double>(m.positives);
  const double n_total = static_cast<double>(m.negatives);
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  double wins = 0.0;  // positive-over-negative pairs, ties counted 1/2
  double ap = 0.0;
  bool have_95 = false;
  for (std::size_t start = 0; start < order.size();) {
    std::size_t end = start;
    std::uint64_t gp = 0;
    std::uint64_t gn = 0;
    while (end < order.size() && scores[order[end]] == scores[order[start]]) {
      (labels[order[end]] ? gp : gn) += 1;
      ++end;
    }
    // Negatives in this group are outscored by every positive seen before it.
    wins += static_cast<double>(gn) * static_cast<double>(tp) +
            0.5 * static_cast<double>(gn) * static_cast<double>(gp);
    tp += gp;
    fp += gn;
    if (gp > 0) {
      ap += (static_cast<double>(gp) / p_total) *
            (static_cast<double>(tp) / static_cast<double>(tp + fp));
    }
    if (!have_95 && tp * 100 >= static_cast<std::uint64_t>(m.positives) * 95) {
      have_95 = true;
      m.fpr_at_95 = static_cast<double>(fp) / n_total;
      m.threshold_at_95 = scores[order[start]];
    }
    start = end;
  }
  m.auroc = wins / (p_total * n_total);
  m.aupr = ap;
  return m;
}

DetectionReport detection_metrics(std::span<const double> d_out, std::span<const char> nonrobust,
                                  double epsilon) {
  std::vector<double> scores(d_out.size());
  for (std::size_t i = 0; i < d_out.size(); ++i) scores[i] = -d_out[i];
  const auto m = score_metrics(scores, nonrobust);
  DetectionReport r;
  r.epsilon = epsilon;
  r.positives = m.positives;
  r.negatives = m.negatives;
  r.auroc = m.auroc;
  r.aupr = m.aupr;
  r.fpr_at_95 = m.fpr_at_95;
  r.lambda = -m.threshold_at_95;
  return r;
}

nlohmann::json DetectionReport::to_json() const {
  return {{"epsilon", epsilon},     {"positives", positives}, {"negatives", negatives},
          {"auroc", auroc},         {"aupr", aupr},           {"fpr_at_95", fpr_at_95},
          {"lambda", lambda},       {"orientation", orientation}};
}

}  // namespace margin_audit
