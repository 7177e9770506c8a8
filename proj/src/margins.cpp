#include "margin_audit/margins.hpp"

#include <algorithm>
#include <cmath>

#include "margin_audit/parallel.hpp"
#include "margin_audit/rng.hpp"

namespace margin_audit {

namespace {

void check_logits(std::span<const double> logits) {
  if (logits.size() < 2) throw MarginError("margins need at least two classes");
  for (double v : logits) {
    if (!std::isfinite(v)) throw MarginError("non-finite logit");
  }
}

std::vector<double> row_difference(const LinearHead& head, std::size_t i, std::size_t j) {
  const auto m = head.weights.shape[1];
  std::vector<double> d(m);
  for (std::size_t t = 0; t < m; ++t) d[t] = head.weights.at(i, t) - head.weights.at(j, t);
  return d;
}

}  // namespace

double logit_margin(std::span<const double> logits) {
  check_logits(logits);
  const auto i = predict_from_logits(logits);
  double second = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (j != i) second = std::max(second, logits[j]);
  }
  return logits[i] - second;
}

double feature_margin(std::span<const double> logits, const LinearHead& head, Norm p) {
  check_logits(logits);
  if (logits.size() != head.num_classes()) throw MarginError("logit count differs from head size");
  const auto i = predict_from_logits(logits);
  double best = kNoMargin;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (j == i) continue;
    const double gap = logits[i] - logits[j];
    const double w = dual_norm_of(row_difference(head, i, j), p);
    if (w == 0.0) {
      if (gap != 0.0) {
        throw MarginError("degenerate head: classes " + std::to_string(i) + " and " +
                          std::to_string(j) + " have identical weights but different logits");
      }
      return 0.0;
    }
    best = std::min(best, gap / w);
  }
  return best;
}

std::vector<double> classifier_pairwise_distances(const LinearHead& head, Norm p) {
  const auto k = head.num_classes();
  if (k < 2) throw MarginError("head needs at least two classes");
  std::vector<double> out;
  out.reserve(k * (k - 1) / 2);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) out.push_back(dual_norm_of(row_difference(head, i, j), p));
  }
  return out;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw MarginError("quantile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0.0) return values[lo];
  return values[lo] + frac * (values[hi] - values[lo]);
}

EquidistanceStats equidistance_stats(const std::vector<double>& distances) {
  if (distances.empty()) throw MarginError("equidistance statistics of an empty set");
  EquidistanceStats s;
  s.min = *std::min_element(distances.begin(), distances.end());
  s.max = *std::max_element(distances.begin(), distances.end());
  s.q1 = quantile(distances, 0.25);
  s.median = quantile(distances, 0.5);
  s.q3 = quantile(distances, 0.75);
  s.max_over_min = s.min == 0.0 ? kNoMargin : s.max / s.min;
  return s;
}

double feature_distance(const Classifier& classifier, std::span<const double> x,
                        std::span<const double> x_adv, Norm p) {
  return distance(classifier.features(x), classifier.features(x_adv), p);
}

MarginRecord make_record(const Classifier& classifier, std::size_t id, std::span<const double> x,
                         std::size_t label, const AttackResult& attack, Norm p) {
  MarginRecord r;
  r.id = id;
  r.label = label;
  const auto z = classifier.features(x);
  const auto logits = classifier.head_logits(z);
  r.pred = predict_from_logits(logits);
  r.correct = r.pred == label;
  r.d_out = logit_margin(logits);
  r.d_feat = feature_margin(logits, classifier.head(), p);
  r.adv_found = attack.success;
  if (attack.success) {
    r.d_in_hat = attack.norm;
    r.feat_dist = distance(z, classifier.features(attack.adversarial), p);
  }
  return r;
}

std::vector<MarginRecord> estimate_margins(const Classifier& classifier, const Dataset& dataset,
                                           const MarginSearchConfig& config, std::uint64_t seed,
                                           std::size_t threads,
                                           std::vector<std::vector<double>>* adversaries) {
  config.validate();
  const auto n = dataset.size();
  std::vector<MarginRecord> records(n);
  if (adversaries) adversaries->assign(n, {});
  parallel_for(n, threads, [&](std::size_t i) {
    const auto x = dataset.input(i);
    const auto attack =
        minimal_norm_adversarial(classifier, x, dataset.bounds, config, mix_seed(seed, i));
    records[i] = make_record(classifier, i, x, dataset.labels[i], attack, config.norm);
    if (adversaries && attack.success) (*adversaries)[i] = attack.adversarial;
  });
  return records;
}

}  // namespace margin_audit
