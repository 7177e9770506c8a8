#include "margin_audit/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace margin_audit {

std::vector<char> label_nonrobust(const std::vector<MarginRecord>& records, double epsilon) {
  std::vector<char> out(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) out[i] = records[i].d_in_hat <= epsilon;
  return out;
}

std::vector<double> column_d_in(const std::vector<MarginRecord>& records) {
  std::vector<double> v(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) v[i] = records[i].d_in_hat;
  return v;
}

std::vector<double> column_d_out(const std::vector<MarginRecord>& records) {
  std::vector<double> v(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) v[i] = records[i].d_out;
  return v;
}

std::vector<double> column_d_feat(const std::vector<MarginRecord>& records) {
  std::vector<double> v(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) v[i] = records[i].d_feat;
  return v;
}

std::vector<ProfileBin> binned_profile(std::span<const double> x, std::span<const double> y,
                                       std::size_t n_bins) {
  if (x.size() != y.size()) throw AnalysisError("binned profile: x and y differ in length");
  if (n_bins < 2) throw AnalysisError("binned profile needs at least two bins");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  std::size_t n = 0;
  for (double v : x) {
    if (!std::isfinite(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    ++n;
  }
  if (n < n_bins) throw AnalysisError("binned profile needs at least as many points as bins");
  if (!(hi > lo)) throw AnalysisError("binned profile: x range is degenerate");

  std::vector<ProfileBin> bins(n_bins);
  const double width = (hi - lo) / static_cast<double>(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    bins[b].lo = lo + width * static_cast<double>(b);
    bins[b].hi = b + 1 == n_bins ? hi : lo + width * static_cast<double>(b + 1);
  }
  std::vector<std::vector<double>> members(n_bins);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) continue;
    auto b = static_cast<std::size_t>((x[i] - lo) / width);
    b = std::min(b, n_bins - 1);
    members[b].push_back(y[i]);
  }
  for (std::size_t b = 0; b < n_bins; ++b) {
    const auto& m = members[b];
    auto& bin = bins[b];
    bin.count = m.size();
    bin.empty = m.empty();
    if (m.empty()) continue;
    bin.mean = std::accumulate(m.begin(), m.end(), 0.0) / static_cast<double>(m.size());
    if (m.size() >= 2) {
      double ss = 0.0;
      for (double v : m) ss += (v - bin.mean) * (v - bin.mean);
      bin.stderr_ = std::sqrt(ss / static_cast<double>(m.size() - 1)) /
                    std::sqrt(static_cast<double>(m.size()));
    }
  }
  return bins;
}

namespace {

nlohmann::json profile_json(const std::vector<ProfileBin>& bins) {
  auto j = nlohmann::json::array();
  for (const auto& b : bins) {
    j.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"mean", b.mean},
                 {"stderr", b.stderr_}, {"empty", b.empty}});
  }
  return j;
}

nlohmann::json box_json(const BoxStats& s) {
  return {{"min", s.min}, {"q1", s.q1}, {"median", s.median}, {"q3", s.q3}, {"max", s.max}};
}

std::vector<double> score_or_d_out(const std::vector<MarginRecord>& records,
                                   std::span<const double> score) {
  if (score.empty()) return column_d_out(records);
  if (score.size() != records.size()) throw AnalysisError("score column length differs from records");
  return {score.begin(), score.end()};
}

}  // namespace

ConsistencyReport consistency_report(const std::vector<MarginRecord>& records, std::size_t n_bins,
                                     Population population, std::span<const double> score) {
  const auto s = score_or_d_out(records, score);
  std::vector<double> din;
  std::vector<double> sc;
  std::map<std::size_t, std::pair<std::vector<double>, std::vector<double>>> by_class;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (population == Population::CorrectOnly && !records[i].correct) continue;
    din.push_back(records[i].d_in_hat);
    sc.push_back(s[i]);
    auto& c = by_class[records[i].label];
    c.first.push_back(records[i].d_in_hat);
    c.second.push_back(s[i]);
  }
  ConsistencyReport r;
  r.population = population;
  r.kendall = kendall(din, sc);
  r.profile = binned_profile(din, sc, n_bins);
  for (const auto& [label, cols] : by_class) {
    try {
      r.per_class_tau.emplace_back(label, kendall_tau(cols.first, cols.second));
    } catch (const AnalysisError&) {
      // classes with fewer than two usable samples or constant columns carry no τ
    }
  }
  return r;
}

nlohmann::json ConsistencyReport::to_json() const {
  nlohmann::json j;
  j["population"] = population == Population::All ? "all" : "correct";
  j["kendall_tau_b"] = kendall.tau_b;
  j["kendall_tau_a"] = kendall.tau_a;
  j["n_used"] = kendall.n_used;
  j["n_excluded"] = kendall.n_excluded;
  j["n_pairs"] = kendall.pairs;
  j["profile"] = profile_json(profile);
  auto& pc = j["per_class_tau"] = nlohmann::json::array();
  for (const auto& [label, tau] : per_class_tau) pc.push_back({{"label", label}, {"tau", tau}});
  return j;
}

std::vector<EpsilonDetection> auroc_vs_epsilon(const std::vector<MarginRecord>& records,
                                               const std::vector<double>& epsilons,
                                               std::span<const double> score) {
  const auto s = score_or_d_out(records, score);
  std::vector<EpsilonDetection> out;
  for (double eps : epsilons) {
    EpsilonDetection e;
    e.epsilon = eps;
    const auto labels = label_nonrobust(records, eps);
    const auto pos = std::count(labels.begin(), labels.end(), 1);
    e.positive_fraction = records.empty() ? 0.0 : static_cast<double>(pos) / static_cast<double>(records.size());
    if (pos > 0 && static_cast<std::size_t>(pos) < records.size()) e.report = detection_metrics(s, labels, eps);
    out.push_back(std::move(e));
  }
  return out;
}

nlohmann::json to_json(const std::vector<EpsilonDetection>& curve) {
  auto j = nlohmann::json::array();
  for (const auto& e : curve) {
    nlohmann::json r{{"epsilon", e.epsilon}, {"positive_fraction", e.positive_fraction}};
    if (e.report) r["detection"] = e.report->to_json();
    else r["flag"] = "single class at this epsilon";
    j.push_back(std::move(r));
  }
  return j;
}

SeparationVerdict separation_check(std::span<const double> d_in, std::span<const double> d_out,
                                   const std::vector<double>& epsilons) {
  if (d_in.size() != d_out.size()) throw AnalysisError("separation check: lengths differ");
  const auto n = d_in.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(d_in[i]) || !std::isfinite(d_out[i])) {
      throw AnalysisError("separation check needs finite margins");
    }
  }
  SeparationVerdict v;
  std::vector<std::size_t> by_in(n);
  std::iota(by_in.begin(), by_in.end(), 0);
  std::sort(by_in.begin(), by_in.end(), [&](std::size_t a, std::size_t b) { return d_in[a] < d_in[b]; });
  std::vector<double> prefix_max(n + 1, -std::numeric_limits<double>::infinity());
  std::vector<double> suffix_min(n + 1, std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < n; ++k) prefix_max[k + 1] = std::max(prefix_max[k], d_out[by_in[k]]);
  for (std::size_t k = n; k-- > 0;) suffix_min[k] = std::min(suffix_min[k + 1], d_out[by_in[k]]);

  bool all_pass = true;
  for (double eps : epsilons) {
    const auto k = static_cast<std::size_t>(
        std::upper_bound(by_in.begin(), by_in.end(), eps,
                         [&](double e, std::size_t i) { return e < d_in[i]; }) -
        by_in.begin());
    SeparationStep s;
    s.epsilon = eps;
    s.separable = prefix_max[k] < suffix_min[k];
    if (k > 0) s.lambda = prefix_max[k];
    all_pass = all_pass && s.separable;
    v.steps.push_back(s);
  }

  std::vector<std::size_t> by_out(n);
  std::iota(by_out.begin(), by_out.end(), 0);
  std::sort(by_out.begin(), by_out.end(), [&](std::size_t a, std::size_t b) {
    if (d_out[a] != d_out[b]) return d_out[a] < d_out[b];
    return d_in[a] > d_in[b];
  });
  double best_gap = 0.0;
  std::size_t arg = n;
  for (std::size_t k = 0; k < n; ++k) {
    const auto j = by_out[k];
    if (arg < n && d_in[arg] - d_in[j] > best_gap) {
      best_gap = d_in[arg] - d_in[j];
      v.witness = std::make_pair(arg, j);
    }
    if (arg == n || d_in[j] > d_in[arg]) arg = j;
  }
  v.consistent = all_pass && !v.witness;
  return v;
}

nlohmann::json SeparationVerdict::to_json() const {
  nlohmann::json j;
  j["consistent"] = consistent;
  auto& steps_j = j["steps"] = nlohmann::json::array();
  for (const auto& s : steps) {
    nlohmann::json r{{"epsilon", s.epsilon}, {"separable", s.separable}};
    if (s.lambda) r["lambda"] = *s.lambda;
    steps_j.push_back(std::move(r));
  }
  if (witness) j["witness"] = {witness->first, witness->second};
  return j;
}

BoxStats box_stats(std::vector<double> values) {
  if (values.empty()) return {};
  BoxStats s;
  std::sort(values.begin(), values.end());
  s.min = values.front();
  s.max = values.back();
  s.q1 = quantile(values, 0.25);
  s.median = quantile(values, 0.5);
  s.q3 = quantile(values, 0.75);
  return s;
}

BiasReport per_class_consistency(const std::vector<MarginRecord>& records) {
  std::map<std::size_t, std::vector<const MarginRecord*>> by_class;
  for (const auto& r : records) by_class[r.label].push_back(&r);
  if (by_class.size() < 2) throw AnalysisError("per-class consistency needs at least two classes");
  BiasReport report;
  report.global_tau = kendall_tau(column_d_in(records), column_d_out(records));
  for (const auto& [label, members] : by_class) {
    ClassConsistency c;
    c.label = label;
    c.count = members.size();
    c.excluded = members.size() < 2;
    std::vector<double> din;
    std::vector<double> dout;
    std::vector<double> finite_din;
    for (const auto* r : members) {
      din.push_back(r->d_in_hat);
      dout.push_back(r->d_out);
      if (std::isfinite(r->d_in_hat)) finite_din.push_back(r->d_in_hat);
    }
    c.d_in = box_stats(finite_din);
    c.d_out = box_stats(dout);
    if (!c.excluded) {
      try {
        c.tau = kendall_tau(din, dout);
      } catch (const AnalysisError&) {
      }
    }
    report.classes.push_back(c);
  }
  return report;
}

nlohmann::json BiasReport::to_json() const {
  nlohmann::json j;
  j["global_tau"] = global_tau;
  auto& cs = j["classes"] = nlohmann::json::array();
  for (const auto& c : classes) {
    nlohmann::json r{{"label", c.label}, {"count", c.count}, {"excluded", c.excluded},
                     {"d_in_hat", box_json(c.d_in)}, {"d_out", box_json(c.d_out)}};
    if (c.tau) r["tau"] = *c.tau;
    cs.push_back(std::move(r));
  }
  return j;
}

std::vector<double> default_alpha_grid() {
  std::vector<double> a;
  for (int k = 80; k <= 99; ++k) a.push_back(k / 100.0);
  return a;
}

RobustnessEstimate estimate_robust_accuracy(const std::vector<MarginRecord>& records,
                                            const std::vector<std::size_t>& subset, double epsilon,
                                            const std::vector<double>& alphas) {
  if (records.empty()) throw AnalysisError("robust accuracy estimate on an empty record set");
  if (subset.empty()) throw AnalysisError("attacked subset is empty");
  if (alphas.empty()) throw AnalysisError("alpha grid is empty");
  std::vector<double> pos_out;
  std::size_t sub_robust = 0;
  for (auto i : subset) {
    if (i >= records.size()) throw AnalysisError("subset index out of range");
    const auto& r = records[i];
    if (r.d_in_hat <= epsilon) pos_out.push_back(r.d_out);
    else sub_robust += r.correct;
  }
  if (pos_out.empty() || pos_out.size() == subset.size()) {
    throw AnalysisError("attacked subset has a single class at epsilon " + std::to_string(epsilon) +
                        "; use a larger subset");
  }
  std::sort(pos_out.begin(), pos_out.end());
  const double m = static_cast<double>(subset.size());
  RobustnessEstimate best;
  best.subset_attack_ra = static_cast<double>(sub_robust) / m;
  double best_diff = std::numeric_limits<double>::infinity();
  for (double alpha : alphas) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw AnalysisError("alpha must lie in (0, 1]");
    auto k = static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(pos_out.size()) - 1e-9));
    k = std::clamp<std::size_t>(k, 1, pos_out.size());
    const double lambda = pos_out[k - 1];
    std::size_t above = 0;
    for (auto i : subset) above += records[i].correct && records[i].d_out > lambda;
    const double est = static_cast<double>(above) / m;
    const double diff = std::abs(est - best.subset_attack_ra);
    if (diff < best_diff) {
      best_diff = diff;
      best.alpha = alpha;
      best.lambda = lambda;
      best.subset_estimate = est;
    }
  }
  std::size_t above = 0;
  for (const auto& r : records) above += r.correct && r.d_out > best.lambda;
  best.estimate = static_cast<double>(above) / static_cast<double>(records.size());
  return best;
}

nlohmann::json RobustnessEstimate::to_json() const {
  return {{"estimate", estimate},
          {"lambda", lambda},
          {"alpha", alpha},
          {"subset_estimate", subset_estimate},
          {"subset_attack_robust_accuracy", subset_attack_ra}};
}

AdversarialAudit adversarial_margin_audit(const Classifier& classifier,
                                          const std::vector<std::vector<double>>& sources,
                                          const std::vector<std::vector<double>>& adversaries,
                                          double lambda) {
  if (adversaries.empty()) throw AnalysisError("adversarial margin audit on an empty set");
  if (sources.size() != adversaries.size()) throw AnalysisError("sources and adversaries differ in count");
  std::vector<double> margins;
  margins.reserve(adversaries.size());
  std::size_t flagged = 0;
  for (std::size_t i = 0; i < adversaries.size(); ++i) {
    const auto logits = classifier.logits(adversaries[i]);
    if (predict_from_logits(logits) == classifier.predict(sources[i])) {
      throw AnalysisError("adversary " + std::to_string(i) + " does not change the decision");
    }
    const double d = logit_margin(logits);
    margins.push_back(d);
    flagged += d < lambda;
  }
  AdversarialAudit a;
  a.count = margins.size();
  a.p99_d_out = quantile(margins, 0.99);
  a.lambda = lambda;
  a.flagged_fraction = static_cast<double>(flagged) / static_cast<double>(margins.size());
  return a;
}

nlohmann::json AdversarialAudit::to_json() const {
  return {{"count", count}, {"p99_d_out", p99_d_out}, {"lambda", lambda},
          {"flagged_fraction", flagged_fraction}};
}

}  // namespace margin_audit
