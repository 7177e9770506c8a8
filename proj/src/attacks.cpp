#include "margin_audit/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>

#include "margin_audit/parallel.hpp"
#include "margin_audit/rng.hpp"

namespace margin_audit {

namespace {

std::vector<double> random_in_ball(Rng& rng, std::size_t n, double radius, Norm p) {
  std::vector<double> d(n);
  if (p == Norm::Linf) {
    for (auto& v : d) v = rng.uniform(-radius, radius);
    return d;
  }
  double s = 0.0;
  for (auto& v : d) {
    v = rng.normal();
    s += v * v;
  }
  s = std::sqrt(s);
  const double r = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(n));
  for (auto& v : d) v = s > 0.0 ? v * r / s : 0.0;
  return d;
}

// Counts model queries for the attack report.
class Queries {
 public:
  explicit Queries(const Classifier& c) : c_(c) {}
  std::size_t predict(std::span<const double> x) {
    ++count;
    return c_.predict(x);
  }
  const std::vector<double>& evaluate(InputGradient& g, std::span<const double> x) {
    ++count;
    return g.evaluate(x);
  }
  std::size_t count = 0;

 private:
  const Classifier& c_;
};

void check_adversary(const Classifier& c, std::span<const double> x, const AttackResult& r,
                     const std::vector<FeatureBounds>& bounds, Norm p) {
  if (!r.success) return;
  if (c.predict(r.adversarial) == c.predict(x)) {
    throw AttackError("attack returned a point with an unchanged decision");
  }
  if (!within_bounds(r.adversarial, bounds)) {
    throw AttackError("attack returned a point outside the feature bounds");
  }
  if (std::abs(distance(r.adversarial, x, p) - r.norm) > 1e-12) {
    throw AttackError("attack reported a perturbation norm that does not recompute");
  }
}

// Index of the largest logit other than `skip`.
std::size_t runner_up(std::span<const double> logits, std::size_t skip) {
  std::size_t best = skip == 0 ? 1 : 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (k != skip && logits[k] > logits[best]) best = k;
  }
  return best;
}

class MinimalNormSearch {
 public:
  MinimalNormSearch(const Classifier& c, std::span<const double> x,
                    const std::vector<FeatureBounds>& bounds, const MarginSearchConfig& config)
      : c_(c), x_(x.begin(), x.end()), bounds_(bounds), cfg_(config), grad_(c), q_(c) {
    source_ = q_.predict(x_);
  }

  AttackResult run(std::uint64_t seed) {
    const double bound = cfg_.effective_search_bound(bounds_);
    AttackResult best;
    for (std::size_t r = 0; r < cfg_.restarts; ++r) {
      std::vector<double> start = x_;
      if (r > 0) {
        Rng rng = Rng::derive(seed, r);
        const double radius = 0.5 * (best.success ? best.norm : 0.2 * bound);
        const auto d = random_in_ball(rng, x_.size(), radius, cfg_.norm);
        for (std::size_t i = 0; i < start.size(); ++i) start[i] += d[i];
        clip_to_bounds(start, bounds_);
      }
      auto adv = linearized_search(start);
      if (!adv) adv = pgd_fallback(bound, mix_seed(seed, r));
      if (!adv) continue;
      auto point = bisect(*adv);
      refine(point);
      const double n = distance(point, x_, cfg_.norm);
      if (n <= bound && n < best.norm) {
        best.success = true;
        best.adversarial = std::move(point);
        best.norm = n;
      }
    }
    best.queries = q_.count;
    best.iterations = iterations_;
    if (!best.success) best.adversarial.clear();
    return best;
  }

 private:
  // Iterated projection onto the nearest linearized boundary of the source class.
  std::optional<std::vector<double>> linearized_search(const std::vector<double>& start) {
    const auto n = x_.size();
    std::vector<double> cur = start;
    std::vector<double> total(n, 0.0);
    for (std::size_t it = 0; it < cfg_.max_iterations; ++it) {
      ++iterations_;
      const auto logits = q_.evaluate(grad_, cur);
      if (predict_from_logits(logits) != source_) return cur;
      double best_dist = std::numeric_limits<double>::infinity();
      std::vector<double> best_g;
      for (std::size_t j = 0; j < logits.size(); ++j) {
        if (j == source_) continue;
        auto g = grad_.difference_gradient(j, source_);
        const double gq = dual_norm_of(g, cfg_.norm);
        if (gq == 0.0) continue;
        const double dist = (logits[source_] - logits[j]) / gq;
        if (dist < best_dist) {
          best_dist = dist;
          best_g = std::move(g);
        }
      }
      if (best_g.empty()) return std::nullopt;
      const double step = std::max(best_dist, 0.5 * cfg_.tolerance);
      const auto u = steepest_direction(best_g, cfg_.norm);
      for (std::size_t i = 0; i < n; ++i) {
        total[i] += step * u[i];
        cur[i] = start[i] + cfg_.overshoot * total[i];
      }
      clip_to_bounds(cur, bounds_);
    }
    if (q_.predict(cur) != source_) return cur;
    return std::nullopt;
  }

  std::optional<std::vector<double>> pgd_fallback(double bound, std::uint64_t seed) {
    PgdConfig pc;
    pc.epsilon = bound;
    pc.norm = cfg_.norm;
    pc.steps = cfg_.pgd_steps;
    // Fixed step so that longer runs extend shorter ones.
    pc.step_size = bound / 16.0;
    pc.restarts = 1;
    pc.seed = seed;
    auto r = pgd(c_, x_, source_, bounds_, pc);
    q_.count += r.queries;
    iterations_ += r.iterations;
    if (!r.success) return std::nullopt;
    return std::move(r.adversarial);
  }

  // Smallest t on the segment x→adv (to tolerance) whose decision differs from the source.
  std::vector<double> bisect(const std::vector<double>& adv) {
    const auto n = x_.size();
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = adv[i] - x_[i];
    const double len = norm_of(d, cfg_.norm);
    double lo = 0.0;
    double hi = 1.0;
    std::vector<double> p(n);
    // Absolute tolerance, tightened to 0.1% of the current length for tiny margins.
    while ((hi - lo) * len > cfg_.tolerance || (lo > 0.0 && hi - lo > 1e-3 * hi)) {
      const double mid = 0.5 * (lo + hi);
      for (std::size_t i = 0; i < n; ++i) p[i] = x_[i] + mid * d[i];
      if (q_.predict(p) != source_) hi = mid;
      else lo = mid;
    }
    if (hi == 1.0) return adv;
    for (std::size_t i = 0; i < n; ++i) p[i] = x_[i] + hi * d[i];
    return p;
  }

  // Projects x onto the boundary linearized at the current boundary point and
  // keeps the bisected result while it shortens the perturbation.
  void refine(std::vector<double>& point) {
    const auto n = x_.size();
    double current = distance(point, x_, cfg_.norm);
    for (std::size_t it = 0; it < cfg_.max_iterations; ++it) {
      ++iterations_;
      const auto logits = q_.evaluate(grad_, point);
      double best_dist = std::numeric_limits<double>::infinity();
      std::vector<double> best_dir;
      for (std::size_t j = 0; j < logits.size(); ++j) {
        if (j == source_) continue;
        const auto g = grad_.difference_gradient(source_, j);
        const double gq = dual_norm_of(g, cfg_.norm);
        if (gq == 0.0) continue;
        double h = logits[source_] - logits[j];
        for (std::size_t i = 0; i < n; ++i) h += g[i] * (x_[i] - point[i]);
        if (h <= 0.0) continue;
        const double dist = h / gq;
        if (dist < best_dist) {
          best_dist = dist;
          auto u = steepest_direction(g, cfg_.norm);
          for (auto& v : u) v = -v;
          best_dir = std::move(u);
        }
      }
      if (best_dir.empty() || cfg_.overshoot * best_dist >= current) return;

      std::vector<double> cand(n);
      for (std::size_t i = 0; i < n; ++i) cand[i] = x_[i] + cfg_.overshoot * best_dist * best_dir[i];
      clip_to_bounds(cand, bounds_);
      // Walk towards the known boundary point until the decision flips.
      bool flipped = q_.predict(cand) != source_;
      for (int k = 0; k < 8 && !flipped; ++k) {
        for (std::size_t i = 0; i < n; ++i) cand[i] = 0.5 * (cand[i] + point[i]);
        flipped = q_.predict(cand) != source_;
      }
      if (!flipped) return;
      auto next = bisect(cand);
      const double nd = distance(next, x_, cfg_.norm);
      if (!(nd < current - 0.01 * cfg_.tolerance)) return;
      point = std::move(next);
      current = nd;
    }
  }

  const Classifier& c_;
  std::vector<double> x_;
  const std::vector<FeatureBounds>& bounds_;
  MarginSearchConfig cfg_;
  InputGradient grad_;
  Queries q_;
  std::size_t source_ = 0;
  std::size_t iterations_ = 0;
};

std::vector<std::vector<double>> oracle_directions(std::size_t dim, Norm p, std::size_t res,
                                                   double& relative_error) {
  std::vector<std::vector<double>> dirs;
  if (dim == 1) {
    relative_error = 0.0;
    return {{1.0}, {-1.0}};
  }
  if (dim == 2 && p == Norm::L2) {
    for (std::size_t k = 0; k < res; ++k) {
      const double t = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(res);
      dirs.push_back({std::cos(t), std::sin(t)});
    }
    relative_error = 1.0 / std::cos(std::numbers::pi / static_cast<double>(res)) - 1.0;
    return dirs;
  }
  if (dim == 2) {
    const std::size_t m = 4 * ((res + 3) / 4);
    for (std::size_t k = 0; k < m; ++k) {
      const double s = 8.0 * static_cast<double>(k) / static_cast<double>(m);
      const auto side = static_cast<int>(s / 2.0);
      const double off = s - 2.0 * side - 1.0;
      switch (side) {
        case 0: dirs.push_back({1.0, off}); break;
        case 1: dirs.push_back({-off, 1.0}); break;
        case 2: dirs.push_back({-1.0, -off}); break;
        default: dirs.push_back({off, -1.0}); break;
      }
    }
    relative_error = 0.5 * 8.0 / static_cast<double>(m);
    return dirs;
  }
  if (p == Norm::L2) {
    const std::size_t count = std::max<std::size_t>(64, res * res / 2);
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (std::size_t k = 0; k < count; ++k) {
      const double z = 1.0 - 2.0 * (static_cast<double>(k) + 0.5) / static_cast<double>(count);
      const double r = std::sqrt(1.0 - z * z);
      const double phi = golden * static_cast<double>(k);
      dirs.push_back({r * std::cos(phi), r * std::sin(phi), z});
    }
    const double spacing = std::sqrt(4.0 * std::numbers::pi / static_cast<double>(count));
    relative_error = 1.0 / std::cos(spacing) - 1.0;
    return dirs;
  }
  const std::size_t g = std::max<std::size_t>(2, res / 4) + 1;
  for (std::size_t axis = 0; axis < 3; ++axis) {
    for (double sign : {1.0, -1.0}) {
      for (std::size_t a = 0; a < g; ++a) {
        for (std::size_t b = 0; b < g; ++b) {
          const double u = -1.0 + 2.0 * static_cast<double>(a) / static_cast<double>(g - 1);
          const double v = -1.0 + 2.0 * static_cast<double>(b) / static_cast<double>(g - 1);
          std::vector<double> d(3);
          d[axis] = sign;
          d[(axis + 1) % 3] = u;
          d[(axis + 2) % 3] = v;
          dirs.push_back(std::move(d));
        }
      }
    }
  }
  relative_error = 1.0 / static_cast<double>(g - 1);
  return dirs;
}

}  // namespace

double PgdConfig::effective_step_size() const {
  return step_size > 0.0 ? step_size : 2.5 * epsilon / static_cast<double>(std::max<std::size_t>(steps, 1));
}

AttackResult pgd(const Classifier& classifier, std::span<const double> x, std::size_t label,
                 const std::vector<FeatureBounds>& bounds, const PgdConfig& config) {
  AttackResult result;
  if (!(config.epsilon > 0.0)) return result;
  if (x.size() != classifier.input_width() || bounds.size() != x.size()) {
    throw AttackError("input, bounds and model widths disagree");
  }
  if (label >= classifier.num_classes()) throw AttackError("label out of range");

  Queries q(classifier);
  const auto source = q.predict(x);
  InputGradient grad(classifier);
  const double alpha = config.effective_step_size();
  const auto n = x.size();
  std::vector<double> cur(n);
  std::vector<double> delta(n);

  for (std::size_t r = 0; r < std::max<std::size_t>(config.restarts, 1); ++r) {
    Rng rng = Rng::derive(config.seed, r);
    delta = random_in_ball(rng, n, config.epsilon, config.norm);
    for (std::size_t i = 0; i < n; ++i) cur[i] = x[i] + delta[i];
    clip_to_bounds(cur, bounds);
    for (std::size_t step = 0;; ++step) {
      const auto& logits = q.evaluate(grad, cur);
      for (double v : logits) {
        if (!std::isfinite(v)) throw AttackError("non-finite logits during PGD");
      }
      if (predict_from_logits(logits) != source) {
        result.success = true;
        result.adversarial = cur;
        result.norm = distance(cur, x, config.norm);
        break;
      }
      if (step == config.steps) break;
      ++result.iterations;
      const auto j = runner_up(logits, label);
      const auto g = grad.difference_gradient(j, label);
      for (double v : g) {
        if (!std::isfinite(v)) throw AttackError("non-finite gradient during PGD");
      }
      const auto u = steepest_direction(g, config.norm);
      for (std::size_t i = 0; i < n; ++i) delta[i] = cur[i] + alpha * u[i] - x[i];
      project_into_ball(delta, config.epsilon, config.norm);
      for (std::size_t i = 0; i < n; ++i) cur[i] = x[i] + delta[i];
      clip_to_bounds(cur, bounds);
    }
    if (result.success) break;
  }
  result.queries = q.count;
  if (result.success) {
    if (result.norm > config.epsilon + 1e-9) throw AttackError("PGD left the ε-ball");
    check_adversary(classifier, x, result, bounds, config.norm);
  }
  return result;
}

void MarginSearchConfig::validate() const {
  if (!(tolerance > 0.0)) throw AttackError("margin search tolerance must be positive");
  if (restarts < 1) throw AttackError("margin search needs at least one restart");
  if (max_iterations < 1) throw AttackError("margin search needs at least one iteration");
  if (!(search_bound >= 0.0)) throw AttackError("search bound must be non-negative");
  if (!(overshoot >= 1.0)) throw AttackError("overshoot must be at least 1");
}

double MarginSearchConfig::effective_search_bound(const std::vector<FeatureBounds>& bounds) const {
  if (search_bound > 0.0) return search_bound;
  double linf = 0.0;
  double l2 = 0.0;
  for (const auto& b : bounds) {
    linf = std::max(linf, b.hi - b.lo);
    l2 += (b.hi - b.lo) * (b.hi - b.lo);
  }
  return 0.5 * (norm == Norm::Linf ? linf : std::sqrt(l2));
}

AttackResult minimal_norm_adversarial(const Classifier& classifier, std::span<const double> x,
                                      const std::vector<FeatureBounds>& bounds,
                                      const MarginSearchConfig& config, std::uint64_t seed) {
  config.validate();
  if (x.size() != classifier.input_width() || bounds.size() != x.size()) {
    throw AttackError("input, bounds and model widths disagree");
  }
  MinimalNormSearch search(classifier, x, bounds, config);
  auto result = search.run(seed);
  check_adversary(classifier, x, result, bounds, config.norm);
  return result;
}

OracleResult grid_margin_oracle(const DecisionFunction& decide, std::span<const double> x,
                                const std::vector<FeatureBounds>& bounds, Norm norm,
                                std::size_t resolution, double max_radius) {
  const auto n = x.size();
  if (n == 0 || n > 3) throw AttackError("grid oracle supports input dimension 1 to 3 only");
  if (resolution < 64) throw AttackError("grid oracle resolution must be at least 64");
  if (bounds.size() != n) throw AttackError("bounds width mismatch");
  if (max_radius <= 0.0) {
    double linf = 0.0;
    double l2 = 0.0;
    for (const auto& b : bounds) {
      linf = std::max(linf, b.hi - b.lo);
      l2 += (b.hi - b.lo) * (b.hi - b.lo);
    }
    max_radius = norm == Norm::Linf ? linf : std::sqrt(l2);
  }

  double rel = 0.0;
  const auto dirs = oracle_directions(n, norm, resolution, rel);
  const std::size_t source = decide(x);
  const double rho = 1.0 + 1.0 / static_cast<double>(resolution);
  std::vector<double> p(n);
  const auto flips_at = [&](const std::vector<double>& u, double r) {
    for (std::size_t i = 0; i < n; ++i) p[i] = x[i] + r * u[i];
    return within_bounds(p, bounds) && decide(p) != source;
  };

  OracleResult out;
  double prev = 0.0;
  double r = max_radius * 1e-5;
  while (prev < max_radius) {
    r = std::min(r, max_radius);
    std::vector<const std::vector<double>*> flipped;
    for (const auto& u : dirs) {
      if (flips_at(u, r)) flipped.push_back(&u);
    }
    if (!flipped.empty()) {
      for (const auto* u : flipped) {
        double lo = prev;
        double hi = r;
        while (hi - lo > 1e-10 * r) {
          const double mid = 0.5 * (lo + hi);
          if (flips_at(*u, mid)) hi = mid;
          else lo = mid;
        }
        if (hi < out.distance) {
          out.distance = hi;
          out.boundary_point.assign(n, 0.0);
          for (std::size_t i = 0; i < n; ++i) out.boundary_point[i] = x[i] + hi * (*u)[i];
        }
      }
      out.error_bound = out.distance * rel;
      return out;
    }
    prev = r;
    r *= rho;
  }
  return out;
}

OracleResult grid_margin_oracle(const Classifier& classifier, std::span<const double> x,
                                const std::vector<FeatureBounds>& bounds, Norm norm,
                                std::size_t resolution, double max_radius) {
  return grid_margin_oracle([&](std::span<const double> p) { return classifier.predict(p); }, x,
                            bounds, norm, resolution, max_radius);
}

RobustAccuracyResult robust_accuracy(const Classifier& classifier, const Dataset& dataset,
                                     const PgdConfig& config, std::size_t threads) {
  RobustAccuracyResult out;
  const auto n = dataset.size();
  if (n == 0) throw AttackError("robust accuracy on an empty dataset");
  std::vector<char> correct(n, 0);
  std::vector<char> vulnerable(n, 0);
  parallel_for(n, threads, [&](std::size_t i) {
    const auto x = dataset.input(i);
    correct[i] = classifier.predict(x) == dataset.labels[i];
    if (!correct[i]) {
      vulnerable[i] = 1;
      return;
    }
    if (!(config.epsilon > 0.0)) return;
    PgdConfig pc = config;
    pc.seed = mix_seed(config.seed, i);
    vulnerable[i] = pgd(classifier, x, dataset.labels[i], dataset.bounds, pc).success;
  });
  std::size_t n_correct = 0;
  std::size_t n_robust = 0;
  out.vulnerable.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    n_correct += correct[i];
    n_robust += !vulnerable[i];
    out.vulnerable[i] = vulnerable[i];
  }
  out.clean_accuracy = static_cast<double>(n_correct) / static_cast<double>(n);
  out.robust_accuracy = static_cast<double>(n_robust) / static_cast<double>(n);
  return out;
}

}  // namespace margin_audit
