#include "margin_audit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "margin_audit/rng.hpp"

namespace margin_audit {

namespace {

void clamp_to_bounds(Dataset& d) {
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t f = 0; f < d.n_features; ++f) {
      auto& v = d.inputs[i * d.n_features + f];
      v = std::clamp(v, d.bounds[f].lo, d.bounds[f].hi);
    }
  }
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.n_features = n_features;
  out.num_classes = num_classes;
  out.bounds = bounds;
  out.inputs.reserve(indices.size() * n_features);
  out.labels.reserve(indices.size());
  for (auto i : indices) {
    if (i >= size()) throw DatasetError("subset index out of range: " + std::to_string(i));
    auto row = input(i);
    out.inputs.insert(out.inputs.end(), row.begin(), row.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

double Dataset::diameter_linf() const {
  double d = 0.0;
  for (const auto& b : bounds) d = std::max(d, b.hi - b.lo);
  return d;
}

double Dataset::diameter_l2() const {
  double s = 0.0;
  for (const auto& b : bounds) s += (b.hi - b.lo) * (b.hi - b.lo);
  return std::sqrt(s);
}

void Dataset::validate() const {
  if (num_classes < 2) throw DatasetError("dataset needs at least 2 classes");
  if (n_features == 0) throw DatasetError("dataset has no features");
  if (bounds.size() != n_features) throw DatasetError("feature bounds do not match feature count");
  if (inputs.size() != labels.size() * n_features) {
    throw DatasetError("input matrix does not match label count");
  }
  for (const auto& b : bounds) {
    if (!(b.lo < b.hi)) throw DatasetError("empty feature bound interval");
  }
  for (std::size_t i = 0; i < size(); ++i) {
    if (labels[i] >= num_classes) {
      throw DatasetError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                         " is not below class count " + std::to_string(num_classes));
    }
    for (std::size_t f = 0; f < n_features; ++f) {
      const double v = inputs[i * n_features + f];
      if (!std::isfinite(v) || v < bounds[f].lo || v > bounds[f].hi) {
        throw DatasetError("input at row " + std::to_string(i) + " feature " + std::to_string(f) +
                           " is outside its bounds");
      }
    }
  }
}

Dataset gen_two_moons(std::size_t n, double noise_sigma, std::uint64_t seed) {
  if (n == 0) throw DatasetError("two moons needs n > 0");
  if (n % 2 != 0) throw DatasetError("two moons needs an even n");
  if (!(noise_sigma >= 0.0)) throw DatasetError("noise sigma must be >= 0");

  Dataset d;
  d.n_features = 2;
  d.num_classes = 2;
  d.bounds = {{-1.5, 2.5}, {-1.0, 1.5}};
  d.inputs.reserve(2 * n);
  d.labels.reserve(n);

  const std::size_t half = n / 2;
  const double denom = half > 1 ? static_cast<double>(half - 1) : 1.0;
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t i = 0; i < half; ++i) {
      const double t = std::numbers::pi * static_cast<double>(i) / denom;
      if (k == 0) {
        d.inputs.push_back(std::cos(t));
        d.inputs.push_back(std::sin(t));
      } else {
        d.inputs.push_back(1.0 - std::cos(t));
        d.inputs.push_back(0.5 - std::sin(t));
      }
      d.labels.push_back(k);
    }
  }
  Rng rng(seed);
  for (auto& v : d.inputs) v += noise_sigma * rng.normal();
  clamp_to_bounds(d);

  // Interleave classes so prefixes are balanced.
  const auto perm = rng.permutation(n);
  return d.subset(perm);
}

Dataset gen_gaussian_blobs(std::size_t n, const std::vector<std::vector<double>>& centers,
                           double sigma, std::uint64_t seed) {
  const std::size_t k = centers.size();
  if (k < 2) throw DatasetError("gaussian blobs need at least 2 centers");
  if (n < k) throw DatasetError("gaussian blobs need at least one point per class");
  if (!(sigma >= 0.0)) throw DatasetError("sigma must be >= 0");
  const std::size_t dim = centers.front().size();
  if (dim == 0) throw DatasetError("centers must have at least one coordinate");
  for (const auto& c : centers) {
    if (c.size() != dim) throw DatasetError("centers have inconsistent dimensions");
  }
  if (sigma == 0.0) {
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = a + 1; b < k; ++b) {
        if (centers[a] == centers[b]) {
          throw DatasetError("duplicate centers with sigma = 0 give degenerate labels");
        }
      }
    }
  }

  Dataset d;
  d.n_features = dim;
  d.num_classes = k;
  d.bounds.resize(dim);
  for (std::size_t f = 0; f < dim; ++f) {
    double lo = centers[0][f];
    double hi = centers[0][f];
    for (const auto& c : centers) {
      lo = std::min(lo, c[f]);
      hi = std::max(hi, c[f]);
    }
    d.bounds[f] = {lo - 5.0 * sigma - 1.0, hi + 5.0 * sigma + 1.0};
  }

  Rng rng(seed);
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t count = n / k + (c < n % k ? 1 : 0);
    for (std::size_t i = 0; i < count; ++i) {
      for (std::size_t f = 0; f < dim; ++f) d.inputs.push_back(centers[c][f] + sigma * rng.normal());
      d.labels.push_back(c);
    }
  }
  clamp_to_bounds(d);
  const auto perm = rng.permutation(d.size());
  return d.subset(perm);
}

DatasetSplit split(const Dataset& dataset, const std::array<double, 3>& fractions,
                   std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw DatasetError("split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DatasetError("split fractions must sum to 1");

  const std::size_t n = dataset.size();
  const auto a = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fractions[0]));
  const auto b = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fractions[1]));
  if (a + b > n) throw DatasetError("split fractions overflow the dataset");
  const std::size_t c = n - a - b;
  if (a == 0 || b == 0 || c == 0) throw DatasetError("split produced an empty part");

  Rng rng(seed);
  const auto perm = rng.permutation(n);
  std::span<const std::size_t> p(perm);
  return {dataset.subset(p.subspan(0, a)), dataset.subset(p.subspan(a, b)),
          dataset.subset(p.subspan(a + b, c))};
}

}  // namespace margin_audit
