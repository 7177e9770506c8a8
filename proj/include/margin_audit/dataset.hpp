#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace margin_audit {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FeatureBounds {
  double lo = 0.0;
  double hi = 1.0;
};

// Labeled inputs, row-major. Immutable once built.
struct Dataset {
  std::size_t n_features = 0;
  std::size_t num_classes = 0;
  std::vector<double> inputs;
  std::vector<std::size_t> labels;
  std::vector<FeatureBounds> bounds;

  std::size_t size() const { return labels.size(); }
  std::span<const double> input(std::size_t i) const {
    return {inputs.data() + i * n_features, n_features};
  }
  Dataset subset(std::span<const std::size_t> indices) const;
  // ℓ∞ and ℓ2 diameters of the feature box.
  double diameter_linf() const;
  double diameter_l2() const;

  // Throws DatasetError when a label, bound or shape invariant is broken.
  void validate() const;
};

// Two interleaved half-circles of radius 1; the second is the first
// reflected and translated by (1, 0.5), i.e. y = 1 - sin t - 0.5.
// Bounds: x ∈ [-1.5, 2.5], y ∈ [-1, 1.5].
Dataset gen_two_moons(std::size_t n, double noise_sigma, std::uint64_t seed);

// Isotropic Gaussian blobs; class k gets n/K points (remainder to the lowest
// classes). Bounds are the center box padded by 5σ + 1.
Dataset gen_gaussian_blobs(std::size_t n, const std::vector<std::vector<double>>& centers,
                           double sigma, std::uint64_t seed);

struct DatasetSplit {
  Dataset train;
  Dataset val;
  Dataset test;
};

// Shuffled disjoint partition. Sizes are round(n·f) for the first two
// fractions and the remainder for the last. Every part must be nonempty.
DatasetSplit split(const Dataset& dataset, const std::array<double, 3>& fractions,
                   std::uint64_t seed);

}  // namespace margin_audit
