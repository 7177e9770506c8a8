#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "margin_audit/dataset.hpp"
#include "margin_audit/margins.hpp"
#include "margin_audit/model.hpp"
#include "margin_audit/optimizer.hpp"
#include "margin_audit/provenance.hpp"

namespace margin_audit {

class PseudoMarginError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Frozen features with margin targets scaled into [0, 1].
struct RegressionSet {
  Tensor features;  // [n, m]
  std::vector<double> targets;
  std::vector<std::size_t> ids;

  std::size_t size() const { return targets.size(); }
};

struct RegressionSplit {
  RegressionSet train;
  RegressionSet val;
  double normalizer = 1.0;  // 99th percentile of finite training-split margins
};

// Targets are d_in_hat / normalizer clipped to 1; the no-adversary sentinel maps to 1.
RegressionSplit build_regression_set(const Classifier& classifier, const Dataset& samples,
                                     const std::vector<MarginRecord>& records, double val_fraction,
                                     std::uint64_t seed);

struct PseudoMarginConfig {
  std::vector<std::size_t> hidden = {128, 128, 128};
  OptimizerConfig optimizer = [] {
    OptimizerConfig o;
    o.learning_rate = 1e-3;
    o.epochs = 200;
    o.batch_size = 64;
    return o;
  }();
  // Stop after this many epochs without a validation improvement (0 disables).
  std::size_t patience = 30;
};

// Dense relu layers followed by one sigmoid unit.
class PseudoMarginNet {
 public:
  PseudoMarginNet() = default;
  static PseudoMarginNet initialize(std::size_t input_width, const std::vector<std::size_t>& hidden,
                                    std::uint64_t seed);

  std::size_t input_width() const { return input_width_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  double normalizer() const { return normalizer_; }
  void set_normalizer(double n) { normalizer_ = n; }

  // Score in (0, 1); larger means farther from the decision boundary.
  double score(std::span<const double> features) const;
  // Score in input units (score · normalizer).
  double margin(std::span<const double> features) const { return score(features) * normalizer_; }

  Bindings parameters() const;
  void set_parameters(const Bindings& params);
  // Adds parameter leaves named "pm.layerI.weights"/"pm.layerI.biases" and returns the output node.
  NodeId build(Graph& graph, NodeId x) const;

 private:
  std::size_t input_width_ = 0;
  std::vector<DenseLayer> layers_;  // last layer has one output
  double normalizer_ = 1.0;
};

struct PseudoEpoch {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
};

struct PseudoHistory {
  std::vector<PseudoEpoch> epochs;  // epoch 0 is the initialized net
  std::size_t best_epoch = 0;
  std::string flag;

  nlohmann::json to_json() const;
};

struct PseudoTrainResult {
  PseudoMarginNet net;
  PseudoHistory history;
};

// MSE regression with early stopping; returns the best-validation parameters.
// Zero epochs returns the initialized net and sets history.flag.
PseudoTrainResult train_pseudomargin(const RegressionSplit& split, const PseudoMarginConfig& config,
                                     std::uint64_t seed);

double regression_mse(const PseudoMarginNet& net, const RegressionSet& set);

// Pseudo-margin score column for every sample of a dataset.
std::vector<double> pseudo_margin_scores(const PseudoMarginNet& net, const Classifier& classifier,
                                         const Dataset& samples);

void save_pseudomargin(const PseudoMarginNet& net, const std::filesystem::path& path,
                       const Provenance& provenance = {});
PseudoMarginNet load_pseudomargin(const std::filesystem::path& path);

}  // namespace margin_audit
