#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "margin_audit/graph.hpp"
#include "margin_audit/tensor.hpp"

namespace margin_audit {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Activation { Relu, Tanh, Identity };

std::string_view activation_name(Activation a);
Activation parse_activation(std::string_view name);

struct ConvStage {
  Conv2dGeometry geometry;
  Activation activation = Activation::Relu;
};

// Layer widths of h_ψ: input → [conv] → hidden... The last width is the
// feature dimension m seen by the head.
struct FeatureExtractorSpec {
  std::size_t input_width = 0;
  std::optional<ConvStage> conv;
  std::vector<std::size_t> hidden;
  std::vector<Activation> activations;

  static constexpr std::size_t kMaxHiddenLayers = 4;

  std::size_t feature_width() const;
  void validate() const;
  bool operator==(const FeatureExtractorSpec&) const = default;
};

struct DenseLayer {
  Tensor weights;  // [out, in]
  Tensor biases;   // [out]
};

// Row k of weights is w_k; biases[k] is b_k.
struct LinearHead {
  Tensor weights;  // [K, m]
  Tensor biases;   // [K]

  std::size_t num_classes() const { return weights.rank() == 2 ? weights.shape[0] : 0; }
  std::size_t feature_width() const { return weights.rank() == 2 ? weights.shape[1] : 0; }
  std::span<const double> row(std::size_t k) const { return weights.row(k); }
  void validate() const;
};

struct ClassifierMetadata {
  std::uint64_t seed = 0;
  std::string training = "untrained";
  double train_epsilon = 0.0;
};

// Graph nodes for a classifier's parameters; shared by every forward branch
// built from the same graph.
struct ParameterNodes {
  std::optional<NodeId> conv_kernel;
  std::optional<NodeId> conv_bias;
  std::vector<NodeId> weights;
  std::vector<NodeId> biases;
  NodeId head_weights = 0;
  NodeId head_biases = 0;
};

// f_θ(x) = W·h_ψ(x) + b with h_ψ an MLP, optionally preceded by one conv stage.
class Classifier {
 public:
  Classifier() = default;
  Classifier(FeatureExtractorSpec spec, std::optional<DenseLayer> conv,
             std::vector<DenseLayer> layers, LinearHead head, ClassifierMetadata metadata = {});

  // Fan-in uniform init U(±sqrt(6/fan_in)) for weights, zero biases.
  static Classifier initialize(const FeatureExtractorSpec& spec, std::size_t num_classes,
                               std::uint64_t seed);

  const FeatureExtractorSpec& spec() const { return spec_; }
  const LinearHead& head() const { return head_; }
  LinearHead& head() { return head_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  const std::optional<DenseLayer>& conv() const { return conv_; }
  const ClassifierMetadata& metadata() const { return metadata_; }
  ClassifierMetadata& metadata() { return metadata_; }

  std::size_t input_width() const { return spec_.input_width; }
  std::size_t feature_width() const { return spec_.feature_width(); }
  std::size_t num_classes() const { return head_.num_classes(); }

  std::vector<double> features(std::span<const double> x) const;
  std::vector<double> logits(std::span<const double> x) const;
  // Logits from precomputed features.
  std::vector<double> head_logits(std::span<const double> z) const;
  std::size_t predict(std::span<const double> x) const;

  // Parameters as named tensors ("conv.kernel", "layer0.weights", ..., "head.biases").
  std::vector<std::string> parameter_names() const;
  Bindings parameters() const;
  void set_parameters(const Bindings& params);
  std::size_t parameter_count() const;

  ParameterNodes add_parameter_leaves(Graph& graph) const;
  NodeId build_features(Graph& graph, const ParameterNodes& params, NodeId x) const;
  NodeId build_logits(Graph& graph, const ParameterNodes& params, NodeId x) const;

 private:
  void validate() const;

  FeatureExtractorSpec spec_;
  std::optional<DenseLayer> conv_;
  std::vector<DenseLayer> layers_;
  LinearHead head_;
  ClassifierMetadata metadata_;
};

// argmax with ties broken towards the lowest index.
std::size_t predict_from_logits(std::span<const double> logits);

// Single-sample input gradients of a fixed classifier. Owns a graph with the
// parameters bound once; not thread-safe, use one per worker.
class InputGradient {
 public:
  explicit InputGradient(const Classifier& classifier);

  // Evaluates logits at x and caches the tape for gradient calls.
  const std::vector<double>& evaluate(std::span<const double> x);
  // ∇ₓ Σ_k seed_k f^k(x) at the last evaluated point.
  std::vector<double> gradient(std::span<const double> seed) const;
  // ∇ₓ (f^a(x) - f^b(x)) at the last evaluated point.
  std::vector<double> difference_gradient(std::size_t a, std::size_t b) const;

 private:
  const Classifier* classifier_;
  Graph graph_;
  NodeId logits_ = 0;
  std::vector<double> last_logits_;
  bool evaluated_ = false;
};

}  // namespace margin_audit
