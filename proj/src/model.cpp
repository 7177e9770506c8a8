#include "margin_audit/model.hpp"

#include <cmath>

#include "margin_audit/rng.hpp"

namespace margin_audit {

namespace {

void apply_activation(Activation a, std::vector<double>& v) {
  switch (a) {
    case Activation::Relu:
      for (auto& x : v) x = x > 0.0 ? x : 0.0;
      break;
    case Activation::Tanh:
      for (auto& x : v) x = std::tanh(x);
      break;
    case Activation::Identity:
      break;
  }
}

NodeId activation_node(Graph& g, Activation a, NodeId x) {
  switch (a) {
    case Activation::Relu: return g.relu(x);
    case Activation::Tanh: return g.tanh(x);
    case Activation::Identity: return x;
  }
  return x;
}

// Same accumulation order as the graph's affine node, so both paths agree bitwise.
std::vector<double> affine(const Tensor& w, const Tensor& b, std::span<const double> x) {
  const auto m = w.shape[0];
  const auto k = w.shape[1];
  std::vector<double> out(m);
  for (std::size_t j = 0; j < m; ++j) {
    const double* wr = w.data.data() + j * k;
    double s = b.data[j];
    for (std::size_t c = 0; c < k; ++c) s += wr[c] * x[c];
    out[j] = s;
  }
  return out;
}

std::vector<double> convolve(const Conv2dGeometry& g, const Tensor& kern, const Tensor& bias,
                         std::span<const double> x) {
  const auto ksz = g.channels * g.kernel * g.kernel;
  const auto oh = g.out_height();
  const auto ow = g.out_width();
  std::vector<double> out(g.output_size());
  for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
    const double* kr = kern.data.data() + oc * ksz;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        double s = bias.data[oc];
        for (std::size_t c = 0; c < g.channels; ++c) {
          for (std::size_t u = 0; u < g.kernel; ++u) {
            const double* xrow =
                x.data() + c * g.height * g.width + (i * g.stride + u) * g.width + j * g.stride;
            const double* krow = kr + (c * g.kernel + u) * g.kernel;
            for (std::size_t v = 0; v < g.kernel; ++v) s += krow[v] * xrow[v];
          }
        }
        out[(oc * oh + i) * ow + j] = s;
      }
    }
  }
  return out;
}

Tensor uniform_fan_in(Rng& rng, std::size_t out, std::size_t fan_in) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor t = Tensor::zeros({out, fan_in});
  for (auto& v : t.data) v = rng.uniform(-limit, limit);
  return t;
}

void expect_shape(const Tensor& t, const std::vector<std::size_t>& shape, const std::string& what) {
  if (t.shape != shape) {
    throw ModelError(what + " has shape " + shape_string(t.shape) + ", expected " +
                     shape_string(shape));
  }
  if (!t.all_finite()) throw ModelError(what + " has non-finite entries");
}

}  // namespace

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "identity";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  if (name == "identity") return Activation::Identity;
  throw ModelError("unknown activation '" + std::string(name) + "'");
}

std::size_t FeatureExtractorSpec::feature_width() const {
  if (!hidden.empty()) return hidden.back();
  if (conv) return conv->geometry.output_size();
  return input_width;
}

void FeatureExtractorSpec::validate() const {
  if (input_width == 0) throw ModelError("input width must be positive");
  if (hidden.size() > kMaxHiddenLayers) {
    throw ModelError("at most " + std::to_string(kMaxHiddenLayers) + " hidden layers supported");
  }
  if (activations.size() != hidden.size()) {
    throw ModelError("one activation per hidden layer required");
  }
  for (auto w : hidden) {
    if (w == 0) throw ModelError("hidden widths must be positive");
  }
  if (conv) {
    const auto& g = conv->geometry;
    if (g.kernel == 0 || g.stride == 0 || g.kernel > g.height || g.kernel > g.width ||
        g.out_channels == 0 || g.channels == 0) {
      throw ModelError("invalid conv stage geometry");
    }
    if (g.input_size() != input_width) {
      throw ModelError("conv stage input size does not match input width");
    }
  }
}

void LinearHead::validate() const {
  if (weights.rank() != 2) throw ModelError("head weights must be a K x m matrix");
  if (num_classes() < 2) throw ModelError("head needs K >= 2");
  if (feature_width() < 1) throw ModelError("head needs m >= 1");
  expect_shape(biases, {num_classes()}, "head biases");
  if (!weights.all_finite()) throw ModelError("head weights have non-finite entries");
}

Classifier::Classifier(FeatureExtractorSpec spec, std::optional<DenseLayer> conv,
                       std::vector<DenseLayer> layers, LinearHead head, ClassifierMetadata metadata)
    : spec_(std::move(spec)),
      conv_(std::move(conv)),
      layers_(std::move(layers)),
      head_(std::move(head)),
      metadata_(std::move(metadata)) {
  validate();
}

void Classifier::validate() const {
  spec_.validate();
  head_.validate();
  if (spec_.conv.has_value() != conv_.has_value()) {
    throw ModelError("conv parameters do not match the extractor spec");
  }
  std::size_t width = spec_.input_width;
  if (conv_) {
    const auto& g = spec_.conv->geometry;
    expect_shape(conv_->weights, {g.out_channels, g.channels * g.kernel * g.kernel}, "conv kernel");
    expect_shape(conv_->biases, {g.out_channels}, "conv bias");
    width = g.output_size();
  }
  if (layers_.size() != spec_.hidden.size()) throw ModelError("layer count does not match spec");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    expect_shape(layers_[i].weights, {spec_.hidden[i], width}, "layer" + std::to_string(i) + " weights");
    expect_shape(layers_[i].biases, {spec_.hidden[i]}, "layer" + std::to_string(i) + " biases");
    width = spec_.hidden[i];
  }
  if (head_.feature_width() != width) {
    throw ModelError("head feature width " + std::to_string(head_.feature_width()) +
                     " does not match extractor output " + std::to_string(width));
  }
}

Classifier Classifier::initialize(const FeatureExtractorSpec& spec, std::size_t num_classes,
                                  std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  std::optional<DenseLayer> conv;
  std::size_t width = spec.input_width;
  if (spec.conv) {
    const auto& g = spec.conv->geometry;
    const auto fan_in = g.channels * g.kernel * g.kernel;
    conv = DenseLayer{uniform_fan_in(rng, g.out_channels, fan_in), Tensor::zeros({g.out_channels})};
    width = g.output_size();
  }
  std::vector<DenseLayer> layers;
  for (auto h : spec.hidden) {
    layers.push_back({uniform_fan_in(rng, h, width), Tensor::zeros({h})});
    width = h;
  }
  LinearHead head{uniform_fan_in(rng, num_classes, width), Tensor::zeros({num_classes})};
  ClassifierMetadata meta;
  meta.seed = seed;
  return Classifier(spec, std::move(conv), std::move(layers), std::move(head), meta);
}

std::vector<double> Classifier::features(std::span<const double> x) const {
  if (x.size() != spec_.input_width) {
    throw ModelError("input width " + std::to_string(x.size()) + " does not match model input " +
                     std::to_string(spec_.input_width));
  }
  std::vector<double> v(x.begin(), x.end());
  if (conv_) {
    v = convolve(spec_.conv->geometry, conv_->weights, conv_->biases, v);
    apply_activation(spec_.conv->activation, v);
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    v = affine(layers_[i].weights, layers_[i].biases, v);
    apply_activation(spec_.activations[i], v);
  }
  return v;
}

std::vector<double> Classifier::head_logits(std::span<const double> z) const {
  if (z.size() != head_.feature_width()) throw ModelError("feature width does not match head");
  return affine(head_.weights, head_.biases, z);
}

std::vector<double> Classifier::logits(std::span<const double> x) const {
  return head_logits(features(x));
}

std::size_t Classifier::predict(std::span<const double> x) const {
  return predict_from_logits(logits(x));
}

std::size_t predict_from_logits(std::span<const double> logits) {
  if (logits.empty()) throw ModelError("empty logits");
  std::size_t best = 0;
  for (std::size_t k = 1; k < logits.size(); ++k) {
    if (logits[k] > logits[best]) best = k;
  }
  return best;
}

std::vector<std::string> Classifier::parameter_names() const {
  std::vector<std::string> names;
  if (conv_) {
    names.push_back("conv.kernel");
    names.push_back("conv.bias");
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    names.push_back("layer" + std::to_string(i) + ".weights");
    names.push_back("layer" + std::to_string(i) + ".biases");
  }
  names.push_back("head.weights");
  names.push_back("head.biases");
  return names;
}

Bindings Classifier::parameters() const {
  Bindings b;
  if (conv_) {
    b.emplace("conv.kernel", conv_->weights);
    b.emplace("conv.bias", conv_->biases);
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    b.emplace("layer" + std::to_string(i) + ".weights", layers_[i].weights);
    b.emplace("layer" + std::to_string(i) + ".biases", layers_[i].biases);
  }
  b.emplace("head.weights", head_.weights);
  b.emplace("head.biases", head_.biases);
  return b;
}

void Classifier::set_parameters(const Bindings& params) {
  const auto take = [&](const std::string& name, Tensor& into) {
    auto it = params.find(name);
    if (it == params.end()) throw ModelError("missing parameter '" + name + "'");
    expect_shape(it->second, into.shape, name);
    into = it->second;
  };
  if (conv_) {
    take("conv.kernel", conv_->weights);
    take("conv.bias", conv_->biases);
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    take("layer" + std::to_string(i) + ".weights", layers_[i].weights);
    take("layer" + std::to_string(i) + ".biases", layers_[i].biases);
  }
  take("head.weights", head_.weights);
  take("head.biases", head_.biases);
}

std::size_t Classifier::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : parameters()) n += t.size();
  return n;
}

ParameterNodes Classifier::add_parameter_leaves(Graph& graph) const {
  ParameterNodes p;
  const auto params = parameters();
  if (conv_) {
    p.conv_kernel = graph.leaf("conv.kernel");
    p.conv_bias = graph.leaf("conv.bias");
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    p.weights.push_back(graph.leaf("layer" + std::to_string(i) + ".weights"));
    p.biases.push_back(graph.leaf("layer" + std::to_string(i) + ".biases"));
  }
  p.head_weights = graph.leaf("head.weights");
  p.head_biases = graph.leaf("head.biases");
  graph.bind_all(params);
  return p;
}

NodeId Classifier::build_features(Graph& graph, const ParameterNodes& params, NodeId x) const {
  NodeId v = x;
  if (conv_) {
    v = graph.conv2d(v, *params.conv_kernel, *params.conv_bias, spec_.conv->geometry);
    v = activation_node(graph, spec_.conv->activation, v);
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    v = graph.affine(v, params.weights[i], params.biases[i]);
    v = activation_node(graph, spec_.activations[i], v);
  }
  return v;
}

NodeId Classifier::build_logits(Graph& graph, const ParameterNodes& params, NodeId x) const {
  return graph.affine(build_features(graph, params, x), params.head_weights, params.head_biases);
}

InputGradient::InputGradient(const Classifier& classifier) : classifier_(&classifier) {
  const auto params = classifier.add_parameter_leaves(graph_);
  const auto x = graph_.leaf("x");
  logits_ = classifier.build_logits(graph_, params, x);
}

const std::vector<double>& InputGradient::evaluate(std::span<const double> x) {
  if (x.size() != classifier_->input_width()) throw ModelError("input width mismatch");
  graph_.bind("x", Tensor::vector({x.begin(), x.end()}));
  last_logits_ = graph_.forward(logits_).data;
  evaluated_ = true;
  return last_logits_;
}

std::vector<double> InputGradient::gradient(std::span<const double> seed) const {
  if (!evaluated_) throw ModelError("gradient requested before evaluate");
  if (seed.size() != classifier_->num_classes()) throw ModelError("seed width mismatch");
  auto grads = graph_.backward(logits_, Tensor::vector({seed.begin(), seed.end()}), {"x"});
  return std::move(grads.at("x").data);
}

std::vector<double> InputGradient::difference_gradient(std::size_t a, std::size_t b) const {
  std::vector<double> seed(classifier_->num_classes(), 0.0);
  seed[a] += 1.0;
  seed[b] -= 1.0;
  return gradient(seed);
}

}  // namespace margin_audit
