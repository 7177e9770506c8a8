#include "margin_audit/pseudomargin.hpp"

#include <cmath>

#include "margin_audit/checkpoint.hpp"
#include "margin_audit/rng.hpp"

namespace margin_audit {

namespace {

RegressionSet gather(const Classifier& c, const Dataset& samples, const std::vector<double>& targets,
                     const std::vector<std::size_t>& ids) {
  RegressionSet s;
  const auto m = c.feature_width();
  s.features = Tensor::zeros({ids.size(), m});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const auto z = c.features(samples.input(ids[r]));
    std::copy(z.begin(), z.end(), s.features.data.begin() + static_cast<std::ptrdiff_t>(r * m));
    s.targets.push_back(targets[ids[r]]);
  }
  s.ids = ids;
  return s;
}

std::string layer_name(std::size_t i, const char* what) {
  return "pm.layer" + std::to_string(i) + "." + what;
}

}  // namespace

RegressionSplit build_regression_set(const Classifier& classifier, const Dataset& samples,
                                     const std::vector<MarginRecord>& records, double val_fraction,
                                     std::uint64_t seed) {
  if (records.size() != samples.size()) throw PseudoMarginError("one margin record per sample required");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw PseudoMarginError("validation fraction must lie in (0, 1)");
  }
  const auto n = samples.size();
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction));
  if (n_val == 0 || n_val >= n) throw PseudoMarginError("validation split would be empty or total");
  auto order = Rng(seed).permutation(n);
  std::vector<std::size_t> val_ids(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_ids(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

  std::vector<double> finite;
  for (auto i : train_ids) {
    if (std::isfinite(records[i].d_in_hat)) finite.push_back(records[i].d_in_hat);
  }
  if (finite.empty()) throw PseudoMarginError("every training margin is the no-adversary sentinel");
  RegressionSplit split;
  split.normalizer = quantile(finite, 0.99);
  if (!(split.normalizer > 0.0)) throw PseudoMarginError("margin normalizer must be positive");
  std::vector<double> targets(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = records[i].d_in_hat;
    targets[i] = std::isfinite(d) ? std::min(d / split.normalizer, 1.0) : 1.0;
  }
  split.train = gather(classifier, samples, targets, train_ids);
  split.val = gather(classifier, samples, targets, val_ids);
  return split;
}

PseudoMarginNet PseudoMarginNet::initialize(std::size_t input_width,
                                            const std::vector<std::size_t>& hidden,
                                            std::uint64_t seed) {
  if (input_width == 0) throw PseudoMarginError("pseudo-margin input width must be positive");
  PseudoMarginNet net;
  net.input_width_ = input_width;
  Rng rng(seed);
  std::size_t width = input_width;
  auto widths = hidden;
  widths.push_back(1);
  for (auto h : widths) {
    if (h == 0) throw PseudoMarginError("pseudo-margin layer widths must be positive");
    const double bound = std::sqrt(6.0 / static_cast<double>(width));
    auto w = Tensor::zeros({h, width});
    for (auto& v : w.data) v = rng.uniform(-bound, bound);
    net.layers_.push_back({std::move(w), Tensor::zeros({h})});
    width = h;
  }
  return net;
}

double PseudoMarginNet::score(std::span<const double> features) const {
  if (features.size() != input_width_) {
    throw PseudoMarginError("feature width " + std::to_string(features.size()) +
                            " does not match pseudo-margin input " + std::to_string(input_width_));
  }
  std::vector<double> v(features.begin(), features.end());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    const auto rows = layer.weights.shape[0];
    const auto cols = layer.weights.shape[1];
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < cols; ++c) s += layer.weights.data[r * cols + c] * v[c];
      s += layer.biases.data[r];
      out[r] = l + 1 < layers_.size() ? std::max(s, 0.0) : s;
    }
    v = std::move(out);
  }
  return 1.0 / (1.0 + std::exp(-v[0]));
}

Bindings PseudoMarginNet::parameters() const {
  Bindings b;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    b[layer_name(i, "weights")] = layers_[i].weights;
    b[layer_name(i, "biases")] = layers_[i].biases;
  }
  return b;
}

void PseudoMarginNet::set_parameters(const Bindings& params) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& w = params.at(layer_name(i, "weights"));
    const auto& b = params.at(layer_name(i, "biases"));
    if (w.shape != layers_[i].weights.shape || b.shape != layers_[i].biases.shape) {
      throw PseudoMarginError("pseudo-margin parameter shape mismatch in layer " + std::to_string(i));
    }
    layers_[i] = {w, b};
  }
}

NodeId PseudoMarginNet::build(Graph& graph, NodeId x) const {
  NodeId v = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto w = graph.leaf(layer_name(i, "weights"));
    const auto b = graph.leaf(layer_name(i, "biases"));
    v = graph.affine(v, w, b);
    v = i + 1 < layers_.size() ? graph.relu(v) : graph.sigmoid(v);
  }
  graph.bind_all(parameters());
  return v;
}

double regression_mse(const PseudoMarginNet& net, const RegressionSet& set) {
  if (set.size() == 0) throw PseudoMarginError("mean squared error of an empty set");
  double s = 0.0;
  for (std::size_t r = 0; r < set.size(); ++r) {
    const double e = net.score(set.features.row(r)) - set.targets[r];
    s += e * e;
  }
  return s / static_cast<double>(set.size());
}

nlohmann::json PseudoHistory::to_json() const {
  nlohmann::json j;
  j["best_epoch"] = best_epoch;
  if (!flag.empty()) j["flag"] = flag;
  auto& e = j["epochs"] = nlohmann::json::array();
  for (const auto& r : epochs) {
    e.push_back({{"epoch", r.epoch}, {"train_mse", r.train_mse}, {"val_mse", r.val_mse}});
  }
  return j;
}

PseudoTrainResult train_pseudomargin(const RegressionSplit& split, const PseudoMarginConfig& config,
                                     std::uint64_t seed) {
  if (split.train.size() == 0 || split.val.size() == 0) {
    throw PseudoMarginError("pseudo-margin training needs nonempty train and validation splits");
  }
  const auto m = split.train.features.cols();
  PseudoTrainResult result;
  result.net = PseudoMarginNet::initialize(m, config.hidden, seed);
  result.net.set_normalizer(split.normalizer);
  auto& history = result.history;
  history.epochs.push_back({0, regression_mse(result.net, split.train), regression_mse(result.net, split.val)});
  if (config.optimizer.epochs == 0) {
    history.flag = "zero epochs requested; returning the initialized net";
    return result;
  }

  Graph graph;
  const auto x = graph.leaf("x");
  const auto y = graph.leaf("y");
  const auto out = result.net.build(graph, x);
  const auto loss = graph.mse(out, y);
  auto params = result.net.parameters();
  std::vector<std::string> names;
  for (const auto& [name, t] : params) names.push_back(name);
  Optimizer optimizer(config.optimizer);
  Rng rng = Rng::derive(seed, 1);
  auto best = params;
  double best_val = history.epochs[0].val_mse;
  const auto n = split.train.size();
  const auto bs = config.optimizer.batch_size;

  for (std::size_t epoch = 1; epoch <= config.optimizer.epochs; ++epoch) {
    const auto order = rng.permutation(n);
    for (std::size_t start = 0; start < n; start += bs) {
      const auto end = std::min(n, start + bs);
      auto xb = Tensor::zeros({end - start, m});
      auto yb = Tensor::zeros({end - start, 1});
      for (std::size_t r = start; r < end; ++r) {
        const auto row = split.train.features.row(order[r]);
        std::copy(row.begin(), row.end(), xb.data.begin() + static_cast<std::ptrdiff_t>((r - start) * m));
        yb.data[r - start] = split.train.targets[order[r]];
      }
      graph.bind("x", std::move(xb));
      graph.bind("y", std::move(yb));
      try {
        graph.forward(loss);
        const auto grads = graph.backward(loss, Tensor::scalar(1.0), names);
        optimizer.step(params, grads, epoch - 1);
      } catch (const NumericsError& e) {
        throw PseudoMarginError("pseudo-margin training diverged at epoch " + std::to_string(epoch) +
                                ": " + e.what());
      }
      graph.bind_all(params);
    }
    result.net.set_parameters(params);
    PseudoEpoch rec{epoch, regression_mse(result.net, split.train), regression_mse(result.net, split.val)};
    if (!std::isfinite(rec.train_mse) || !std::isfinite(rec.val_mse)) {
      throw PseudoMarginError("pseudo-margin training diverged at epoch " + std::to_string(epoch));
    }
    history.epochs.push_back(rec);
    if (rec.val_mse < best_val) {
      best_val = rec.val_mse;
      best = params;
      history.best_epoch = epoch;
    } else if (config.patience > 0 && epoch - history.best_epoch >= config.patience) {
      break;
    }
  }
  result.net.set_parameters(best);
  return result;
}

std::vector<double> pseudo_margin_scores(const PseudoMarginNet& net, const Classifier& classifier,
                                         const Dataset& samples) {
  std::vector<double> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) out[i] = net.score(classifier.features(samples.input(i)));
  return out;
}

void save_pseudomargin(const PseudoMarginNet& net, const std::filesystem::path& path,
                       const Provenance& provenance) {
  CheckpointContainer c;
  c.header["kind"] = "pseudomargin";
  c.header["input_width"] = net.input_width();
  auto widths = nlohmann::json::array();
  for (const auto& l : net.layers()) widths.push_back(l.weights.shape[0]);
  c.header["widths"] = widths;
  c.header["normalizer"] = net.normalizer();
  c.header["config_hash"] = provenance.config_hash;
  c.header["master_seed"] = provenance.master_seed;
  for (const auto& l : net.layers()) {
    c.payload.insert(c.payload.end(), l.weights.data.begin(), l.weights.data.end());
    c.payload.insert(c.payload.end(), l.biases.data.begin(), l.biases.data.end());
  }
  write_container(path, c);
}

PseudoMarginNet load_pseudomargin(const std::filesystem::path& path) {
  const auto c = read_container(path);
  try {
    if (c.header.at("kind") != "pseudomargin") throw PseudoMarginError(path.string() + " is not a pseudo-margin net");
    const auto input = c.header.at("input_width").get<std::size_t>();
    auto widths = c.header.at("widths").get<std::vector<std::size_t>>();
    if (widths.empty() || widths.back() != 1) throw PseudoMarginError("pseudo-margin net must end in one unit");
    widths.pop_back();
    auto net = PseudoMarginNet::initialize(input, widths, 0);
    auto params = net.parameters();
    std::size_t pos = 0;
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
      for (const char* what : {"weights", "biases"}) {
        auto& t = params.at(layer_name(i, what));
        if (pos + t.data.size() > c.payload.size()) throw PseudoMarginError("pseudo-margin payload too short");
        std::copy(c.payload.begin() + static_cast<std::ptrdiff_t>(pos),
                  c.payload.begin() + static_cast<std::ptrdiff_t>(pos + t.data.size()), t.data.begin());
        pos += t.data.size();
      }
    }
    if (pos != c.payload.size()) throw PseudoMarginError("pseudo-margin payload has trailing values");
    net.set_parameters(params);
    net.set_normalizer(c.header.at("normalizer").get<double>());
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw PseudoMarginError(path.string() + ": malformed pseudo-margin header: " + e.what());
  }
}

}  // namespace margin_audit
