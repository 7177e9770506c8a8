#include "margin_audit/training.hpp"

#include <cmath>

#include "margin_audit/attacks.hpp"
#include "margin_audit/rng.hpp"

namespace margin_audit {

std::string_view adv_method_name(AdvMethod m) {
  return m == AdvMethod::Trades ? "trades" : "standard-at";
}

AdvMethod parse_adv_method(std::string_view name) {
  if (name == "standard-at" || name == "at") return AdvMethod::StandardAt;
  if (name == "trades") return AdvMethod::Trades;
  throw TrainingError("unknown adversarial training method '" + std::string(name) + "'");
}

void AdvTrainConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
    throw TrainingError("training epsilon must be non-negative");
  }
  if (steps < 1) throw TrainingError("adversarial training needs at least one attack step");
  if (!(step_size >= 0.0)) throw TrainingError("attack step size must be non-negative");
  if (method == AdvMethod::Trades && !(trades_beta > 0.0)) {
    throw TrainingError("trades beta must be positive");
  }
}

double AdvTrainConfig::effective_step_size() const {
  return step_size > 0.0 ? step_size : 2.5 * epsilon / static_cast<double>(steps);
}

nlohmann::json TrainingHistory::to_json() const {
  nlohmann::json j;
  j["method"] = method;
  j["final_train_accuracy"] = final_train_accuracy;
  auto& list = j["epochs"] = nlohmann::json::array();
  for (const auto& e : epochs) {
    nlohmann::json r{{"epoch", e.epoch}, {"loss", e.loss}, {"accuracy", e.accuracy}};
    if (e.probe_robust_accuracy) r["probe_robust_accuracy"] = *e.probe_robust_accuracy;
    list.push_back(std::move(r));
  }
  return j;
}

namespace {

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t k) {
  auto t = Tensor::zeros({labels.size(), k});
  for (std::size_t r = 0; r < labels.size(); ++r) t.data[r * k + labels[r]] = 1.0;
  return t;
}

// Training graph: clean (or perturbed) branch on leaf "x", optional TRADES
// branch on leaf "x_adv", both sharing the parameter leaves.
struct LossGraph {
  Graph graph;
  NodeId logits = 0;
  NodeId ce = 0;
  NodeId kl = 0;
  NodeId loss = 0;
  bool trades = false;

  LossGraph(const Classifier& c, const std::vector<double>& class_scale, bool with_trades,
            double beta)
      : trades(with_trades) {
    const auto params = c.add_parameter_leaves(graph);
    const auto x = graph.leaf("x");
    const auto y = graph.leaf("y");
    const auto k = c.num_classes();
    std::optional<NodeId> row_scale;
    if (!class_scale.empty()) {
      if (class_scale.size() != k) throw TrainingError("class_logit_scale needs one factor per class");
      for (double s : class_scale) {
        if (!(s > 0.0)) throw TrainingError("class logit scales must be positive");
      }
      row_scale = graph.leaf("loss.scale");
    }
    const auto scaled = [&](NodeId z) { return row_scale ? graph.mul(z, *row_scale) : z; };
    logits = c.build_logits(graph, params, x);
    const auto clean = scaled(logits);
    ce = graph.softmax_cross_entropy(clean, y);
    loss = ce;
    if (trades) {
      const auto xa = graph.leaf("x_adv");
      const auto adv = scaled(c.build_logits(graph, params, xa));
      const auto lc = graph.log_softmax(clean);
      const auto la = graph.log_softmax(adv);
      kl = graph.mean_row_sum(graph.mul(graph.exp(lc), graph.sub(lc, la)));
      loss = graph.add(ce, graph.scale(kl, beta));
    }
  }
};

class Trainer {
 public:
  Trainer(const FeatureExtractorSpec& spec, const Dataset& data, const OptimizerConfig& opt,
          const TrainOptions& options, std::optional<AdvTrainConfig> adv)
      : data_(data), opt_(opt), options_(options), adv_(adv) {
    opt_.validate();
    data_.validate();
    if (data_.size() == 0) throw TrainingError("training set is empty");
    if (spec.input_width != data_.n_features) {
      throw TrainingError("model input width " + std::to_string(spec.input_width) +
                          " does not match dataset width " + std::to_string(data_.n_features));
    }
    if (adv_) {
      adv_->validate();
      if (adv_->epsilon == 0.0) adv_.reset();
    }
    classifier_ = Classifier::initialize(spec, data_.num_classes, opt_.seed);
  }

  TrainResult run(std::string method) {
    const bool trades = adv_ && adv_->method == AdvMethod::Trades;
    LossGraph lg(classifier_, options_.class_logit_scale, trades, trades ? adv_->trades_beta : 0.0);
    auto params = classifier_.parameters();
    std::vector<std::string> names;
    for (const auto& [name, t] : params) names.push_back(name);
    Optimizer optimizer(opt_);
    Rng shuffle_rng = Rng::derive(opt_.seed, 0x5348554646ULL);
    Rng attack_rng = Rng::derive(opt_.seed, 0x41545441434bULL);

    TrainingHistory history;
    history.method = std::move(method);
    const auto n = data_.size();
    const auto w = data_.n_features;
    const auto k = data_.num_classes;
    for (std::size_t epoch = 0; epoch < opt_.epochs; ++epoch) {
      const auto order = shuffle_rng.permutation(n);
      double loss_sum = 0.0;
      std::size_t correct = 0;
      for (std::size_t start = 0; start < n; start += opt_.batch_size) {
        const auto end = std::min(n, start + opt_.batch_size);
        const auto b = end - start;
        auto x = Tensor::zeros({b, w});
        std::vector<std::size_t> labels(b);
        for (std::size_t r = 0; r < b; ++r) {
          const auto in = data_.input(order[start + r]);
          std::copy(in.begin(), in.end(), x.data.begin() + static_cast<std::ptrdiff_t>(r * w));
          labels[r] = data_.labels[order[start + r]];
        }
        const auto y = one_hot(labels, k);
        lg.graph.bind("y", y);
        if (!options_.class_logit_scale.empty()) {
          auto scale = Tensor::zeros({b, k});
          for (std::size_t r = 0; r < b; ++r) {
            std::fill_n(scale.data.begin() + static_cast<std::ptrdiff_t>(r * k), k,
                        options_.class_logit_scale[labels[r]]);
          }
          lg.graph.bind("loss.scale", std::move(scale));
        }
        try {
          if (adv_) {
            auto xa = inner_maximization(lg, x, attack_rng);
            if (trades) {
              lg.graph.bind("x", x);
              lg.graph.bind("x_adv", std::move(xa));
            } else {
              lg.graph.bind("x", std::move(xa));
            }
          } else {
            lg.graph.bind("x", x);
          }
          const double loss = lg.graph.forward(lg.loss).data[0];
          if (!std::isfinite(loss)) {
            throw TrainingError("training diverged at epoch " + std::to_string(epoch + 1) +
                                ": loss is not finite");
          }
          const auto grads = lg.graph.backward(lg.loss, Tensor::scalar(1.0), names);
          for (const auto& [name, g] : grads) {
            if (!g.all_finite()) {
              throw TrainingError("training diverged at epoch " + std::to_string(epoch + 1) +
                                  ": gradient of " + name + " is not finite");
            }
          }
          const auto& logits = lg.graph.value(lg.logits);
          for (std::size_t r = 0; r < b; ++r) {
            correct += predict_from_logits(logits.row(r)) == labels[r];
          }
          loss_sum += loss * static_cast<double>(b);
          optimizer.step(params, grads, epoch);
          lg.graph.bind_all(params);
        } catch (const NumericsError& e) {
          throw TrainingError("training diverged at epoch " + std::to_string(epoch + 1) + ": " +
                              e.what());
        }
      }
      EpochRecord rec;
      rec.epoch = epoch + 1;
      rec.loss = loss_sum / static_cast<double>(n);
      rec.accuracy = static_cast<double>(correct) / static_cast<double>(n);
      if (!std::isfinite(rec.loss)) {
        throw TrainingError("training diverged at epoch " + std::to_string(epoch + 1));
      }
      if (adv_ && options_.probe != nullptr) {
        classifier_.set_parameters(params);
        PgdConfig pc;
        pc.epsilon = adv_->epsilon;
        pc.norm = adv_->norm;
        pc.steps = options_.probe_pgd_steps;
        pc.seed = mix_seed(opt_.seed, epoch);
        rec.probe_robust_accuracy = robust_accuracy(classifier_, *options_.probe, pc).robust_accuracy;
      }
      history.epochs.push_back(rec);
    }
    classifier_.set_parameters(params);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += classifier_.predict(data_.input(i)) == data_.labels[i];
    history.final_train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    auto& meta = classifier_.metadata();
    meta.seed = opt_.seed;
    meta.training = history.method;
    meta.train_epsilon = adv_ ? adv_->epsilon : 0.0;
    return {std::move(classifier_), std::move(history)};
  }

 private:
  Tensor inner_maximization(LossGraph& lg, const Tensor& x, Rng& rng) {
    const auto& cfg = *adv_;
    const auto b = x.rows();
    const auto w = x.cols();
    const double alpha = cfg.effective_step_size();
    const bool trades = lg.trades;
    const std::string leaf = trades ? "x_adv" : "x";
    const NodeId objective = trades ? lg.kl : lg.ce;
    if (trades) lg.graph.bind("x", x);

    Tensor cur = x;
    std::vector<double> delta(w);
    const auto settle = [&](std::size_t r) {
      auto row = cur.row(r);
      const auto orig = x.row(r);
      for (std::size_t i = 0; i < w; ++i) delta[i] = row[i] - orig[i];
      project_into_ball(delta, cfg.epsilon, cfg.norm);
      for (std::size_t i = 0; i < w; ++i) row[i] = orig[i] + delta[i];
      clip_to_bounds(row, data_.bounds);
    };
    for (std::size_t r = 0; r < b; ++r) {
      auto row = cur.row(r);
      if (cfg.norm == Norm::Linf) {
        for (auto& v : row) v += rng.uniform(-cfg.epsilon, cfg.epsilon);
      } else {
        double s = 0.0;
        for (std::size_t i = 0; i < w; ++i) {
          delta[i] = rng.normal();
          s += delta[i] * delta[i];
        }
        const double radius = cfg.epsilon * std::pow(rng.uniform(), 1.0 / static_cast<double>(w));
        s = std::sqrt(s);
        for (std::size_t i = 0; i < w; ++i) row[i] += s > 0.0 ? delta[i] * radius / s : 0.0;
      }
      settle(r);
    }
    for (std::size_t step = 0; step < cfg.steps; ++step) {
      lg.graph.bind(leaf, cur);
      lg.graph.forward(objective);
      const auto grads = lg.graph.backward(objective, Tensor::scalar(1.0), {leaf});
      const auto& g = grads.at(leaf);
      for (std::size_t r = 0; r < b; ++r) {
        const auto u = steepest_direction(g.row(r), cfg.norm);
        auto row = cur.row(r);
        for (std::size_t i = 0; i < w; ++i) row[i] += alpha * u[i];
        settle(r);
      }
    }
    for (std::size_t r = 0; r < b; ++r) {
      if (distance(cur.row(r), x.row(r), cfg.norm) > cfg.epsilon * (1.0 + 1e-9) ||
          !within_bounds(cur.row(r), data_.bounds)) {
        throw TrainingError("adversarial example left the ε-ball or the feature bounds");
      }
    }
    return cur;
  }

  const Dataset& data_;
  OptimizerConfig opt_;
  TrainOptions options_;
  std::optional<AdvTrainConfig> adv_;
  Classifier classifier_;
};

}  // namespace

TrainResult train_standard(const FeatureExtractorSpec& spec, const Dataset& dataset,
                           const OptimizerConfig& optimizer, const TrainOptions& options) {
  return Trainer(spec, dataset, optimizer, options, std::nullopt).run("standard");
}

TrainResult train_adversarial(const FeatureExtractorSpec& spec, const Dataset& dataset,
                              const AdvTrainConfig& adv, const OptimizerConfig& optimizer,
                              const TrainOptions& options) {
  Trainer trainer(spec, dataset, optimizer, options, adv);
  return trainer.run(adv.epsilon == 0.0 ? "standard" : std::string(adv_method_name(adv.method)));
}

double cross_entropy_loss(const Classifier& classifier, const Tensor& x,
                          const std::vector<std::size_t>& labels) {
  LossGraph lg(classifier, {}, false, 0.0);
  lg.graph.bind("x", x);
  lg.graph.bind("y", one_hot(labels, classifier.num_classes()));
  return lg.graph.forward(lg.loss).data[0];
}

double trades_loss(const Classifier& classifier, const Tensor& x, const Tensor& x_adv,
                   const std::vector<std::size_t>& labels, double beta) {
  LossGraph lg(classifier, {}, true, beta);
  lg.graph.bind("x", x);
  lg.graph.bind("x_adv", x_adv);
  lg.graph.bind("y", one_hot(labels, classifier.num_classes()));
  return lg.graph.forward(lg.loss).data[0];
}

}  // namespace margin_audit
