#include "margin_audit/optimizer.hpp"

#include <cmath>

namespace margin_audit {

std::string_view optimizer_name(OptimizerMethod m) {
  switch (m) {
    case OptimizerMethod::Sgd: return "sgd";
    case OptimizerMethod::SgdMomentum: return "sgd-momentum";
    case OptimizerMethod::Adam: return "adam";
  }
  return "?";
}

OptimizerMethod parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerMethod::Sgd;
  if (name == "sgd-momentum") return OptimizerMethod::SgdMomentum;
  if (name == "adam") return OptimizerMethod::Adam;
  throw OptimizerError("unknown optimizer '" + std::string(name) + "'");
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw OptimizerError("learning rate must be positive");
  }
  if (epochs < 1) throw OptimizerError("epochs must be at least 1");
  if (batch_size < 1) throw OptimizerError("batch size must be at least 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw OptimizerError("momentum must lie in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw OptimizerError("adam betas must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw OptimizerError("adam epsilon must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) {
    throw OptimizerError("decay factor must lie in (0, 1]");
  }
}

double OptimizerConfig::rate_at(std::size_t epoch) const {
  if (decay_every == 0) return learning_rate;
  return learning_rate * std::pow(decay_factor, static_cast<double>(epoch / decay_every));
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) { config_.validate(); }

void Optimizer::step(Bindings& params, const Gradients& grads, std::size_t epoch) {
  ++steps_;
  const double lr = config_.rate_at(epoch);
  for (auto& [name, p] : params) {
    const auto it = grads.find(name);
    if (it == grads.end()) continue;
    const auto& g = it->second.data;
    auto& w = p.data;
    switch (config_.method) {
      case OptimizerMethod::Sgd:
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
        break;
      case OptimizerMethod::SgdMomentum: {
        auto& v = first_.try_emplace(name, Tensor::zeros(p.shape)).first->second.data;
        for (std::size_t i = 0; i < w.size(); ++i) {
          v[i] = config_.momentum * v[i] + g[i];
          w[i] -= lr * v[i];
        }
        break;
      }
      case OptimizerMethod::Adam: {
        auto& m = first_.try_emplace(name, Tensor::zeros(p.shape)).first->second.data;
        auto& v = second_.try_emplace(name, Tensor::zeros(p.shape)).first->second.data;
        const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
        const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
        for (std::size_t i = 0; i < w.size(); ++i) {
          m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
          v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
          w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.adam_epsilon);
        }
        break;
      }
    }
  }
}

}  // namespace margin_audit
