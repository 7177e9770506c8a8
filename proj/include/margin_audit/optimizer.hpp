#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>

#include "margin_audit/graph.hpp"

namespace margin_audit {

class OptimizerError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class OptimizerMethod { Sgd, SgdMomentum, Adam };

std::string_view optimizer_name(OptimizerMethod m);
OptimizerMethod parse_optimizer(std::string_view name);

struct OptimizerConfig {
  OptimizerMethod method = OptimizerMethod::Adam;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  // Step decay: the rate is multiplied by decay_factor every decay_every epochs (0 disables).
  double decay_factor = 1.0;
  std::size_t decay_every = 0;

  void validate() const;
  double rate_at(std::size_t epoch) const;
};

// First-order update rule over named parameter tensors.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  void step(Bindings& params, const Gradients& grads, std::size_t epoch);

 private:
  OptimizerConfig config_;
  std::map<std::string, Tensor, std::less<>> first_;
  std::map<std::string, Tensor, std::less<>> second_;
  std::size_t steps_ = 0;
};

}  // namespace margin_audit
