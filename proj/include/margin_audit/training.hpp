#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "margin_audit/dataset.hpp"
#include "margin_audit/model.hpp"
#include "margin_audit/norm.hpp"
#include "margin_audit/optimizer.hpp"

namespace margin_audit {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class AdvMethod { StandardAt, Trades };

std::string_view adv_method_name(AdvMethod m);
AdvMethod parse_adv_method(std::string_view name);

struct AdvTrainConfig {
  double epsilon = 0.1;
  Norm norm = Norm::Linf;
  std::size_t steps = 10;
  double step_size = 0.0;  // 0 selects 2.5·ε/steps
  AdvMethod method = AdvMethod::StandardAt;
  double trades_beta = 6.0;

  // ε = 0 is accepted and reduces to standard training.
  void validate() const;
  double effective_step_size() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  // Accuracy on the inputs the model was trained on (perturbed for adversarial training).
  double accuracy = 0.0;
  std::optional<double> probe_robust_accuracy;
};

struct TrainingHistory {
  std::string method;
  std::vector<EpochRecord> epochs;
  double final_train_accuracy = 0.0;

  nlohmann::json to_json() const;
};

struct TrainOptions {
  // Held-out samples attacked after every adversarial epoch.
  const Dataset* probe = nullptr;
  std::size_t probe_pgd_steps = 20;
  // Per-class logit temperature: inside the loss only, the logits of a sample
  // with label y are multiplied by class_logit_scale[y]. Decisions are
  // unaffected but logit margins end up on different scales per class.
  std::vector<double> class_logit_scale;
};

struct TrainResult {
  Classifier classifier;
  TrainingHistory history;
};

TrainResult train_standard(const FeatureExtractorSpec& spec, const Dataset& dataset,
                           const OptimizerConfig& optimizer, const TrainOptions& options = {});

// Minimizes the loss on PGD-perturbed inputs (cross-entropy inner objective,
// random start in the ball, projection onto ball ∩ feature bounds) or the
// TRADES objective CE(f(x), y) + β·KL(p(x) ‖ p(x_adv)).
TrainResult train_adversarial(const FeatureExtractorSpec& spec, const Dataset& dataset,
                              const AdvTrainConfig& adv, const OptimizerConfig& optimizer,
                              const TrainOptions& options = {});

// Mean cross-entropy over rows of x ([B, n]).
double cross_entropy_loss(const Classifier& classifier, const Tensor& x,
                          const std::vector<std::size_t>& labels);
double trades_loss(const Classifier& classifier, const Tensor& x, const Tensor& x_adv,
                   const std::vector<std::size_t>& labels, double beta);

}  // namespace margin_audit
