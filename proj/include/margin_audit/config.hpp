#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "margin_audit/attacks.hpp"
#include "margin_audit/model.hpp"
#include "margin_audit/optimizer.hpp"
#include "margin_audit/pseudomargin.hpp"
#include "margin_audit/training.hpp"

namespace margin_audit {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat "stage.key = value" lines; '#' starts a comment. Duplicate keys are errors.
std::map<std::string, std::string> parse_config_text(const std::string& text);

struct DataStage {
  std::string generator = "two_moons";  // two_moons | blobs | idx
  std::size_t n = 4000;
  double noise = 0.2;
  std::vector<std::array<double, 2>> centers;  // blobs
  double sigma = 0.5;
  std::filesystem::path images;  // idx
  std::filesystem::path labels;
  std::size_t max_items = 0;
  std::array<double, 3> split = {0.4, 0.1, 0.5};
};

struct ModelStage {
  std::vector<std::size_t> hidden = {32, 32};
  Activation activation = Activation::Relu;
  // Optional conv stage for image inputs: kernel 0 disables it.
  std::size_t conv_kernel = 0;
  std::size_t conv_channels = 4;
  std::size_t conv_stride = 1;
  std::size_t image_channels = 1;
  std::size_t image_height = 0;
  std::size_t image_width = 0;
};

struct TrainStage {
  std::string method = "at";  // standard | at | trades
  AdvTrainConfig adv;
  OptimizerConfig optimizer;
  std::vector<double> class_logit_scale;
};

struct AnalysisStage {
  double epsilon = 0.1;
  std::vector<double> epsilons = {0.025, 0.05, 0.075, 0.1, 0.125, 0.15, 0.2};
  std::size_t bins = 10;
  std::string population = "all";  // all | correct
  std::vector<double> alphas;      // empty selects 0.80..0.99
  std::size_t subset_size = 200;
  std::size_t subsets = 10;
  std::size_t pgd_steps = 20;
  std::size_t pgd_restarts = 1;
  bool pseudomargin = true;
};

struct PseudoStage {
  PseudoMarginConfig net;
  double val_fraction = 0.2;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "runs/experiment";
  DataStage data;
  ModelStage model;
  TrainStage train;
  MarginSearchConfig margins;
  AnalysisStage analysis;
  PseudoStage pseudo;

  // Validates every stage against its module's preconditions.
  void validate() const;
  FeatureExtractorSpec feature_spec(std::size_t input_width) const;
  std::vector<double> alpha_grid() const;
  // Sorted "key = value" lines of every setting that affects results.
  std::string canonical() const;
  // SHA-256 hex digest of canonical().
  std::string hash() const;
};

ExperimentConfig config_from_map(const std::map<std::string, std::string>& entries);
ExperimentConfig load_config(const std::filesystem::path& path);

std::string sha256_hex(const std::string& data);

}  // namespace margin_audit
