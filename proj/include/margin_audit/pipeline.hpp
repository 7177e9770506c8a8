#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "margin_audit/config.hpp"
#include "margin_audit/provenance.hpp"

namespace margin_audit {

// A stage could not complete; the CLI maps it to exit status 1.
class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Stage names in execution order; each is also a CLI subcommand.
const std::vector<std::string>& stage_names();

struct PipelineOptions {
  std::size_t threads = 1;
  bool force = false;
  std::ostream* log = nullptr;
  // analyze/detect overrides; a stage run with overrides is never cached.
  std::optional<std::filesystem::path> margins_csv;
  std::optional<double> epsilon;
};

// Artifact layout under the output directory:
//   data/{train,val,test}.csv          gen-data
//   model.ckpt, reports/training.json  train
//   margins.csv, adversaries.bin       estimate-margins
//   reports/{consistency,separation,auroc_vs_eps,equidistance,isometry,bias}.json   analyze
//   reports/{detection,adversarial_audit}.json                                      detect
//   reports/robust_accuracy.json                                                    estimate-ra
//   margins_train.csv, pseudomargin.ckpt, reports/pseudomargin.json                 learn-pseudomargin
//   figures/*.svg, reports/summary.json                                             report
// Completed stages leave .stages/<stage>.done holding the config hash.
class Pipeline {
 public:
  Pipeline(ExperimentConfig config, PipelineOptions options);

  const ExperimentConfig& config() const { return config_; }
  const std::filesystem::path& out() const { return config_.out; }
  Provenance provenance() const { return provenance_; }

  // Runs one stage unless its marker matches the config hash. Returns false when cached.
  bool run_stage(const std::string& stage);
  void run_all();

  // Master-seed derived stage seeds.
  std::uint64_t seed_for(const std::string& purpose) const;

 private:
  void gen_data();
  void train();
  void estimate_margins();
  void analyze();
  void detect();
  void estimate_ra();
  void learn_pseudomargin();
  void report();

  std::filesystem::path path(const std::string& rel) const { return config_.out / rel; }
  // Throws StageError naming `producer` when the artifact is absent.
  std::filesystem::path require(const std::string& rel, const std::string& producer) const;
  std::filesystem::path margins_path() const;
  double epsilon() const;
  void log(const std::string& line) const;

  ExperimentConfig config_;
  PipelineOptions options_;
  Provenance provenance_;
};

}  // namespace margin_audit
