#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "margin_audit/config.hpp"
#include "margin_audit/pipeline.hpp"

using namespace margin_audit;

namespace {

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::size_t threads = 1;
  bool force = false;
  std::optional<std::string> margins;
  std::optional<double> epsilon;
};

std::size_t default_threads() {
  const char* env = std::getenv("MARGIN_AUDIT_THREADS");
  if (!env || !*env) return 1;
  try {
    const auto n = std::stoul(env);
    return n > 0 ? n : 1;
  } catch (const std::exception&) {
    return 1;
  }
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--seed", args.seed, "Master seed (overrides the config)");
  cmd->add_option("--out", args.out, "Output directory (overrides the config)");
  cmd->add_option("--threads", args.threads, "Worker threads for margin estimation and PGD")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--force", args.force, "Rerun stages even when cached");
}

int execute(const CommonArgs& args, const std::vector<std::string>& stages) {
  ExperimentConfig config;
  try {
    if (!args.config.empty()) config = load_config(args.config);
    if (args.seed) config.seed = *args.seed;
    if (args.out) config.out = *args.out;
    config.validate();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  PipelineOptions options;
  options.threads = args.threads;
  options.force = args.force;
  options.log = &std::cerr;
  if (args.margins) options.margins_csv = *args.margins;
  options.epsilon = args.epsilon;
  if (args.epsilon && !(*args.epsilon > 0.0)) {
    std::cerr << "--epsilon must be positive\n";
    return 2;
  }
  try {
    Pipeline pipeline(config, options);
    std::cerr << "config hash " << pipeline.provenance().config_hash << ", output " << pipeline.out().string()
              << "\n";
    for (const auto& s : stages) pipeline.run_stage(s);
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Margin-consistency audit toolkit"};
  app.require_subcommand(1);

  CommonArgs args;
  args.threads = default_threads();

  auto* run = app.add_subcommand("run", "Run every stage of an experiment config");
  run->add_option("config", args.config, "Experiment config file")->required();
  add_common(run, args);

  const std::map<std::string, std::string> descriptions = {
      {"gen-data", "Generate or load the dataset and write the train/val/test split"},
      {"train", "Train the classifier and write model.ckpt"},
      {"estimate-margins", "Estimate per-sample margins on the test split"},
      {"analyze", "Margin consistency, separation, AUROC sweep, equidistance and bias reports"},
      {"detect", "Detection metrics for the logit margin and the adversarial audit"},
      {"estimate-ra", "PGD robust accuracy, sanity ratio and subset-based estimation"},
      {"learn-pseudomargin", "Train the learned pseudo-margin and compare rank correlations"},
      {"report", "Figures and the summary report"},
  };
  std::vector<CLI::App*> stage_cmds;
  for (const auto& name : stage_names()) {
    auto* cmd = app.add_subcommand(name, descriptions.at(name));
    cmd->add_option("--config", args.config, "Experiment config file");
    add_common(cmd, args);
    if (name == "analyze" || name == "detect") {
      cmd->add_option("--margins", args.margins, "Margin table to analyze instead of the stage output");
      cmd->add_option("--epsilon", args.epsilon, "Robustness threshold (overrides analysis.epsilon)");
    }
    stage_cmds.push_back(cmd);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (run->parsed()) return execute(args, stage_names());
  for (auto* cmd : stage_cmds) {
    if (cmd->parsed()) return execute(args, {cmd->get_name()});
  }
  return 2;
}
