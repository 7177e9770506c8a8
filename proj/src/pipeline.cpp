#include "margin_audit/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>

#include "margin_audit/analysis.hpp"
#include "margin_audit/attacks.hpp"
#include "margin_audit/checkpoint.hpp"
#include "margin_audit/dataset.hpp"
#include "margin_audit/idx.hpp"
#include "margin_audit/margin_table.hpp"
#include "margin_audit/margins.hpp"
#include "margin_audit/pseudomargin.hpp"
#include "margin_audit/rng.hpp"
#include "margin_audit/svg.hpp"
#include "margin_audit/training.hpp"

namespace margin_audit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::map<std::string, std::uint64_t>& seed_offsets() {
  static const std::map<std::string, std::uint64_t> offsets = {
      {"data", 1},    {"split", 2},         {"train", 3},  {"regression", 4}, {"margins", 5},
      {"margins_train", 6}, {"pseudo", 7}, {"pgd", 9}, {"subsets", 100},
  };
  return offsets;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw StageError("cannot write " + path.string());
  f << text;
  if (!f) throw StageError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return "";
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_adversaries(const fs::path& path, const std::vector<std::vector<double>>& adversaries,
                       std::size_t width, const Provenance& provenance) {
  CheckpointContainer c;
  c.header["kind"] = "adversaries";
  c.header["count"] = adversaries.size();
  c.header["width"] = width;
  c.header["config_hash"] = provenance.config_hash;
  c.header["master_seed"] = provenance.master_seed;
  std::vector<bool> found;
  for (const auto& a : adversaries) {
    found.push_back(!a.empty());
    if (a.empty()) {
      c.payload.insert(c.payload.end(), width, 0.0);
    } else {
      c.payload.insert(c.payload.end(), a.begin(), a.end());
    }
  }
  c.header["found"] = found;
  write_container(path, c);
}

std::vector<std::vector<double>> read_adversaries(const fs::path& path) {
  const auto c = read_container(path);
  if (c.header.value("kind", "") != "adversaries") throw StageError(path.string() + " is not an adversary file");
  const std::size_t n = c.header.at("count");
  const std::size_t w = c.header.at("width");
  const auto found = c.header.at("found").get<std::vector<bool>>();
  if (found.size() != n || c.payload.size() != n * w) throw StageError(path.string() + ": inconsistent adversary file");
  std::vector<std::vector<double>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (found[i]) out[i].assign(c.payload.begin() + i * w, c.payload.begin() + (i + 1) * w);
  }
  return out;
}

json kendall_json(const KendallResult& k) {
  return {{"tau_b", k.tau_b},         {"tau_a", k.tau_a},           {"n_used", k.n_used},
          {"n_excluded", k.n_excluded}, {"concordant", k.concordant}, {"discordant", k.discordant}};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"gen-data", "train", "estimate-margins", "analyze",
                                                 "detect", "estimate-ra", "learn-pseudomargin", "report"};
  return names;
}

Pipeline::Pipeline(ExperimentConfig config, PipelineOptions options)
    : config_(std::move(config)), options_(std::move(options)) {
  config_.validate();
  if (options_.threads == 0) options_.threads = 1;
  provenance_.config_hash = config_.hash();
  provenance_.master_seed = config_.seed;
}

std::uint64_t Pipeline::seed_for(const std::string& purpose) const {
  return config_.seed + seed_offsets().at(purpose);
}

void Pipeline::log(const std::string& line) const {
  if (options_.log) *options_.log << line << std::endl;
}

fs::path Pipeline::require(const std::string& rel, const std::string& producer) const {
  const auto p = path(rel);
  if (!fs::exists(p)) {
    throw StageError("missing " + p.string() + "; run the '" + producer + "' subcommand first");
  }
  return p;
}

fs::path Pipeline::margins_path() const {
  if (options_.margins_csv) {
    if (!fs::exists(*options_.margins_csv)) throw StageError("margin table not found: " + options_.margins_csv->string());
    return *options_.margins_csv;
  }
  return require("margins.csv", "estimate-margins");
}

double Pipeline::epsilon() const { return options_.epsilon.value_or(config_.analysis.epsilon); }

bool Pipeline::run_stage(const std::string& stage) {
  static const std::map<std::string, void (Pipeline::*)()> table = {
      {"gen-data", &Pipeline::gen_data},
      {"train", &Pipeline::train},
      {"estimate-margins", &Pipeline::estimate_margins},
      {"analyze", &Pipeline::analyze},
      {"detect", &Pipeline::detect},
      {"estimate-ra", &Pipeline::estimate_ra},
      {"learn-pseudomargin", &Pipeline::learn_pseudomargin},
      {"report", &Pipeline::report},
  };
  const auto it = table.find(stage);
  if (it == table.end()) throw StageError("unknown stage '" + stage + "'");

  const auto markers = path(".stages");
  const auto done = markers / (stage + ".done");
  const auto failed = markers / (stage + ".FAILED");
  const bool overridden = options_.margins_csv || options_.epsilon;
  if (!options_.force && !overridden && read_text(done) == provenance_.config_hash + "\n") {
    log("[" + stage + "] cached");
    return false;
  }
  fs::create_directories(markers);
  fs::create_directories(path("reports"));
  fs::remove(done);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    (this->*(it->second))();
  } catch (const std::exception& e) {
    write_text(failed, provenance_.config_hash + "\n" + e.what() + "\n");
    log("[" + stage + "] FAILED: " + e.what());
    throw StageError(stage + ": " + e.what());
  }
  fs::remove(failed);
  if (!overridden) write_text(done, provenance_.config_hash + "\n");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", seconds_since(t0));
  log("[" + stage + "] done in " + buf + " s");
  return true;
}

void Pipeline::run_all() {
  for (const auto& s : stage_names()) run_stage(s);
}

void Pipeline::gen_data() {
  const auto& d = config_.data;
  Dataset all;
  if (d.generator == "two_moons") {
    all = gen_two_moons(d.n, d.noise, seed_for("data"));
  } else if (d.generator == "blobs") {
    std::vector<std::vector<double>> centers;
    for (const auto& c : d.centers) centers.push_back({c[0], c[1]});
    all = gen_gaussian_blobs(d.n, centers, d.sigma, seed_for("data"));
  } else {
    all = load_idx(d.images, d.labels, d.max_items);
  }
  const auto parts = split(all, d.split, seed_for("split"));
  fs::create_directories(path("data"));
  write_dataset_csv(path("data/train.csv"), parts.train, provenance_);
  write_dataset_csv(path("data/val.csv"), parts.val, provenance_);
  write_dataset_csv(path("data/test.csv"), parts.test, provenance_);
  log("  train " + std::to_string(parts.train.size()) + ", val " + std::to_string(parts.val.size()) +
      ", test " + std::to_string(parts.test.size()));
}

void Pipeline::train() {
  const auto train_set = read_dataset_csv(require("data/train.csv", "gen-data")).dataset;
  const auto val_set = read_dataset_csv(require("data/val.csv", "gen-data")).dataset;
  const auto& t = config_.train;
  auto opt = t.optimizer;
  opt.seed = seed_for("train");
  TrainOptions options;
  options.class_logit_scale = t.class_logit_scale;
  if (t.method != "standard") options.probe = &val_set;
  const auto spec = config_.feature_spec(train_set.n_features);
  TrainResult result;
  if (t.method == "standard") {
    result = train_standard(spec, train_set, opt, options);
  } else {
    auto adv = t.adv;
    adv.method = t.method == "trades" ? AdvMethod::Trades : AdvMethod::StandardAt;
    result = train_adversarial(spec, train_set, adv, opt, options);
  }
  save_checkpoint(result.classifier, path("model.ckpt"), provenance_);

  std::size_t correct = 0;
  for (std::size_t i = 0; i < val_set.size(); ++i) {
    correct += result.classifier.predict(val_set.input(i)) == val_set.labels[i];
  }
  auto j = report_envelope("training", provenance_);
  j["history"] = result.history.to_json();
  j["val_accuracy"] = val_set.size() ? static_cast<double>(correct) / val_set.size() : 0.0;
  j["parameter_count"] = result.classifier.parameter_count();
  write_json(path("reports/training.json"), j);
  log("  final train accuracy " + std::to_string(result.history.final_train_accuracy));
}

void Pipeline::estimate_margins() {
  const auto model = load_checkpoint(require("model.ckpt", "train"));
  const auto test = read_dataset_csv(require("data/test.csv", "gen-data")).dataset;
  std::vector<std::vector<double>> adversaries;
  const auto records =
      margin_audit::estimate_margins(model, test, config_.margins, seed_for("margins"), options_.threads, &adversaries);
  write_margin_csv(path("margins.csv"), records, provenance_);
  write_adversaries(path("adversaries.bin"), adversaries, test.n_features, provenance_);
  std::size_t found = 0;
  for (const auto& r : records) found += r.adv_found;
  log("  " + std::to_string(records.size()) + " samples, " + std::to_string(found) + " adversaries found");
}

void Pipeline::analyze() {
  const auto table = read_margin_csv(margins_path());
  const auto& records = table.records;
  const auto& a = config_.analysis;
  const double eps = epsilon();
  const auto population = a.population == "correct" ? Population::CorrectOnly : Population::All;

  auto consistency = report_envelope("consistency", provenance_);
  consistency["d_out"] = consistency_report(records, a.bins, population).to_json();
  const auto d_feat = column_d_feat(records);
  consistency["d_feat"] = consistency_report(records, a.bins, population, d_feat).to_json();
  write_json(path("reports/consistency.json"), consistency);

  auto epsilons = a.epsilons;
  if (std::find(epsilons.begin(), epsilons.end(), eps) == epsilons.end()) epsilons.push_back(eps);
  std::sort(epsilons.begin(), epsilons.end());
  const auto d_in = column_d_in(records);
  const auto d_out = column_d_out(records);
  // Samples without an adversary (+inf sentinel) are left out of the set-separation check.
  std::vector<double> sep_in, sep_out;
  std::vector<std::size_t> sep_ids;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!std::isfinite(d_in[i])) continue;
    sep_in.push_back(d_in[i]);
    sep_out.push_back(d_out[i]);
    sep_ids.push_back(records[i].id);
  }
  const auto verdict = separation_check(sep_in, sep_out, epsilons);
  auto separation = report_envelope("separation", provenance_);
  separation["verdict"] = verdict.to_json();
  separation["excluded_without_adversary"] = records.size() - sep_in.size();
  if (verdict.witness) {
    separation["witness_ids"] = {sep_ids[verdict.witness->first], sep_ids[verdict.witness->second]};
  }
  write_json(path("reports/separation.json"), separation);

  auto curve = report_envelope("auroc_vs_eps", provenance_);
  curve["curve"] = to_json(auroc_vs_epsilon(records, epsilons));
  write_json(path("reports/auroc_vs_eps.json"), curve);

  auto bias = report_envelope("class_bias", provenance_);
  bias["report"] = per_class_consistency(records).to_json();
  write_json(path("reports/bias.json"), bias);

  // Local isometry: feature-space distance to the adversary against the input margin.
  std::vector<double> feat_dist;
  for (const auto& r : records) feat_dist.push_back(r.feat_dist);
  auto isometry = report_envelope("isometry", provenance_);
  isometry["kendall_d_in_feat_dist"] = kendall_json(kendall(d_in, feat_dist));
  isometry["kendall_feat_dist_d_out"] = kendall_json(kendall(feat_dist, d_out));
  write_json(path("reports/isometry.json"), isometry);

  if (fs::exists(path("model.ckpt"))) {
    const auto model = load_checkpoint(path("model.ckpt"));
    const auto dist = classifier_pairwise_distances(model.head(), config_.margins.norm);
    const auto stats = equidistance_stats(dist);
    auto eq = report_envelope("equidistance", provenance_);
    eq["input_norm"] = std::string(norm_name(config_.margins.norm));
    eq["pairwise_distances"] = dist;
    eq["stats"] = {{"min", stats.min},       {"q1", stats.q1},   {"median", stats.median},
                   {"q3", stats.q3},         {"max", stats.max}, {"max_over_min", stats.max_over_min}};
    eq["kendall_d_out_d_feat"] = kendall_json(kendall(d_out, d_feat));
    eq["kendall_d_in_d_feat"] = kendall_json(kendall(d_in, d_feat));
    write_json(path("reports/equidistance.json"), eq);
  }
  log("  tau_b(d_in, d_out) = " + format_real(kendall(d_in, d_out).tau_b));
}

void Pipeline::detect() {
  const auto table = read_margin_csv(margins_path());
  const auto& records = table.records;
  const double eps = epsilon();
  const auto report = detection_metrics(column_d_out(records), label_nonrobust(records, eps), eps);
  auto j = report_envelope("detection", provenance_);
  j["report"] = report.to_json();
  write_json(path("reports/detection.json"), j);
  log("  AUROC " + format_real(report.auroc) + " at epsilon " + format_real(eps));

  if (options_.margins_csv) return;
  const auto model = load_checkpoint(require("model.ckpt", "train"));
  const auto test = read_dataset_csv(require("data/test.csv", "gen-data")).dataset;
  const auto adversaries = read_adversaries(require("adversaries.bin", "estimate-margins"));
  if (adversaries.size() != test.size()) throw StageError("adversary file does not match the test set");
  std::vector<std::vector<double>> sources, advs;
  for (std::size_t i = 0; i < adversaries.size(); ++i) {
    if (adversaries[i].empty()) continue;
    sources.emplace_back(test.input(i).begin(), test.input(i).end());
    advs.push_back(adversaries[i]);
  }
  auto audit = report_envelope("adversarial_audit", provenance_);
  audit["audit"] = adversarial_margin_audit(model, sources, advs, report.lambda).to_json();
  write_json(path("reports/adversarial_audit.json"), audit);
}

void Pipeline::estimate_ra() {
  const auto model = load_checkpoint(require("model.ckpt", "train"));
  const auto test = read_dataset_csv(require("data/test.csv", "gen-data")).dataset;
  const auto records = read_margin_csv(margins_path()).records;
  if (records.size() != test.size()) throw StageError("margin table does not match the test set");
  const auto& a = config_.analysis;
  const double eps = epsilon();

  PgdConfig pgd;
  pgd.epsilon = eps;
  pgd.norm = config_.margins.norm;
  pgd.steps = a.pgd_steps;
  pgd.restarts = a.pgd_restarts;
  pgd.seed = seed_for("pgd");
  const auto ra = robust_accuracy(model, test, pgd, options_.threads);

  std::size_t margin_robust = 0;
  for (const auto& r : records) margin_robust += r.correct && r.d_in_hat > eps;
  const double ratio = records.empty() ? 0.0 : static_cast<double>(margin_robust) / records.size();

  if (a.subset_size > records.size()) throw StageError("analysis.subset_size exceeds the test set");
  json subsets = json::array();
  double abs_error = 0.0;
  for (std::size_t s = 0; s < a.subsets; ++s) {
    auto perm = Rng(seed_for("subsets") + s).permutation(records.size());
    perm.resize(a.subset_size);
    const auto est = estimate_robust_accuracy(records, perm, eps, config_.alpha_grid());
    auto row = est.to_json();
    row["abs_error"] = std::abs(est.estimate - ra.robust_accuracy);
    abs_error += std::abs(est.estimate - ra.robust_accuracy);
    subsets.push_back(row);
  }

  auto j = report_envelope("robust_accuracy", provenance_);
  j["epsilon"] = eps;
  j["pgd"] = {{"steps", pgd.steps}, {"restarts", pgd.restarts}, {"norm", std::string(norm_name(pgd.norm))}};
  j["clean_accuracy"] = ra.clean_accuracy;
  j["pgd_robust_accuracy"] = ra.robust_accuracy;
  j["margin_robust_ratio"] = ratio;
  j["sanity_gap"] = std::abs(ratio - ra.robust_accuracy);
  j["subset_size"] = a.subset_size;
  j["subsets"] = subsets;
  j["mean_abs_error"] = a.subsets ? abs_error / a.subsets : 0.0;
  write_json(path("reports/robust_accuracy.json"), j);
  log("  PGD robust accuracy " + format_real(ra.robust_accuracy) + ", margin ratio " + format_real(ratio));
}

void Pipeline::learn_pseudomargin() {
  auto j = report_envelope("pseudomargin", provenance_);
  if (!config_.analysis.pseudomargin) {
    j["skipped"] = true;
    write_json(path("reports/pseudomargin.json"), j);
    log("  disabled by analysis.pseudomargin");
    return;
  }
  const auto model = load_checkpoint(require("model.ckpt", "train"));
  const auto train_set = read_dataset_csv(require("data/train.csv", "gen-data")).dataset;
  const auto test = read_dataset_csv(require("data/test.csv", "gen-data")).dataset;
  const auto test_records = read_margin_csv(require("margins.csv", "estimate-margins")).records;

  const auto train_records = margin_audit::estimate_margins(model, train_set, config_.margins,
                                                            seed_for("margins_train"), options_.threads);
  write_margin_csv(path("margins_train.csv"), train_records, provenance_);
  const auto split = build_regression_set(model, train_set, train_records, config_.pseudo.val_fraction,
                                          seed_for("regression"));
  auto result = train_pseudomargin(split, config_.pseudo.net, seed_for("pseudo"));
  save_pseudomargin(result.net, path("pseudomargin.ckpt"), provenance_);

  const auto scores = pseudo_margin_scores(result.net, model, test);
  const auto d_in = column_d_in(test_records);
  const auto d_out = column_d_out(test_records);
  const double tau_pseudo = kendall_tau(d_in, scores);
  const double tau_logit = kendall_tau(d_in, d_out);
  j["skipped"] = false;
  j["normalizer"] = result.net.normalizer();
  j["history"] = result.history.to_json();
  j["train_size"] = split.train.size();
  j["val_size"] = split.val.size();
  j["tau_pseudo"] = tau_pseudo;
  j["tau_logit"] = tau_logit;
  j["tau_gain"] = tau_pseudo - tau_logit;
  j["detection"] = detection_metrics(scores, label_nonrobust(test_records, epsilon()), epsilon()).to_json();
  j["detection"]["orientation"] = "-pseudo";
  write_json(path("reports/pseudomargin.json"), j);
  log("  tau(pseudo) " + format_real(tau_pseudo) + " vs tau(d_out) " + format_real(tau_logit));
}

void Pipeline::report() {
  const auto records = read_margin_csv(margins_path()).records;
  const auto consistency = read_json(require("reports/consistency.json", "analyze"));
  const auto curve = read_json(require("reports/auroc_vs_eps.json", "analyze"));
  const auto bias = read_json(require("reports/bias.json", "analyze"));
  const auto detection = read_json(require("reports/detection.json", "detect"));
  const auto ra = read_json(require("reports/robust_accuracy.json", "estimate-ra"));
  fs::create_directories(path("figures"));
  const auto& a = config_.analysis;
  const auto population = a.population == "correct" ? Population::CorrectOnly : Population::All;

  const auto d_in = column_d_in(records);
  const auto d_out = column_d_out(records);
  const auto profile = consistency_report(records, a.bins, population).profile;
  char title[128];
  std::snprintf(title, sizeof title, "Logit margin vs input margin (tau = %.3f)", kendall(d_in, d_out).tau_b);
  write_text(path("figures/consistency.svg"),
             svg_scatter(d_in, d_out, profile, {title, "input margin d_in", "logit margin d_out"}, provenance_));

  std::vector<double> eps, auroc;
  for (const auto& row : curve.at("curve")) {
    if (row.contains("report")) {
      eps.push_back(row.at("epsilon"));
      auroc.push_back(row.at("report").at("auroc"));
    }
  }
  write_text(path("figures/auroc_vs_eps.svg"),
             svg_line(eps, auroc, {"Detection AUROC vs epsilon", "epsilon", "AUROC"}, provenance_));

  const auto per_class = per_class_consistency(records);
  std::vector<BoxGroup> din_groups, dout_groups;
  for (const auto& c : per_class.classes) {
    if (c.excluded) continue;
    din_groups.push_back({"class " + std::to_string(c.label), c.d_in});
    dout_groups.push_back({"class " + std::to_string(c.label), c.d_out});
  }
  write_text(path("figures/class_d_in.svg"),
             svg_boxplots(din_groups, {"Input margin per class", "class", "d_in"}, provenance_));
  write_text(path("figures/class_d_out.svg"),
             svg_boxplots(dout_groups, {"Logit margin per class", "class", "d_out"}, provenance_));

  json summary = report_envelope("summary", provenance_);
  if (fs::exists(path("reports/equidistance.json"))) {
    const auto eq = read_json(path("reports/equidistance.json"));
    const auto dist = eq.at("pairwise_distances").get<std::vector<double>>();
    std::vector<BoxGroup> groups = {{"||w_i - w_j||", box_stats(dist)}};
    write_text(path("figures/equidistance.svg"),
               svg_boxplots(groups, {"Classifier pairwise distances", "", "dual-norm distance"}, provenance_));
    summary["equidistance_max_over_min"] = eq.at("stats").at("max_over_min");
  }

  summary["samples"] = records.size();
  summary["tau_b"] = consistency.at("d_out").at("kendall_tau_b");
  summary["tau_b_feature_margin"] = consistency.at("d_feat").at("kendall_tau_b");
  summary["detection"] = detection.at("report");
  summary["clean_accuracy"] = ra.at("clean_accuracy");
  summary["pgd_robust_accuracy"] = ra.at("pgd_robust_accuracy");
  summary["margin_robust_ratio"] = ra.at("margin_robust_ratio");
  summary["estimate_mean_abs_error"] = ra.at("mean_abs_error");
  summary["class_bias"] = bias.at("report");
  if (fs::exists(path("reports/adversarial_audit.json"))) {
    summary["adversarial_audit"] = read_json(path("reports/adversarial_audit.json")).at("audit");
  }
  if (fs::exists(path("reports/pseudomargin.json"))) {
    const auto pm = read_json(path("reports/pseudomargin.json"));
    if (!pm.value("skipped", true)) {
      summary["tau_pseudo"] = pm.at("tau_pseudo");
      summary["tau_gain"] = pm.at("tau_gain");
    }
  }
  write_json(path("reports/summary.json"), summary);
}

}  // namespace margin_audit
