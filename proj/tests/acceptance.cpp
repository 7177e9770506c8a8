// Acceptance run: one PASS/FAIL line per criterion.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "margin_audit/analysis.hpp"
#include "margin_audit/attacks.hpp"
#include "margin_audit/checkpoint.hpp"
#include "margin_audit/config.hpp"
#include "margin_audit/finite_diff.hpp"
#include "margin_audit/margin_table.hpp"
#include "margin_audit/margins.hpp"
#include "margin_audit/pipeline.hpp"
#include "margin_audit/rng.hpp"
#include "margin_audit/training.hpp"
#include "oracles.hpp"

using namespace margin_audit;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << name << ": " << o.detail << " ["
            << fmt("%.1f", since(t0)) << " s]" << std::endl;
}

Classifier linear_classifier(Tensor w, Tensor b) {
  FeatureExtractorSpec spec;
  spec.input_width = w.shape[1];
  return Classifier(spec, std::nullopt, {}, LinearHead{std::move(w), std::move(b)});
}

double closed_form_margin(const Classifier& c, std::span<const double> x, Norm p) {
  const auto f = c.logits(x);
  const auto i = predict_from_logits(f);
  const auto& w = c.head().weights;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < f.size(); ++j) {
    if (j == i) continue;
    std::vector<double> d(x.size());
    for (std::size_t t = 0; t < x.size(); ++t) d[t] = w.at(i, t) - w.at(j, t);
    best = std::min(best, (f[i] - f[j]) / dual_norm_of(d, p));
  }
  return best;
}

// Smallest |pre-activation| over relu units for a batch of inputs.
double relu_clearance(const Classifier& c, const Tensor& x) {
  double clearance = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::vector<double> a(x.row(r).begin(), x.row(r).end());
    for (std::size_t l = 0; l < c.layers().size(); ++l) {
      const auto& layer = c.layers()[l];
      std::vector<double> z(layer.biases.data);
      for (std::size_t o = 0; o < z.size(); ++o) {
        for (std::size_t i = 0; i < a.size(); ++i) z[o] += layer.weights.at(o, i) * a[i];
      }
      const auto act = c.spec().activations[l];
      for (auto& v : z) {
        if (act == Activation::Relu) {
          clearance = std::min(clearance, std::abs(v));
          v = std::max(v, 0.0);
        } else if (act == Activation::Tanh) {
          v = std::tanh(v);
        }
      }
      a = z;
    }
  }
  return clearance;
}

Outcome gradient_correctness() {
  Rng rng(2024);
  double worst = 0.0;
  double worst_entry = 0.0;
  std::size_t checked = 0;
  for (int net = 0; net < 50; ++net) {
    FeatureExtractorSpec spec;
    spec.input_width = 2 + rng.below(5);
    const auto depth = 1 + rng.below(3);
    for (std::size_t l = 0; l < depth; ++l) {
      spec.hidden.push_back(3 + rng.below(8));
      spec.activations.push_back(static_cast<Activation>(rng.below(3)));
    }
    const auto k = 2 + rng.below(4);
    const auto c = Classifier::initialize(spec, k, rng.next_u64());

    Tensor x = Tensor::zeros({3, spec.input_width});
    do {
      for (auto& v : x.data) v = rng.uniform(-1.0, 1.0);
    } while (relu_clearance(c, x) < 1e-3);
    Tensor target = Tensor::zeros({3, k});
    for (std::size_t r = 0; r < 3; ++r) target.at(r, rng.below(k)) = 1.0;

    Graph g;
    const auto params = c.add_parameter_leaves(g);
    const auto xs = g.leaf("x");
    const auto loss = g.softmax_cross_entropy(c.build_logits(g, params, xs), g.leaf("t"));
    Bindings base = c.parameters();
    base["x"] = x;
    base["t"] = target;
    std::vector<std::string> names = c.parameter_names();
    names.push_back("x");
    for (const auto& name : names) {
      g.bind_all(base);
      const DifferentiableFunction f = [&](const Tensor& p, Tensor& grad) {
        g.bind(name, p);
        const double v = g.forward(loss).data[0];
        grad = g.backward(loss).at(name);
        return v;
      };
      // Relative to the largest gradient entry: per-entry ratios are dominated by
      // rounding noise on entries that are nearly zero.
      const auto r = finite_diff_check(f, base.at(name));
      Tensor grad;
      f(base.at(name), grad);
      double scale = 0.0;
      for (double v : grad.data) scale = std::max(scale, std::abs(v));
      if (scale > 0.0) worst = std::max(worst, r.max_absolute_error / scale);
      worst_entry = std::max(worst_entry, r.max_relative_error);
      ++checked;
    }
  }
  return {worst < 1e-5, "50 networks, " + std::to_string(checked) + " gradients, max relative error " +
                            fmt("%.2e", worst) +
                            " (largest per-entry ratio " + fmt("%.1e", worst_entry) + ")"};
}

Outcome closed_form_margins() {
  Rng rng(77);
  double attack_worst = 0.0, oracle_worst = 0.0;
  std::size_t cases = 0;
  bool ok = true;
  for (std::size_t n = 2; n <= 10; ++n) {
    for (Norm p : {Norm::L2, Norm::Linf}) {
      for (int trial = 0; trial < 6; ++trial) {
        const auto k = 2 + rng.below(4);
        auto w = Tensor::zeros({k, n});
        auto b = Tensor::zeros({k});
        for (auto& v : w.data) v = rng.uniform(-1.0, 1.0);
        for (auto& v : b.data) v = rng.uniform(-0.5, 0.5);
        const auto c = linear_classifier(w, b);
        std::vector<double> x(n);
        for (auto& v : x) v = rng.uniform(-1.0, 1.0);
        const std::vector<FeatureBounds> bounds(n, FeatureBounds{-20.0, 20.0});
        const double truth = closed_form_margin(c, x, p);
        MarginSearchConfig cfg;
        cfg.norm = p;
        const auto r = minimal_norm_adversarial(c, x, bounds, cfg, rng.next_u64());
        const double err = r.success ? std::abs(r.norm - truth) / truth : 1.0;
        attack_worst = std::max(attack_worst, err);
        ok = ok && r.success && err <= 0.01;
        if (n <= 3) {
          const auto o = grid_margin_oracle(c, x, bounds, p, 64);
          const double oerr = std::abs(o.distance - truth) / truth;
          oracle_worst = std::max(oracle_worst, oerr);
          ok = ok && oerr <= 0.005;
        }
        ++cases;
      }
    }
  }
  for (std::size_t n = 1; n <= 1; ++n) {  // the oracle also covers the 1-D case
    for (Norm p : {Norm::L2, Norm::Linf}) {
      const auto c = linear_classifier(Tensor::matrix({{1.5}, {-0.5}}), Tensor::vector({0.1, 0.0}));
      const std::vector<double> x = {0.7};
      const double truth = closed_form_margin(c, x, p);
      const auto o = grid_margin_oracle(c, x, std::vector<FeatureBounds>(1, {-20.0, 20.0}), p, 64);
      oracle_worst = std::max(oracle_worst, std::abs(o.distance - truth) / truth);
      ok = ok && std::abs(o.distance - truth) / truth <= 0.005;
    }
  }
  return {ok, std::to_string(cases) + " linear cases in 2-10 dims; attack max rel error " + fmt("%.2e", attack_worst) +
                  ", oracle (dim <= 3) " + fmt("%.2e", oracle_worst)};
}

Outcome equidistance_reduction() {
  FeatureExtractorSpec spec;
  spec.input_width = 2;
  spec.hidden = {16, 4};
  spec.activations = {Activation::Relu, Activation::Relu};
  const auto base = Classifier::initialize(spec, 4, 5);
  auto w = Tensor::zeros({4, 4});
  for (std::size_t i = 0; i < 4; ++i) w.at(i, i) = 1.0;
  const Classifier c(base.spec(), std::nullopt, base.layers(), LinearHead{w, Tensor::zeros({4})});
  const auto data = gen_two_moons(1000, 0.2, 6);
  std::vector<double> d_out, d_feat;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto l = c.logits(data.input(i));
    d_out.push_back(logit_margin(l));
    d_feat.push_back(feature_margin(l, c.head(), Norm::L2));
  }
  const auto k = kendall(d_out, d_feat);
  return {k.tau_b == 1.0 && k.discordant == 0,
          "identity head, 1000 samples: tau_b = " + fmt("%.17g", k.tau_b) + ", discordant " + std::to_string(k.discordant)};
}

Outcome metric_oracles() {
  Rng rng(31);
  bool ok = true;
  double worst = 0.0;
  for (std::size_t n : {10u, 137u, 800u, 2000u}) {
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = std::floor(rng.uniform(0.0, 25.0));
      b[i] = std::floor(rng.uniform(0.0, 25.0)) + 0.1 * a[i];
    }
    const auto fast = kendall(a, b);
    const auto slow = oracle::count_pairs(a, b);
    ok = ok && fast.concordant == slow.concordant && fast.discordant == slow.discordant &&
         fast.ties_a == slow.ties_a && fast.ties_b == slow.ties_b && fast.ties_joint == slow.ties_joint &&
         fast.tau_b == oracle::tau_b(slow) && fast.tau_a == oracle::tau_a(slow);
  }
  for (std::size_t n : {20u, 501u, 5000u}) {
    std::vector<double> s(n);
    std::vector<char> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.uniform() < 0.3;
      s[i] = std::round((rng.normal() + (y[i] ? 0.8 : 0.0)) * 20.0) / 20.0;
    }
    const auto fast = score_metrics(s, y);
    const auto slow = oracle::sweep(s, y);
    for (auto [u, v] : {std::pair{fast.auroc, slow.auroc}, std::pair{fast.aupr, slow.aupr},
                        std::pair{fast.fpr_at_95, slow.fpr_at_95}}) {
      worst = std::max(worst, std::abs(u - v));
    }
  }
  ok = ok && worst < 1e-12;
  return {ok, "kendall counts exact up to n = 2000 with ties; detection metrics max deviation " + fmt("%.1e", worst) +
                  " up to n = 5000"};
}

Outcome theorem_both_directions() {
  Rng rng(41);
  const std::size_t n = 1000;
  std::vector<double> d_in(n), d_out(n);
  for (std::size_t i = 0; i < n; ++i) {
    d_in[i] = 0.001 * static_cast<double>(i + 1);
    d_out[i] = std::exp(3.0 * d_in[i]) - 0.5;  // strictly increasing
  }
  std::vector<double> eps(100);
  for (auto& e : eps) e = rng.uniform(0.0005, 1.0);
  std::sort(eps.begin(), eps.end());
  const auto v = separation_check(d_in, d_out, eps);
  bool ok = v.consistent && !v.witness;
  for (const auto& s : v.steps) ok = ok && s.separable;
  for (double e : eps) {
    std::vector<char> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = d_in[i] <= e;
    ok = ok && detection_metrics(d_out, y, e).auroc == 1.0;
  }
  const bool forward_ok = ok;

  // One discordant pair: swap the logit margins of samples 300 and 600.
  std::swap(d_out[299], d_out[599]);
  const double lo = d_in[299], hi = d_in[599];
  std::vector<double> probe = eps;
  probe.push_back(0.5 * (lo + hi));
  std::sort(probe.begin(), probe.end());
  const auto w = separation_check(d_in, d_out, probe);
  bool reverse_ok = !w.consistent && w.witness && w.witness->first == 599 && w.witness->second == 299;
  std::size_t failing = 0;
  for (const auto& s : w.steps) {
    const bool predicted_fail = s.epsilon >= lo && s.epsilon < hi;
    reverse_ok = reverse_ok && (s.separable != predicted_fail);
    failing += !s.separable;
    reverse_ok = reverse_ok && s.separable == oracle::separable(d_in, d_out, s.epsilon);
  }
  return {forward_ok && reverse_ok, "monotone: separable and AUROC = 1 at 100 eps; swapped pair: " +
                                        std::to_string(failing) + " failing eps all inside [" + fmt("%.3f", lo) + ", " +
                                        fmt("%.3f", hi) + "), witness (599, 299)"};
}

struct RunResult {
  fs::path dir;
  double seconds = 0.0;
  double pseudo_seconds = 0.0;
  double train_seconds = 0.0;
};

RunResult run_pipeline(const ExperimentConfig& cfg, std::size_t threads) {
  PipelineOptions opts;
  opts.threads = threads;
  opts.force = true;
  Pipeline p(cfg, opts);
  RunResult r;
  r.dir = cfg.out;
  const auto t0 = Clock::now();
  for (const auto& s : stage_names()) {
    const auto ts = Clock::now();
    p.run_stage(s);
    if (s == "learn-pseudomargin") r.pseudo_seconds = since(ts);
    if (s == "train") r.train_seconds = since(ts);
  }
  r.seconds = since(t0);
  return r;
}

json fixture_of(const fs::path& dir) {
  json f;
  const auto consistency = read_json(dir / "reports/consistency.json");
  f["config_hash"] = consistency.at("config_hash");
  f["tau_b"] = consistency.at("d_out").at("kendall_tau_b");
  f["margins_csv_sha256"] = sha256_hex(slurp(dir / "margins.csv"));
  f["detection"] = read_json(dir / "reports/detection.json").at("report");
  for (const auto& e : fs::directory_iterator(dir / "figures")) {
    f["svg_sha256"][e.path().filename().string()] = sha256_hex(slurp(e.path()));
  }
  return f;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  bool write_fixtures = false;
  std::string workdir = (fs::temp_directory_path() / "margin_audit_acceptance").string();
  std::size_t threads = 4;
  app.add_flag("--write-fixtures", write_fixtures, "Store the reference run as the new fixtures");
  app.add_option("--workdir", workdir, "Scratch directory for pipeline runs");
  app.add_option("--threads", threads, "Worker threads for the reference pipeline");
  CLI11_PARSE(app, argc, argv);

  const fs::path source(MARGIN_AUDIT_SOURCE_DIR);
  const fs::path fixtures = source / "tests" / "fixtures";
  fs::remove_all(workdir);
  fs::create_directories(workdir);

  report(1, "gradient correctness", gradient_correctness);
  report(2, "closed-form margin", closed_form_margins);
  report(3, "equidistance reduction", equidistance_reduction);
  report(4, "metric oracles", metric_oracles);
  report(5, "separation theorem, both directions", theorem_both_directions);

  auto ref_cfg = load_config(source / "configs" / "two_moons_reference.cfg");
  ref_cfg.out = fs::path(workdir) / "reference";
  auto weak_cfg = load_config(source / "configs" / "two_moons_weak.cfg");
  weak_cfg.out = fs::path(workdir) / "weak";

  RunResult ref, weak;
  std::string pipeline_error;
  try {
    ref = run_pipeline(ref_cfg, threads);
    weak = run_pipeline(weak_cfg, threads);
  } catch (const std::exception& e) {
    pipeline_error = e.what();
  }
  const auto needs_runs = [&](std::function<Outcome()> body) {
    return [&, body]() -> Outcome {
      if (!pipeline_error.empty()) return {false, "pipeline failed: " + pipeline_error};
      return body();
    };
  };
  const auto ref_json = [&](const std::string& rel) { return read_json(ref.dir / rel); };

  report(6, "adversarial training effect", needs_runs([&]() -> Outcome {
           const auto t0 = Clock::now();
           const auto data = read_dataset_csv(ref.dir / "data/train.csv").dataset;
           const auto test = read_dataset_csv(ref.dir / "data/test.csv").dataset;
           auto opt = ref_cfg.train.optimizer;
           opt.seed = ref_cfg.seed + 3;
           const auto standard = train_standard(ref_cfg.feature_spec(2), data, opt).classifier;
           const auto at = load_checkpoint(ref.dir / "model.ckpt");
           PgdConfig pgd;
           pgd.epsilon = 0.1;
           pgd.norm = Norm::Linf;
           pgd.steps = ref_cfg.analysis.pgd_steps;
           pgd.seed = ref_cfg.seed + 9;
           const auto rs = robust_accuracy(standard, test, pgd, 1);
           const auto ra = robust_accuracy(at, test, pgd, 1);
           const double secs = since(t0) + ref.train_seconds;
           const double gap = ra.robust_accuracy - rs.robust_accuracy;
           const bool ok = gap >= 0.20 && ra.clean_accuracy >= 0.9 && rs.clean_accuracy >= 0.9 && secs < 180.0;
           return {ok, "AT robust " + fmt("%.4f", ra.robust_accuracy) + " vs standard " + fmt("%.4f", rs.robust_accuracy) +
                           " (gap " + fmt("%.1f", 100 * gap) + " points, need 20); clean " + fmt("%.4f", ra.clean_accuracy) +
                           " / " + fmt("%.4f", rs.clean_accuracy) + "; " + fmt("%.1f", secs) + " s"};
         }));

  json fixture;
  bool have_fixture = false;
  if (pipeline_error.empty()) {
    if (write_fixtures) {
      fs::create_directories(fixtures);
      write_json(fixtures / "two_moons_reference.json", fixture_of(ref.dir));
      fs::copy_file(ref.dir / "margins.csv", fixtures / "two_moons_reference_margins.csv",
                    fs::copy_options::overwrite_existing);
      std::cout << "fixtures written to " << fixtures.string() << std::endl;
    }
    if (fs::exists(fixtures / "two_moons_reference.json")) {
      fixture = read_json(fixtures / "two_moons_reference.json");
      have_fixture = true;
    }
  }

  report(7, "margin consistency emerges", needs_runs([&]() -> Outcome {
           const double tau = ref_json("reports/consistency.json").at("d_out").at("kendall_tau_b");
           if (!have_fixture) return {false, "tau_b = " + fmt("%.17g", tau) + ", no fixture stored"};
           const auto now = fixture_of(ref.dir);
           const bool bitwise = now.at("tau_b").get<double>() == fixture.at("tau_b").get<double>();
           const bool same = now == fixture;
           return {tau > 0.5 && bitwise && same, "tau_b = " + fmt("%.17g", tau) + (bitwise ? " (matches fixture bitwise)" : " (fixture mismatch)") +
                                                     (same ? ", margin CSV, detection report and SVG digests match" : ", artifact digests differ")};
         }));

  report(8, "sanity check vs PGD", needs_runs([&]() -> Outcome {
           const auto j = ref_json("reports/robust_accuracy.json");
           const double gap = j.at("sanity_gap");
           return {gap <= 0.03, "ratio(correct, d_in > eps) " + fmt("%.4f", j.at("margin_robust_ratio").get<double>()) +
                                    " vs PGD robust accuracy " + fmt("%.4f", j.at("pgd_robust_accuracy").get<double>()) +
                                    ", gap " + fmt("%.2f", 100 * gap) + " points"};
         }));

  report(9, "sample-efficient robust accuracy", needs_runs([&]() -> Outcome {
           const double strong = ref_json("reports/robust_accuracy.json").at("mean_abs_error");
           const double weak_err = read_json(weak.dir / "reports/robust_accuracy.json").at("mean_abs_error");
           return {strong <= 0.03 && weak_err > 0.03, "mean |estimate - attack RA| over 10 subsets of 200: consistent model " +
                                                          fmt("%.2f", 100 * strong) + " points, weakened model " +
                                                          fmt("%.2f", 100 * weak_err) + " points (must exceed 3)"};
         }));

  report(10, "adversarial-margin audit", needs_runs([&]() -> Outcome {
           const auto a = ref_json("reports/adversarial_audit.json").at("audit");
           const double p99 = a.at("p99_d_out"), lambda = a.at("lambda"), flagged = a.at("flagged_fraction");
           return {p99 < lambda && flagged >= 0.99, "p99 d_out of " + std::to_string(a.at("count").get<std::size_t>()) +
                                                        " adversaries " + fmt("%.3g", p99) + " < lambda " + fmt("%.4f", lambda) +
                                                        ", flagged " + fmt("%.4f", flagged)};
         }));

  report(11, "learned pseudo-margin", needs_runs([&]() -> Outcome {
           const auto w = read_json(weak.dir / "reports/pseudomargin.json");
           const auto s = ref_json("reports/pseudomargin.json");
           const double wg = w.at("tau_gain"), sg = s.at("tau_gain");
           const double secs = std::max(weak.pseudo_seconds, ref.pseudo_seconds);
           return {wg >= 0.1 && sg >= -0.05 && secs < 120.0,
                   "weak model tau " + fmt("%.3f", w.at("tau_logit").get<double>()) + " -> " + fmt("%.3f", w.at("tau_pseudo").get<double>()) +
                       "; consistent model " + fmt("%.3f", s.at("tau_logit").get<double>()) + " -> " +
                       fmt("%.3f", s.at("tau_pseudo").get<double>()) + "; slowest stage " + fmt("%.1f", secs) + " s"};
         }));

  report(12, "end-to-end budget and determinism", needs_runs([&]() -> Outcome {
           const auto model = load_checkpoint(ref.dir / "model.ckpt");
           const auto test = read_dataset_csv(ref.dir / "data/test.csv").dataset;
           PipelineOptions o;
           Pipeline p(ref_cfg, o);
           const auto serial = margin_audit::estimate_margins(model, test, ref_cfg.margins, p.seed_for("margins"), 1);
           const bool identical = margin_csv(serial, p.provenance()) == slurp(ref.dir / "margins.csv");
           return {ref.seconds < 300.0 && identical, "reference pipeline " + fmt("%.1f", ref.seconds) + " s on " +
                                                         std::to_string(threads) + " threads; serial margin CSV " +
                                                         (identical ? "bitwise identical" : "DIFFERS")};
         }));

  std::cout << (12 - failures) << "/12 criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
