#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "margin_audit/checkpoint.hpp"
#include "margin_audit/dataset.hpp"
#include "margin_audit/pseudomargin.hpp"

using namespace margin_audit;

namespace {

Classifier feature_model(std::uint64_t seed) {
  FeatureExtractorSpec spec;
  spec.input_width = 2;
  spec.hidden = {16, 8};
  spec.activations = {Activation::Relu, Activation::Tanh};
  return Classifier::initialize(spec, 2, seed);
}

std::vector<MarginRecord> records_from(const Dataset& data, double (*margin)(std::span<const double>)) {
  std::vector<MarginRecord> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    out[i].id = i;
    out[i].label = data.labels[i];
    out[i].d_in_hat = margin(data.input(i));
    out[i].adv_found = std::isfinite(out[i].d_in_hat);
  }
  return out;
}

double smooth_margin(std::span<const double> x) { return 0.05 + 0.2 * std::abs(x[0] - 0.5); }
double constant_margin(std::span<const double>) { return 0.3; }

PseudoMarginConfig small_config(std::size_t epochs) {
  PseudoMarginConfig c;
  c.hidden = {32, 32};
  c.optimizer.epochs = epochs;
  c.optimizer.learning_rate = 3e-3;
  c.optimizer.batch_size = 32;
  return c;
}

}  // namespace

TEST_CASE("regression split sizes and targets") {
  const auto data = gen_two_moons(5000, 0.1, 1);
  const auto model = feature_model(2);
  auto recs = records_from(data, smooth_margin);
  recs[7].d_in_hat = kNoMargin;
  recs[7].adv_found = false;
  const auto split = build_regression_set(model, data, recs, 0.2, 3);
  CHECK(split.train.size() == 4000);
  CHECK(split.val.size() == 1000);
  CHECK(split.train.features.cols() == model.feature_width());
  CHECK(split.normalizer > 0.0);
  for (const auto* set : {&split.train, &split.val}) {
    for (std::size_t i = 0; i < set->size(); ++i) {
      CHECK(set->targets[i] >= 0.0);
      CHECK(set->targets[i] <= 1.0);
      if (set->ids[i] == 7) CHECK(set->targets[i] == 1.0);
    }
  }

  SUBCASE("deterministic for a seed") {
    const auto again = build_regression_set(model, data, recs, 0.2, 3);
    CHECK(again.train.ids == split.train.ids);
    CHECK(again.val.ids == split.val.ids);
    CHECK(again.train.features.data == split.train.features.data);
    const auto other = build_regression_set(model, data, recs, 0.2, 4);
    CHECK(other.val.ids != split.val.ids);
  }
  SUBCASE("equal margins give equal targets") {
    const auto flat = build_regression_set(model, data, records_from(data, constant_margin), 0.2, 3);
    for (double t : flat.train.targets) CHECK(t == flat.train.targets.front());
    for (double t : flat.val.targets) CHECK(t == flat.train.targets.front());
  }
  SUBCASE("errors") {
    auto none = recs;
    for (auto& r : none) r.d_in_hat = kNoMargin;
    CHECK_THROWS_AS(build_regression_set(model, data, none, 0.2, 3), PseudoMarginError);
    CHECK_THROWS_AS(build_regression_set(model, data, recs, 0.0, 3), PseudoMarginError);
    CHECK_THROWS_AS(build_regression_set(model, data, recs, 1.0, 3), PseudoMarginError);
    recs.pop_back();
    CHECK_THROWS_AS(build_regression_set(model, data, recs, 0.2, 3), PseudoMarginError);
  }
}

TEST_CASE("constant targets converge to the constant") {
  const auto data = gen_two_moons(600, 0.1, 5);
  const auto model = feature_model(6);
  auto recs = records_from(data, constant_margin);
  recs[0].d_in_hat = 0.6;  // sets the normalizer above the constant
  auto split = build_regression_set(model, data, recs, 0.2, 7);
  const double c = 0.3 / split.normalizer;
  for (auto& t : split.train.targets) t = c;
  for (auto& t : split.val.targets) t = c;
  const auto result = train_pseudomargin(split, small_config(40), 8);
  for (std::size_t i = 0; i < split.val.size(); ++i) {
    CHECK(std::abs(result.net.score(split.val.features.row(i)) - c) < 0.02);
  }
}

TEST_CASE("training reduces validation error and keeps the best epoch") {
  const auto data = gen_two_moons(1000, 0.1, 9);
  const auto model = feature_model(10);
  const auto split = build_regression_set(model, data, records_from(data, smooth_margin), 0.2, 11);
  const auto result = train_pseudomargin(split, small_config(60), 12);
  const auto& h = result.history;
  REQUIRE(h.epochs.size() >= 2);
  CHECK(h.epochs.front().epoch == 0);
  CHECK(h.flag.empty());
  const auto best = h.epochs.at(h.best_epoch);
  CHECK(best.epoch == h.best_epoch);
  CHECK(best.val_mse <= 0.5 * h.epochs.front().val_mse);
  for (const auto& e : h.epochs) CHECK(best.val_mse <= e.val_mse);
  CHECK(regression_mse(result.net, split.val) == doctest::Approx(best.val_mse).epsilon(1e-12));

  const auto again = train_pseudomargin(split, small_config(60), 12);
  CHECK(again.net.parameters().at("pm.layer0.weights").data ==
        result.net.parameters().at("pm.layer0.weights").data);
}

TEST_CASE("zero epochs returns the initialized net with a flag") {
  const auto data = gen_two_moons(200, 0.1, 13);
  const auto split =
      build_regression_set(feature_model(14), data, records_from(data, smooth_margin), 0.2, 15);
  const auto result = train_pseudomargin(split, small_config(0), 16);
  CHECK_FALSE(result.history.flag.empty());
  CHECK(result.history.epochs.size() == 1);
  const auto init = PseudoMarginNet::initialize(split.train.features.cols(), {32, 32}, 16);
  CHECK(init.parameters().at("pm.layer0.weights").data ==
        result.net.parameters().at("pm.layer0.weights").data);
}

TEST_CASE("scores") {
  const auto net = PseudoMarginNet::initialize(4, {8, 8}, 17);
  const std::vector<double> z = {0.3, -1.0, 2.0, 0.5};
  CHECK(net.score(z) == net.score(z));
  for (double scale : {1.0, 10.0, 100.0}) {
    std::vector<double> big = z;
    for (auto& v : big) v *= scale;
    CHECK(net.score(big) > 0.0);
    CHECK(net.score(big) < 1.0);
  }
  CHECK_THROWS_AS(net.score(std::vector<double>{1.0, 2.0}), PseudoMarginError);

  SUBCASE("drop-in score column") {
    const auto data = gen_two_moons(50, 0.1, 18);
    const auto model = feature_model(19);
    const auto wide = PseudoMarginNet::initialize(model.feature_width(), {8}, 20);
    const auto column = pseudo_margin_scores(wide, model, data);
    REQUIRE(column.size() == data.size());
    for (std::size_t i = 0; i < data.size(); ++i) CHECK(column[i] == wide.score(model.features(data.input(i))));
    CHECK_THROWS_AS(pseudo_margin_scores(net, model, data), PseudoMarginError);
  }
}

TEST_CASE("persistence keeps parameters and normalizer bitwise") {
  auto net = PseudoMarginNet::initialize(3, {5, 4}, 21);
  net.set_normalizer(0.123456789012345);
  const auto path = std::filesystem::temp_directory_path() / "margin_audit_pseudo.ckpt";
  save_pseudomargin(net, path, {"abc", 4});
  const auto back = load_pseudomargin(path);
  CHECK(back.normalizer() == net.normalizer());
  for (const auto& [name, t] : net.parameters()) CHECK(back.parameters().at(name).data == t.data);
  const std::vector<double> z = {0.1, 0.2, -0.3};
  CHECK(back.score(z) == net.score(z));
  CHECK(back.margin(z) == net.margin(z));

  const auto classifier = feature_model(22);
  save_checkpoint(classifier, path);
  CHECK_THROWS(load_pseudomargin(path));
  std::filesystem::remove(path);
}
