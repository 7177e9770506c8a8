#include <doctest.h>

#include <cmath>

#include "margin_audit/attacks.hpp"
#include "margin_audit/training.hpp"

using namespace margin_audit;

namespace {

FeatureExtractorSpec mlp_spec(std::size_t in, std::vector<std::size_t> hidden) {
  FeatureExtractorSpec spec;
  spec.input_width = in;
  spec.hidden = hidden;
  spec.activations.assign(hidden.size(), Activation::Relu);
  return spec;
}

Dataset separable_blobs() {
  return gen_gaussian_blobs(200, {{-2.0, 0.0}, {2.0, 0.0}}, 0.3, 4);
}

}  // namespace

TEST_CASE("optimizer updates") {
  SUBCASE("plain sgd") {
    OptimizerConfig cfg;
    cfg.method = OptimizerMethod::Sgd;
    cfg.learning_rate = 0.1;
    Optimizer opt(cfg);
    Bindings p{{"w", Tensor::vector({1.0, -2.0})}};
    Gradients g{{"w", Tensor::vector({0.5, 1.0})}};
    opt.step(p, g, 0);
    CHECK(p["w"].data[0] == doctest::Approx(0.95));
    CHECK(p["w"].data[1] == doctest::Approx(-2.1));
  }
  SUBCASE("momentum accumulates") {
    OptimizerConfig cfg;
    cfg.method = OptimizerMethod::SgdMomentum;
    cfg.learning_rate = 1.0;
    cfg.momentum = 0.5;
    Optimizer opt(cfg);
    Bindings p{{"w", Tensor::vector({0.0})}};
    Gradients g{{"w", Tensor::vector({1.0})}};
    opt.step(p, g, 0);
    opt.step(p, g, 0);
    CHECK(p["w"].data[0] == doctest::Approx(-2.5));
  }
  SUBCASE("first adam step has the learning-rate magnitude") {
    OptimizerConfig cfg;
    cfg.learning_rate = 0.01;
    Optimizer opt(cfg);
    Bindings p{{"w", Tensor::vector({0.0, 0.0})}};
    Gradients g{{"w", Tensor::vector({3.0, -1e-3})}};
    opt.step(p, g, 0);
    CHECK(p["w"].data[0] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(p["w"].data[1] == doctest::Approx(0.01).epsilon(1e-4));
  }
  SUBCASE("step decay") {
    OptimizerConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.decay_factor = 0.5;
    cfg.decay_every = 10;
    CHECK(cfg.rate_at(9) == doctest::Approx(0.1));
    CHECK(cfg.rate_at(10) == doctest::Approx(0.05));
    CHECK(cfg.rate_at(25) == doctest::Approx(0.025));
  }
  SUBCASE("invalid settings") {
    OptimizerConfig cfg;
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), OptimizerError);
    cfg = {};
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), OptimizerError);
    CHECK_THROWS_AS(parse_optimizer("rmsprop"), OptimizerError);
    CHECK(parse_optimizer("sgd-momentum") == OptimizerMethod::SgdMomentum);
  }
}

TEST_CASE("standard training") {
  const auto data = separable_blobs();
  OptimizerConfig opt;
  opt.epochs = 50;
  opt.seed = 2;
  SUBCASE("separable blobs are fit perfectly") {
    const auto r = train_standard(mlp_spec(2, {8}), data, opt);
    CHECK(r.history.final_train_accuracy == 1.0);
    REQUIRE(r.history.epochs.size() == 50);
    for (const auto& e : r.history.epochs) CHECK(std::isfinite(e.loss));
    CHECK(r.history.epochs.back().loss < r.history.epochs.front().loss);
    CHECK(r.classifier.metadata().training == "standard");
  }
  SUBCASE("zero learning rate is rejected") {
    opt.learning_rate = 0.0;
    CHECK_THROWS_AS(train_standard(mlp_spec(2, {8}), data, opt), OptimizerError);
  }
  SUBCASE("same seed gives identical parameters") {
    opt.epochs = 5;
    const auto a = train_standard(mlp_spec(2, {8}), data, opt);
    const auto b = train_standard(mlp_spec(2, {8}), data, opt);
    CHECK(a.classifier.parameters() == b.classifier.parameters());
  }
  SUBCASE("width mismatch") {
    CHECK_THROWS_AS(train_standard(mlp_spec(3, {8}), data, opt), TrainingError);
  }
  SUBCASE("divergence names the epoch") {
    opt.method = OptimizerMethod::Sgd;
    opt.learning_rate = 1e300;
    try {
      train_standard(mlp_spec(2, {8}), data, opt);
      FAIL("expected divergence");
    } catch (const TrainingError& e) {
      CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
    }
  }
  SUBCASE("class logit scale must match the class count") {
    TrainOptions options;
    options.class_logit_scale = {1.0};
    CHECK_THROWS_AS(train_standard(mlp_spec(2, {8}), data, opt, options), TrainingError);
  }
}

TEST_CASE("adversarial training") {
  const auto data = gen_two_moons(200, 0.1, 1);
  const auto probe = gen_two_moons(60, 0.1, 2);
  OptimizerConfig opt;
  opt.epochs = 4;
  opt.seed = 5;
  AdvTrainConfig adv;
  adv.epsilon = 0.1;

  SUBCASE("zero budget reproduces standard training") {
    adv.epsilon = 0.0;
    const auto a = train_adversarial(mlp_spec(2, {8}), data, adv, opt);
    const auto s = train_standard(mlp_spec(2, {8}), data, opt);
    CHECK(a.classifier.parameters() == s.classifier.parameters());
    for (std::size_t e = 0; e < a.history.epochs.size(); ++e) {
      CHECK(a.history.epochs[e].loss == s.history.epochs[e].loss);
    }
  }
  SUBCASE("history records probe robust accuracy") {
    TrainOptions options;
    options.probe = &probe;
    for (auto method : {AdvMethod::StandardAt, AdvMethod::Trades}) {
      adv.method = method;
      for (Norm p : {Norm::Linf, Norm::L2}) {
        adv.norm = p;
        const auto r = train_adversarial(mlp_spec(2, {8}), data, adv, opt, options);
        REQUIRE(r.history.epochs.size() == 4);
        for (const auto& e : r.history.epochs) {
          REQUIRE(e.probe_robust_accuracy.has_value());
          CHECK(*e.probe_robust_accuracy >= 0.0);
          CHECK(*e.probe_robust_accuracy <= 1.0);
          CHECK(std::isfinite(e.loss));
        }
        CHECK(r.classifier.metadata().train_epsilon == 0.1);
        CHECK(r.classifier.metadata().training == adv_method_name(method));
        const auto j = r.history.to_json();
        CHECK(j["epochs"].size() == 4);
      }
    }
  }
  SUBCASE("deterministic") {
    adv.method = AdvMethod::Trades;
    const auto a = train_adversarial(mlp_spec(2, {8}), data, adv, opt);
    const auto b = train_adversarial(mlp_spec(2, {8}), data, adv, opt);
    CHECK(a.classifier.parameters() == b.classifier.parameters());
  }
  SUBCASE("invalid configuration") {
    adv.steps = 0;
    CHECK_THROWS_AS(adv.validate(), TrainingError);
    adv = {};
    adv.method = AdvMethod::Trades;
    adv.trades_beta = 0.0;
    CHECK_THROWS_AS(adv.validate(), TrainingError);
    adv = {};
    adv.epsilon = -0.1;
    CHECK_THROWS_AS(adv.validate(), TrainingError);
  }
}

TEST_CASE("trades loss approaches cross-entropy as beta vanishes") {
  const auto c = Classifier::initialize(mlp_spec(2, {8}), 2, 3);
  const auto x = Tensor::matrix({{0.1, 0.2}, {-0.5, 0.3}, {1.0, -1.0}});
  const auto xa = Tensor::matrix({{0.2, 0.1}, {-0.4, 0.4}, {0.9, -0.9}});
  const std::vector<std::size_t> y = {0, 1, 1};
  const double ce = cross_entropy_loss(c, x, y);
  CHECK(std::abs(trades_loss(c, x, xa, y, 1e-9) - ce) < 1e-6);
  CHECK(trades_loss(c, x, x, y, 6.0) == doctest::Approx(ce).epsilon(1e-12));
  CHECK(trades_loss(c, x, xa, y, 1.0) > ce);
}
