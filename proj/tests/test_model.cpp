#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "margin_audit/checkpoint.hpp"
#include "margin_audit/finite_diff.hpp"
#include "margin_audit/model.hpp"
#include "margin_audit/rng.hpp"

using namespace margin_audit;
namespace fs = std::filesystem;

namespace {

Classifier linear_classifier(Tensor w, Tensor b) {
  FeatureExtractorSpec spec;
  spec.input_width = w.shape[1];
  return Classifier(spec, std::nullopt, {}, LinearHead{std::move(w), std::move(b)});
}

FeatureExtractorSpec mlp_spec(std::size_t in, std::vector<std::size_t> hidden) {
  FeatureExtractorSpec spec;
  spec.input_width = in;
  spec.hidden = hidden;
  spec.activations.assign(hidden.size(), Activation::Relu);
  return spec;
}

std::vector<double> random_input(Rng& rng, std::size_t n) {
  std::vector<double> x(n);
  for (auto& v : x) v = rng.uniform(-1.0, 1.0);
  return x;
}

}  // namespace

TEST_CASE("features") {
  SUBCASE("identity extractor") {
    const auto c = linear_classifier(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::vector({0, 0}));
    CHECK(c.features(std::vector<double>{0.25, -3.0}) == std::vector<double>{0.25, -3.0});
  }
  SUBCASE("single relu layer") {
    auto spec = mlp_spec(2, {2});
    Classifier c(spec, std::nullopt,
                 {DenseLayer{Tensor::matrix({{1, 0}, {0, 1}}), Tensor::vector({-1, -1})}},
                 LinearHead{Tensor::matrix({{1, 0}, {0, 1}}), Tensor::vector({0, 0})});
    CHECK(c.features(std::vector<double>{2, 0}) == std::vector<double>{1, 0});
  }
  SUBCASE("width mismatch") {
    const auto c = Classifier::initialize(mlp_spec(3, {4}), 2, 1);
    CHECK_THROWS_AS(c.features(std::vector<double>{1, 2}), ModelError);
  }
  SUBCASE("deterministic") {
    const auto c = Classifier::initialize(mlp_spec(3, {8, 8}), 3, 4);
    const std::vector<double> x = {0.1, 0.2, -0.3};
    CHECK(c.features(x) == c.features(x));
  }
}

TEST_CASE("logits and predict") {
  const auto c1 = linear_classifier(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::vector({0, 0}));
  CHECK(c1.logits(std::vector<double>{3, 4}) == std::vector<double>{3, 4});
  const auto c2 = linear_classifier(Tensor::matrix({{1, 0}, {-1, 0}}), Tensor::vector({0, 1}));
  CHECK(c2.logits(std::vector<double>{2, 9}) == std::vector<double>{2, -1});

  CHECK(predict_from_logits(std::vector<double>{2, 5, 3}) == 1);
  CHECK(predict_from_logits(std::vector<double>{4, 4}) == 0);

  Rng rng(11);
  const auto c = Classifier::initialize(mlp_spec(4, {16, 8}), 5, 9);
  for (int t = 0; t < 50; ++t) {
    const auto x = random_input(rng, 4);
    const auto z = c.features(x);
    const auto l = c.logits(x);
    // Decomposition identity, exactly.
    std::vector<double> manual(5);
    for (std::size_t k = 0; k < 5; ++k) {
      double s = c.head().biases[k];
      for (std::size_t j = 0; j < z.size(); ++j) s += c.head().weights.at(k, j) * z[j];
      manual[k] = s;
    }
    CHECK(l == manual);
    const auto p = c.predict(x);
    for (double v : l) CHECK(l[p] >= v);
    std::vector<double> shifted = l;
    for (auto& v : shifted) v += 123.0;
    CHECK(predict_from_logits(shifted) == p);
  }
}

TEST_CASE("invalid heads and specs are rejected") {
  CHECK_THROWS_AS(linear_classifier(Tensor::matrix({{1, 0}}), Tensor::vector({0})), ModelError);
  auto spec = mlp_spec(2, {3, 3, 3, 3, 3});
  CHECK_THROWS_AS(Classifier::initialize(spec, 2, 1), ModelError);
}

TEST_CASE("fan-in uniform initialization") {
  const auto c = Classifier::initialize(mlp_spec(6, {24}), 2, 3);
  const double limit = std::sqrt(6.0 / 6.0);
  for (double v : c.layers()[0].weights.data) CHECK(std::abs(v) <= limit);
  for (double v : c.layers()[0].biases.data) CHECK(v == 0.0);
  CHECK(Classifier::initialize(mlp_spec(6, {24}), 2, 3).parameters() == c.parameters());
}

TEST_CASE("graph path agrees with the direct forward and its gradient with finite differences") {
  Rng rng(21);
  auto spec = mlp_spec(5, {12, 7});
  spec.activations = {Activation::Tanh, Activation::Relu};
  const auto c = Classifier::initialize(spec, 3, 8);
  InputGradient grad(c);
  for (int t = 0; t < 10; ++t) {
    const auto x = random_input(rng, 5);
    CHECK(grad.evaluate(x) == c.logits(x));
    const auto f = [&](const Tensor& p, Tensor& g) {
      grad.evaluate(p.data);
      g = Tensor::vector(grad.difference_gradient(2, 0));
      const auto l = c.logits(p.data);
      return l[2] - l[0];
    };
    CHECK(finite_diff_check(f, Tensor::vector(x)).max_relative_error < 1e-5);
  }
}

TEST_CASE("conv stage") {
  FeatureExtractorSpec spec;
  spec.input_width = 36;
  spec.conv = ConvStage{Conv2dGeometry{1, 6, 6, 3, 2, 1}, Activation::Relu};
  spec.hidden = {10};
  spec.activations = {Activation::Relu};
  const auto c = Classifier::initialize(spec, 4, 2);
  CHECK(c.feature_width() == 10);
  Rng rng(1);
  InputGradient grad(c);
  const auto x = random_input(rng, 36);
  CHECK(grad.evaluate(x) == c.logits(x));
}

TEST_CASE("checkpoint round trip and failure modes") {
  const auto dir = fs::temp_directory_path() / "margin_audit_test_ckpt";
  fs::create_directories(dir);
  const auto path = dir / "model.ckpt";
  auto c = Classifier::initialize(mlp_spec(3, {16, 16}), 3, 5);
  c.metadata().training = "standard-at";
  c.metadata().train_epsilon = 0.1;
  save_checkpoint(c, path, {"abc123", 7});

  SUBCASE("round trip is bitwise") {
    const auto back = load_checkpoint(path);
    CHECK(back.parameters() == c.parameters());
    CHECK(back.metadata().training == "standard-at");
    CHECK(back.metadata().train_epsilon == 0.1);
    Rng rng(2);
    for (int t = 0; t < 100; ++t) {
      const auto x = random_input(rng, 3);
      CHECK(back.logits(x) == c.logits(x));
    }
    CHECK(read_container(path).header.at("config_hash") == "abc123");
  }
  SUBCASE("flipped payload byte fails the checksum") {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekg(-20, std::ios::end);
    char b;
    f.read(&b, 1);
    b ^= 0x10;
    f.seekp(-20, std::ios::end);
    f.write(&b, 1);
    f.close();
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointChecksumError);
  }
  SUBCASE("future version is rejected explicitly") {
    auto container = read_container(path);
    write_container(path, container, kCheckpointVersion + 1);
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointVersionError);
  }
}
