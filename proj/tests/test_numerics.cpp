#include <doctest.h>

#include <cmath>

#include "margin_audit/finite_diff.hpp"
#include "margin_audit/graph.hpp"
#include "margin_audit/rng.hpp"

using namespace margin_audit;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = scale * rng.normal();
  return t;
}

// Scalar function of one leaf of `g` through `out`; gradient via backward.
DifferentiableFunction through_graph(Graph& g, NodeId out, const std::string& leaf) {
  return [&g, out, leaf](const Tensor& p, Tensor& grad) {
    g.bind(leaf, p);
    const double v = g.forward(out).data[0];
    grad = g.backward(out).at(leaf);
    return v;
  };
}

}  // namespace

TEST_CASE("forward_eval examples") {
  SUBCASE("identity graph") {
    Graph g;
    const auto x = g.leaf("x");
    CHECK(g.forward(x, {{"x", Tensor::vector({1.0, 2.0})}}) == Tensor::vector({1.0, 2.0}));
  }
  SUBCASE("affine with identity weights") {
    Graph g;
    const auto y = g.affine(g.leaf("x"), g.leaf("w"), g.leaf("b"));
    const auto& out = g.forward(y, {{"x", Tensor::vector({3, 4})},
                                    {"w", Tensor::matrix({{1, 0}, {0, 1}})},
                                    {"b", Tensor::vector({0, 0})}});
    CHECK(out == Tensor::vector({3, 4}));
  }
  SUBCASE("relu of affine with negative pre-activation") {
    Graph g;
    const auto pre = g.affine(g.leaf("x"), g.leaf("w"), g.leaf("b"));
    const auto y = g.relu(pre);
    const auto& out = g.forward(y, {{"x", Tensor::vector({1, 1})},
                                    {"w", Tensor::matrix({{1, -1}})},
                                    {"b", Tensor::vector({-2})}});
    CHECK(out == Tensor::vector({0}));
    CHECK(g.value(pre) == Tensor::vector({-2}));
  }
}

TEST_CASE("forward_eval errors name the node") {
  Graph g;
  const auto y = g.affine(g.leaf("x"), g.leaf("w"), g.leaf("b"));
  g.bind("x", Tensor::vector({1, 2, 3}));
  g.bind("w", Tensor::matrix({{1, 0}}));
  g.bind("b", Tensor::vector({0}));
  try {
    g.forward(y);
    FAIL("expected shape error");
  } catch (const NumericsError& e) {
    CHECK(std::string(e.what()).find("affine") != std::string::npos);
  }

  Graph h;
  const auto z = h.exp(h.leaf("x"));
  h.bind("x", Tensor::vector({1000.0}));
  CHECK_THROWS_WITH_AS(h.forward(z), doctest::Contains("exp"), NumericsError);

  Graph u;
  const auto v = u.relu(u.leaf("unbound"));
  CHECK_THROWS_AS(u.forward(v), NumericsError);
}

TEST_CASE("backward_grad examples") {
  SUBCASE("bilinear form") {
    Graph g;
    const auto y = g.mul(g.leaf("w"), g.leaf("x"));
    g.forward(y, {{"w", Tensor::vector({2})}, {"x", Tensor::vector({3})}});
    const auto grads = g.backward(y, Tensor::vector({1}));
    CHECK(grads.at("x") == Tensor::vector({2}));
    CHECK(grads.at("w") == Tensor::vector({3}));
  }
  SUBCASE("relu inactive unit and the kink") {
    Graph g;
    const auto y = g.relu(g.leaf("x"));
    g.forward(y, {{"x", Tensor::vector({-1.0, 0.0, 2.0})}});
    const auto grads = g.backward(y, Tensor::vector({1, 1, 1}));
    CHECK(grads.at("x") == Tensor::vector({0.0, 0.0, 1.0}));
  }
  SUBCASE("backward before forward") {
    Graph g;
    const auto y = g.relu(g.leaf("x"));
    g.bind("x", Tensor::vector({1}));
    CHECK_THROWS_AS(g.backward(y, Tensor::vector({1})), NumericsError);
  }
  SUBCASE("backward leaves values unchanged") {
    Graph g;
    const auto y = g.tanh(g.affine(g.leaf("x"), g.leaf("w"), g.leaf("b")));
    g.forward(y, {{"x", Tensor::vector({0.3, -0.2})},
                  {"w", Tensor::matrix({{1, 2}, {3, 4}})},
                  {"b", Tensor::vector({0.1, 0.2})}});
    const Tensor before = g.value(y);
    (void)g.backward(y, Tensor::vector({1, -1}));
    CHECK(g.value(y) == before);
  }
  SUBCASE("restricted backward omits other leaves") {
    Graph g;
    const auto y = g.sum(g.mul(g.leaf("a"), g.leaf("b")));
    g.forward(y, {{"a", Tensor::vector({1, 2})}, {"b", Tensor::vector({3, 5})}});
    const auto grads = g.backward(y, Tensor::scalar(1.0), {"a"});
    CHECK(grads.size() == 1);
    CHECK(grads.at("a") == Tensor::vector({3, 5}));
  }
}

TEST_CASE("finite_diff_check examples") {
  SUBCASE("square") {
    const auto f = [](const Tensor& p, Tensor& g) {
      g = Tensor::vector({2.0 * p[0]});
      return p[0] * p[0];
    };
    CHECK(finite_diff_check(f, Tensor::vector({3.0}), 1e-6).max_relative_error < 1e-8);
  }
  SUBCASE("sum of softmax is constant") {
    Graph g;
    const auto s = g.sum(g.exp(g.log_softmax(g.leaf("x"))));
    Rng rng(3);
    const auto report = finite_diff_check(through_graph(g, s, "x"), random_tensor(rng, {6}));
    CHECK(report.max_absolute_error < 1e-6);
  }
  SUBCASE("invalid step and non-finite values") {
    const auto f = [](const Tensor& p, Tensor& g) {
      g = Tensor::vector({1.0});
      return p[0] > 0 ? std::log(p[0]) : std::nan("");
    };
    CHECK_THROWS_AS(finite_diff_check(f, Tensor::vector({1.0}), 0.0), NumericsError);
    CHECK_THROWS_AS(finite_diff_check(f, Tensor::vector({-1.0}), 1e-6), NumericsError);
  }
}

TEST_CASE("every primitive agrees with central differences") {
  Rng rng(17);
  SUBCASE("affine + tanh + mse") {
    for (int trial = 0; trial < 5; ++trial) {
      Graph g;
      const auto y = g.tanh(g.affine(g.leaf("x"), g.leaf("w"), g.leaf("b")));
      const auto loss = g.mse(y, g.leaf("t"));
      const Bindings base = {{"x", random_tensor(rng, {3, 4})},
                             {"w", random_tensor(rng, {2, 4}, 0.5)},
                             {"b", random_tensor(rng, {2})},
                             {"t", random_tensor(rng, {3, 2})}};
      for (const auto& [name, value] : base) {
        g.bind_all(base);
        CHECK(finite_diff_check(through_graph(g, loss, name), value).max_relative_error < 1e-5);
      }
    }
  }
  SUBCASE("softmax cross entropy and log-softmax KL") {
    for (int trial = 0; trial < 5; ++trial) {
      Graph g;
      const auto z = g.leaf("z");
      const auto t = g.leaf("t");
      const auto ce = g.softmax_cross_entropy(z, t);
      const auto lq = g.log_softmax(g.leaf("q"));
      const auto lp = g.log_softmax(z);
      const auto kl = g.mean_row_sum(g.mul(g.exp(lp), g.sub(lp, lq)));
      const auto total = g.add(ce, g.scale(kl, 0.7));
      Tensor target = Tensor::zeros({4, 3});
      for (std::size_t r = 0; r < 4; ++r) target.at(r, rng.below(3)) = 1.0;
      const Bindings base = {{"z", random_tensor(rng, {4, 3}, 2.0)},
                             {"q", random_tensor(rng, {4, 3}, 2.0)},
                             {"t", target}};
      for (const std::string name : {"z", "q"}) {
        g.bind_all(base);
        CHECK(finite_diff_check(through_graph(g, total, name), base.at(name)).max_relative_error <
              1e-5);
      }
    }
  }
  SUBCASE("sigmoid, sub, mean, sum") {
    for (int trial = 0; trial < 5; ++trial) {
      Graph g;
      const auto a = g.leaf("a");
      const auto s = g.sigmoid(g.sub(a, g.leaf("b")));
      const auto out = g.add(g.mean(s), g.scale(g.sum(g.mul(s, s)), 0.3));
      const Bindings base = {{"a", random_tensor(rng, {5})}, {"b", random_tensor(rng, {5})}};
      for (const std::string name : {"a", "b"}) {
        g.bind_all(base);
        CHECK(finite_diff_check(through_graph(g, out, name), base.at(name)).max_relative_error <
              1e-5);
      }
    }
  }
  SUBCASE("conv2d + relu away from kinks") {
    for (int trial = 0; trial < 5; ++trial) {
      Conv2dGeometry geo{2, 5, 4, 3, 2, 1};
      Graph g;
      const auto c = g.conv2d(g.leaf("x"), g.leaf("k"), g.leaf("b"), geo);
      const auto out = g.sum(g.mul(g.tanh(c), g.leaf("r")));
      const Bindings base = {{"x", random_tensor(rng, {2, geo.input_size()})},
                             {"k", random_tensor(rng, {2, 18}, 0.3)},
                             {"b", random_tensor(rng, {2})},
                             {"r", random_tensor(rng, {2, geo.output_size()})}};
      for (const std::string name : {"x", "k", "b"}) {
        g.bind_all(base);
        CHECK(finite_diff_check(through_graph(g, out, name), base.at(name)).max_relative_error <
              1e-5);
      }
    }
  }
}

TEST_CASE("strided conv2d matches a hand computation") {
  Conv2dGeometry geo{1, 4, 4, 2, 1, 2};
  Graph g;
  const auto c = g.conv2d(g.leaf("x"), g.leaf("k"), g.leaf("b"), geo);
  std::vector<double> img(16);
  for (int i = 0; i < 16; ++i) img[i] = i;
  const auto& out = g.forward(c, {{"x", Tensor::vector(img)},
                                  {"k", Tensor::matrix({{1, 0, 0, 1}})},
                                  {"b", Tensor::vector({0.5})}});
  // Windows at (0,0),(0,2),(2,0),(2,2): x[r][c] + x[r+1][c+1]
  CHECK(out == Tensor::vector({0 + 5 + 0.5, 2 + 7 + 0.5, 8 + 13 + 0.5, 10 + 15 + 0.5}));
}

TEST_CASE("forward is deterministic and side-effect free on bindings") {
  Rng rng(5);
  const Bindings b = {{"x", random_tensor(rng, {8, 3})},
                      {"w", random_tensor(rng, {4, 3})},
                      {"c", random_tensor(rng, {4})}};
  Graph g1;
  Graph g2;
  const auto y1 = g1.relu(g1.affine(g1.leaf("x"), g1.leaf("w"), g1.leaf("c")));
  const auto y2 = g2.relu(g2.affine(g2.leaf("x"), g2.leaf("w"), g2.leaf("c")));
  const Bindings copy = b;
  CHECK(g1.forward(y1, b) == g2.forward(y2, b));
  CHECK(b == copy);
}
