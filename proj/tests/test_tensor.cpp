#include <cmath>
#include <vector>

#include "doctest.h"
#include "hylite/rng.hpp"
#include "hylite/tensor.hpp"

using namespace hylite;

namespace {

Tensor leaf2d(Graph& g, std::size_t r, std::size_t c, std::vector<double> v, bool rg = false) {
  return g.leaf({r, c}, std::move(v), rg);
}

std::vector<double> random_vec(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = (rng.uniform() * 2.0 - 1.0) * scale;
  return v;
}

}  // namespace

TEST_CASE("matmul basics") {
  Graph g;
  SUBCASE("identity") {
    Tensor i2 = leaf2d(g, 2, 2, {1, 0, 0, 1});
    Tensor a = leaf2d(g, 2, 2, {1, 2, 3, 4});
    Tensor y = matmul(i2, a);
    CHECK(y.value()[0] == 1);
    CHECK(y.value()[1] == 2);
    CHECK(y.value()[2] == 3);
    CHECK(y.value()[3] == 4);
  }
  SUBCASE("hand multiplication") {
    Tensor a = leaf2d(g, 2, 2, {1, 2, 3, 4});
    Tensor b = leaf2d(g, 2, 1, {5, 6});
    Tensor y = matmul(a, b);
    CHECK(y.value()[0] == 17.0);
    CHECK(y.value()[1] == 39.0);
  }
  SUBCASE("zero annihilates") {
    Tensor z = g.zeros({2, 3}, false);
    Tensor b = leaf2d(g, 3, 2, {1, 2, 3, 4, 5, 6});
    Tensor y = matmul(z, b);
    for (double v : y.value()) CHECK(v == 0.0);
  }
  SUBCASE("inner extent mismatch") {
    Tensor a = leaf2d(g, 2, 3, {1, 2, 3, 4, 5, 6});
    Tensor b = leaf2d(g, 2, 2, {1, 2, 3, 4});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("ShapeMismatch"), Error);
  }
}

TEST_CASE("softmax_rows") {
  Graph g;
  SUBCASE("symmetry") {
    Tensor y = softmax_rows(leaf2d(g, 1, 2, {0, 0}));
    CHECK(y.value()[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(y.value()[1] == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("scalar exponentiation oracle") {
    // exp/sum computed independently ahead of time
    Tensor y = softmax_rows(leaf2d(g, 1, 3, {1, 2, 3}));
    CHECK(y.value()[0] == doctest::Approx(0.090030573170380458).epsilon(1e-14));
    CHECK(y.value()[1] == doctest::Approx(0.24472847105479765).epsilon(1e-14));
    CHECK(y.value()[2] == doctest::Approx(0.66524095577482189).epsilon(1e-14));
  }
  SUBCASE("shift invariance") {
    Tensor a = softmax_rows(leaf2d(g, 1, 3, {1001, 1002, 1003}));
    Tensor b = softmax_rows(leaf2d(g, 1, 3, {1, 2, 3}));
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(std::abs(a.value()[i] - b.value()[i]) <= 1e-12);
  }
  SUBCASE("non-finite rejected") {
    CHECK_THROWS_WITH_AS(softmax_rows(leaf2d(g, 1, 2, {1.0, std::nan("")})),
                         doctest::Contains("NonFinite"), Error);
    CHECK_THROWS_AS(softmax_rows(leaf2d(g, 1, 2, {1.0, HUGE_VAL})), Error);
  }
  SUBCASE("rows sum to one (property)") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      Rng rng(seed);
      const std::size_t r = 1 + rng.below(6), c = 1 + rng.below(8);
      Graph gg;
      Tensor y = softmax_rows(gg.leaf({r, c}, random_vec(rng, r * c, 50.0), false));
      for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += y.value()[i * c + j];
        CHECK(std::abs(s - 1.0) <= 1e-12);
      }
    }
  }
}

TEST_CASE("layer_norm") {
  Graph g;
  Tensor gamma1 = g.full({3}, 1.0, false);
  Tensor beta0 = g.zeros({3}, false);
  SUBCASE("zero-variance row maps to beta") {
    Tensor y = layer_norm(leaf2d(g, 1, 3, {5, 5, 5}), gamma1, beta0);
    for (double v : y.value()) CHECK(v == 0.0);
  }
  SUBCASE("closed-form mean/var oracle") {
    Tensor g2 = g.full({2}, 1.0, false);
    Tensor b2 = g.zeros({2}, false);
    Tensor y = layer_norm(leaf2d(g, 1, 2, {1, 3}), g2, b2, 1e-5);
    // (x - 2) / sqrt(1 + 1e-5), frozen from the closed form
    CHECK(y.value()[0] == doctest::Approx(-0.99999500003749969).epsilon(1e-14));
    CHECK(y.value()[1] == doctest::Approx(0.99999500003749969).epsilon(1e-14));
    Tensor yl = layer_norm(leaf2d(g, 1, 2, {1, 3}), g2, b2, 1e-12);
    CHECK(yl.value()[0] == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(yl.value()[1] == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("gamma zero collapses to beta") {
    Tensor gz = g.zeros({3}, false);
    Tensor bb = g.leaf({3}, {7, 8, 9}, false);
    Tensor y = layer_norm(leaf2d(g, 2, 3, {1, 2, 3, -4, 0, 4}), gz, bb);
    CHECK(y.value()[0] == 7);
    CHECK(y.value()[4] == 8);
    CHECK(y.value()[5] == 9);
  }
  SUBCASE("normalization property") {
    // eps = 1e-12 so the variance statement is tight; rows with variance
    // >= 1e-3 must come out with |mean| <= 1e-10 and variance within 1e-6 of 1.
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      Rng rng(seed);
      const std::size_t r = 1 + rng.below(4), d = 2 + rng.below(6);
      Graph gg;
      std::vector<double> data = random_vec(rng, r * d, 3.0);
      Tensor go = gg.full({d}, 1.0, false);
      Tensor bo = gg.zeros({d}, false);
      Tensor x = gg.leaf({r, d}, data, false);
      Tensor y = layer_norm(x, go, bo, 1e-12);
      for (std::size_t i = 0; i < r; ++i) {
        double mu_in = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu_in += data[i * d + j];
        mu_in /= double(d);
        double var_in = 0.0;
        for (std::size_t j = 0; j < d; ++j)
          var_in += (data[i * d + j] - mu_in) * (data[i * d + j] - mu_in);
        var_in /= double(d);
        if (var_in < 1e-3) continue;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += y.value()[i * d + j];
        mu /= double(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j)
          var += (y.value()[i * d + j] - mu) * (y.value()[i * d + j] - mu);
        var /= double(d);
        CHECK(std::abs(mu) <= 1e-10);
        CHECK(std::abs(var - 1.0) <= 1e-6);
      }
    }
  }
}

TEST_CASE("transpose2d") {
  Graph g;
  Tensor a = leaf2d(g, 2, 2, {1, 2, 3, 4});
  Tensor t = transpose2d(a);
  CHECK(t.value()[0] == 1);
  CHECK(t.value()[1] == 3);
  CHECK(t.value()[2] == 2);
  CHECK(t.value()[3] == 4);

  Rng rng(7);
  Tensor x = g.leaf({3, 5}, random_vec(rng, 15), false);
  Tensor tt = transpose2d(transpose2d(x));
  CHECK(tt.shape() == Shape{3, 5});
  CHECK(transpose2d(x).shape() == Shape{5, 3});
  for (std::size_t i = 0; i < 15; ++i) CHECK(tt.value()[i] == x.value()[i]);  // bitwise
}

TEST_CASE("elementwise ops") {
  Graph g;
  SUBCASE("add") {
    Tensor y = add(leaf2d(g, 1, 2, {1, 2}), leaf2d(g, 1, 2, {3, 4}));
    CHECK(y.value()[0] == 4);
    CHECK(y.value()[1] == 6);
  }
  SUBCASE("row broadcast") {
    Tensor y = add(leaf2d(g, 2, 2, {1, 2, 3, 4}), leaf2d(g, 1, 2, {10, 20}));
    CHECK(y.value()[0] == 11);
    CHECK(y.value()[3] == 24);
    Tensor z = sub(leaf2d(g, 1, 2, {10, 20}), leaf2d(g, 2, 2, {1, 2, 3, 4}));
    CHECK(z.value()[0] == 9);
    CHECK(z.value()[3] == 16);
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(add(leaf2d(g, 2, 2, {1, 2, 3, 4}), leaf2d(g, 2, 1, {1, 2})), Error);
  }
  SUBCASE("gelu odd point and oracle") {
    Tensor y = gelu(g.leaf({3}, {0.0, 3.0, 1.0}, false));
    CHECK(y.value()[0] == 0.0);
    // scalar tanh oracle values, frozen
    CHECK(y.value()[1] == doctest::Approx(2.996362607918227).epsilon(1e-14));
    CHECK(y.value()[2] == doctest::Approx(0.8411919906082767).epsilon(1e-14));
  }
  SUBCASE("mul_scalar") {
    Tensor y = mul_scalar(g.leaf({2}, {3, -4}, false), 0.5);
    CHECK(y.value()[0] == 1.5);
    CHECK(y.value()[1] == -2.0);
  }
}

TEST_CASE("mean_axis0 and l2_sq") {
  Graph g;
  Tensor m = mean_axis0(leaf2d(g, 2, 2, {1, 2, 3, 4}));
  CHECK(m.shape() == Shape{1, 2});
  CHECK(m.value()[0] == 2);
  CHECK(m.value()[1] == 3);

  CHECK(l2_sq(g.leaf({2}, {3, 4}, false)).item() == 25);

  Tensor rows = leaf2d(g, 3, 2, {5, 6, 5, 6, 5, 6});
  Tensor diff = sub(mean_axis0(rows), slice_rows(rows, 0, 1));
  CHECK(l2_sq(diff).item() == 0.0);
}

TEST_CASE("conv_pair") {
  Graph g;
  Tensor a = leaf2d(g, 1, 2, {1, 1});
  Tensor b = leaf2d(g, 1, 2, {3, 0});
  SUBCASE("selector") {
    Tensor y = conv_pair(a, b, g.leaf({2}, {1, 0}, false));
    CHECK(y.value()[0] == 1);
    CHECK(y.value()[1] == 1);
  }
  SUBCASE("average") {
    Tensor y = conv_pair(leaf2d(g, 1, 1, {2}), leaf2d(g, 1, 1, {4}), g.leaf({2}, {0.5, 0.5}, false));
    CHECK(y.value()[0] == 3);
  }
  SUBCASE("scalar oracle") {
    Tensor y = conv_pair(a, b, g.leaf({2}, {2, -1}, false));
    CHECK(y.value()[0] == -1);
    CHECK(y.value()[1] == 2);
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(conv_pair(a, leaf2d(g, 2, 1, {1, 2}), g.leaf({2}, {1, 0}, false)), Error);
  }
}

TEST_CASE("slice and concat") {
  Graph g;
  Tensor x = leaf2d(g, 3, 2, {1, 2, 3, 4, 5, 6});
  Tensor r = slice_rows(x, 1, 3);
  CHECK(r.shape() == Shape{2, 2});
  CHECK(r.value()[0] == 3);
  Tensor c = slice_cols(x, 1, 2);
  CHECK(c.shape() == Shape{3, 1});
  CHECK(c.value()[2] == 6);

  std::vector<Tensor> parts = {slice_rows(x, 0, 1), slice_rows(x, 1, 3)};
  Tensor back = concat_rows(parts);
  for (std::size_t i = 0; i < 6; ++i) CHECK(back.value()[i] == x.value()[i]);

  std::vector<Tensor> cparts = {slice_cols(x, 0, 1), slice_cols(x, 1, 2)};
  Tensor cback = concat_cols(cparts);
  for (std::size_t i = 0; i < 6; ++i) CHECK(cback.value()[i] == x.value()[i]);
}

TEST_CASE("backward contracts") {
  SUBCASE("quadratic") {
    Graph g;
    Tensor w = g.leaf({1}, {3}, true);
    Tensor loss = l2_sq(w);
    g.backward(loss);
    CHECK(w.grad()[0] == 6.0);
    CHECK(loss.grad()[0] == 1.0);  // d loss / d loss
  }
  SUBCASE("accumulation across calls") {
    Graph g;
    Tensor w = g.leaf({1}, {3}, true);
    Tensor loss = l2_sq(w);
    g.backward(loss);
    g.backward(loss);
    CHECK(w.grad()[0] == 12.0);
    g.zero_grad();
    CHECK(w.grad()[0] == 0.0);
  }
  SUBCASE("fan-out sums per-path gradients") {
    Graph g;
    Tensor w = g.leaf({1, 2}, {1.0, 2.0}, true);
    // w feeds two consumers; d/dw (l2(w) + l2(2w)) = 2w + 8w = 10w
    Tensor loss = add(l2_sq(w), l2_sq(mul_scalar(w, 2.0)));
    g.backward(loss);
    CHECK(w.grad()[0] == doctest::Approx(10.0).epsilon(1e-15));
    CHECK(w.grad()[1] == doctest::Approx(20.0).epsilon(1e-15));
  }
  SUBCASE("non-scalar loss rejected") {
    Graph g;
    Tensor w = g.leaf({1, 2}, {1.0, 2.0}, true);
    CHECK_THROWS_WITH_AS(g.backward(w), doctest::Contains("NotScalar"), Error);
  }
  SUBCASE("matmul chain matches finite differences") {
    Rng rng(11);
    std::vector<double> b = random_vec(rng, 9);
    std::vector<double> x0 = random_vec(rng, 9);
    auto f = [&b](Graph& g, Tensor x) {
      Tensor bb = g.leaf({3, 3}, b, false);
      return l2_sq(matmul(x, bb));
    };
    auto res = grad_check(f, {3, 3}, x0, 1e-6);
    CHECK(res.max_rel_err <= 1e-4);
  }
}

TEST_CASE("graph truncation keeps leaves") {
  Graph g;
  Tensor w = g.leaf({1}, {2.0}, true);
  const std::size_t mark = g.size();
  for (int it = 0; it < 3; ++it) {
    g.truncate(mark);
    Tensor loss = l2_sq(w);
    g.backward(loss);
  }
  CHECK(w.grad()[0] == doctest::Approx(12.0).epsilon(1e-15));
  CHECK(g.size() == mark + 1);
}

TEST_CASE("grad_check core cases") {
  SUBCASE("identity is exact") {
    // power-of-two point and step keep the central difference exact
    auto res = grad_check([](Graph&, Tensor x) { return x; }, {1}, std::vector<double>{1.0},
                          0x1.0p-20);
    CHECK(res.max_rel_err == 0.0);
  }
  SUBCASE("softmax of matmul") {
    Rng rng(3);
    std::vector<double> w = random_vec(rng, 16);
    std::vector<double> x0 = random_vec(rng, 16);
    auto f = [&w](Graph& g, Tensor x) {
      Tensor ww = g.leaf({4, 4}, w, false);
      Tensor s = softmax_rows(matmul(x, ww));
      // reduce to scalar through a fixed projection
      Tensor p = g.full({4, 1}, 1.0, false);
      return l2_sq(matmul(s, p));
    };
    CHECK(grad_check(f, {4, 4}, x0, 1e-6).max_rel_err <= 1e-4);
  }
  // layer_norm on a constant row is skipped by design: the row variance is 0,
  // the normalized output is beta for every input, and the directional
  // derivative is undefined at that singular point.
}

TEST_CASE("per-op gradient property, 100 seeds") {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(Rng::mix(99, seed));
    const std::size_t r = 2 + rng.below(3);
    const std::size_t c = 2 + rng.below(3);
    std::vector<double> aux = random_vec(rng, r * c);
    std::vector<double> vec = random_vec(rng, c);
    std::vector<double> x0 = random_vec(rng, r * c);
    std::vector<double> proj = random_vec(rng, r * c);
    std::vector<double> mat = random_vec(rng, c * c);

    auto scalarize = [proj](Graph& g, Tensor t) {
      Tensor p = g.leaf(t.shape(), std::vector<double>(proj.begin(), proj.begin() + t.numel()),
                        false);
      return l2_sq(add(t, p));
    };

    using Fn = std::function<Tensor(Graph&, Tensor)>;
    std::vector<Fn> ops = {
        [&](Graph& g, Tensor x) { return scalarize(g, matmul(x, g.leaf({c, c}, mat, false))); },
        [&](Graph& g, Tensor x) { return scalarize(g, softmax_rows(x)); },
        [&](Graph& g, Tensor x) {
          return scalarize(g, layer_norm(x, g.leaf({c}, vec, false), g.leaf({c}, vec, false)));
        },
        [&](Graph& g, Tensor x) { return scalarize(g, transpose2d(transpose2d(x))); },
        [&](Graph& g, Tensor x) { return scalarize(g, add(x, g.leaf({r, c}, aux, false))); },
        [&](Graph& g, Tensor x) { return scalarize(g, sub(x, g.leaf({1, c}, vec, false))); },
        [&](Graph& g, Tensor x) { return scalarize(g, mul_scalar(x, -1.7)); },
        [&](Graph& g, Tensor x) { return scalarize(g, gelu(x)); },
        [&](Graph& g, Tensor x) { return l2_sq(mean_axis0(x)); },
        [&](Graph& g, Tensor x) { return l2_sq(x); },
        [&](Graph& g, Tensor x) {
          return scalarize(g, conv_pair(x, g.leaf({r, c}, aux, false), g.leaf({2}, {0.7, -0.4}, false)));
        },
        [&](Graph& g, Tensor x) { return l2_sq(slice_rows(x, 0, r - 1)); },
        [&](Graph& g, Tensor x) { return l2_sq(slice_cols(x, 1, c)); },
        [&](Graph& g, Tensor x) {
          std::vector<Tensor> parts = {x, g.leaf({r, c}, aux, false)};
          return l2_sq(concat_rows(parts));
        },
        [&](Graph& g, Tensor x) {
          std::vector<Tensor> parts = {x, g.leaf({r, c}, aux, false)};
          return l2_sq(concat_cols(parts));
        },
    };
    const auto& f = ops[seed % ops.size()];
    auto res = grad_check(f, {r, c}, x0, 1e-6);
    CHECK(res.max_rel_err <= 1e-4);
    ++checked;
  }
  CHECK(checked == 100);
}

TEST_CASE("cross_entropy gradient and targets") {
  Graph g;
  Tensor logits = g.leaf({2, 3}, {0.3, -0.2, 0.9, 1.0, 0.0, -1.0}, true);
  std::vector<int> targets = {2, 0};
  Tensor loss = cross_entropy(logits, targets);
  g.backward(loss);
  CHECK(loss.grad()[0] == 1.0);

  std::vector<int> bad = {3, 0};
  CHECK_THROWS_WITH_AS(cross_entropy(logits, bad), doctest::Contains("TargetOutOfRange"), Error);
  std::vector<int>too_few = {0};
  CHECK_THROWS_AS(cross_entropy(logits, too_few), Error);

  auto f = [&targets](Graph& gg, Tensor x) { return cross_entropy(x, targets); };
  CHECK(grad_check(f, {2, 3}, std::vector<double>{0.3, -0.2, 0.9, 1.0, 0.0, -1.0}, 1e-6)
            .max_rel_err <= 1e-4);
}
