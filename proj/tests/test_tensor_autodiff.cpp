#include <cmath>

#include "doctest.h"
#include "msfa/autodiff.hpp"
#include "msfa/errors.hpp"
#include "msfa/gradcheck.hpp"
#include "msfa/rng.hpp"
#include "oracles.hpp"

using namespace msfa;
using ad::Graph;
using ad::Var;

TEST_SUITE("tensor_autodiff") {

TEST_CASE("tensor shape and element count agree") {
  Tensor t(Shape{2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(shape_size(t.shape()) == t.size());
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK(Tensor::scalar(3.5).item() == 3.5);
}

TEST_CASE("softmax closed forms") {
  Graph g;
  auto a = ad::softmax(g.constant(Tensor::vector({0, 0})), 0).value();
  CHECK(a[0] == doctest::Approx(0.5).epsilon(1e-15));
  auto b = ad::softmax(g.constant(Tensor::vector({0, std::log(3.0)})), 0).value();
  CHECK(b[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(b[1] == doctest::Approx(0.75).epsilon(1e-14));
  auto c = ad::softmax(g.constant(Tensor::vector({5, 5, 5})), 0).value();
  for (double v : c.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(ad::softmax(g.constant(Tensor(Shape{0})), 0), ShapeError);
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
  Rng rng(1);
  Graph g;
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = uniform_tensor({3, 7}, -30, 30, rng);
    Tensor shifted = x;
    for (auto& v : shifted.data()) v += 12.25;
    auto s = ad::softmax(g.constant(x), 1).value();
    auto s2 = ad::softmax(g.constant(shifted), 1).value();
    for (std::size_t r = 0; r < 3; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        CHECK(s.at({r, c}) >= 0.0);
        CHECK(std::abs(s.at({r, c}) - s2.at({r, c})) < 1e-12);
        sum += s.at({r, c});
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("sigmoid values") {
  Graph g;
  auto s = ad::sigmoid(g.constant(Tensor::vector({0.0, std::log(3.0), 40.0, 800.0, -800.0}))).value();
  CHECK(s[0] == 0.5);
  CHECK(s[1] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(std::abs(s[2] - 1.0) < 1e-15);
  CHECK(std::isfinite(s[3]));
  CHECK(std::isfinite(s[4]));
  Rng rng(3);
  Tensor x = uniform_tensor({100}, -20, 20, rng);
  Tensor neg = x;
  for (auto& v : neg.data()) v = -v;
  auto a = ad::sigmoid(g.constant(x)).value();
  auto b = ad::sigmoid(g.constant(neg)).value();
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(a[i] > 0.0);
    CHECK(a[i] < 1.0);
    CHECK(std::abs(a[i] - (1.0 - b[i])) < 1e-15);
  }
}

TEST_CASE("backward of sum and sum of squares") {
  ad::ParameterSet p;
  auto x = p.add("x", Tensor::vector({1.0, 2.0}));
  auto unused = p.add("unused", Tensor(Shape{2, 2}, 7.0));
  {
    Graph g(&p);
    auto grads = g.backward(ad::sum(g.param(x)));
    CHECK(grads[x.index] == Tensor::vector({1.0, 1.0}));
    CHECK(grads[unused.index] == Tensor(Shape{2, 2}));
  }
  {
    Graph g(&p);
    auto v = g.param(x);
    auto grads = g.backward(ad::sum(v * v));
    CHECK(grads[x.index] == Tensor::vector({2.0, 4.0}));
  }
}

TEST_CASE("backward rejects non-scalar loss and NaN forward values") {
  ad::ParameterSet p;
  auto x = p.add("x", Tensor::vector({1.0, 2.0}));
  Graph g(&p);
  CHECK_THROWS_AS(g.backward(g.param(x)), ShapeError);
  Graph g2(&p);
  auto bad = ad::sum(ad::log(g2.param(x) - 3.0 * g2.constant(Tensor::vector({1.0, 1.0}))));
  CHECK_THROWS_AS(g2.backward(bad), AnomalyError);
}

TEST_CASE("backward visits every node once and is deterministic") {
  Rng rng(9);
  ad::ParameterSet p;
  auto w = p.add("w", uniform_tensor({4, 4}, -1, 1, rng));
  auto b = p.add("b", uniform_tensor({4}, -1, 1, rng));
  const Tensor xin = uniform_tensor({4}, -1, 1, rng);
  auto run = [&] {
    Graph g(&p);
    auto h = ad::sigmoid(ad::matmul(g.param(w), g.constant(xin)) + g.param(b));
    auto loss = ad::sum(h * h);
    auto grads = g.backward(loss);
    return std::pair{grads, g.last_backward_visits()};
  };
  auto [g1, n1] = run();
  auto [g2, n2] = run();
  CHECK(n1 == n2);
  CHECK(n1 > 0);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(bit_identical(g1[i], g2[i]));
}

TEST_CASE("conv3d matches the loop oracle") {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = uniform_tensor({2, 3, 4, 5}, -1, 1, rng);
    const Tensor w = uniform_tensor({3, 2, 3, 3, 3}, -1, 1, rng);
    const Tensor b = uniform_tensor({3}, -1, 1, rng);
    Graph g;
    auto y = ad::conv3d(g.constant(x), g.constant(w), g.constant(b)).value();
    CHECK(max_abs_diff(y, oracle::conv3d(x, w, b)) < 1e-12);
  }
}

TEST_CASE("f32 conv stays close to f64 conv") {
  Rng rng(5);
  const Tensor x = uniform_tensor({2, 4, 4, 4}, -1, 1, rng);
  const Tensor w = uniform_tensor({2, 2, 3, 3, 3}, -1, 1, rng);
  const Tensor b = uniform_tensor({2}, -1, 1, rng);
  Graph g64;
  Graph g32(nullptr, ad::Precision::f32);
  auto a = ad::conv3d(g64.constant(x), g64.constant(w), g64.constant(b)).value();
  auto c = ad::conv3d(g32.constant(x), g32.constant(w), g32.constant(b)).value();
  CHECK(max_abs_diff(a, c) < 1e-5);
}

TEST_CASE("finite difference check: linear, sigmoid-matmul chain, dead parameter") {
  Rng rng(6);
  ad::ParameterSet p;
  auto w = p.add("w", uniform_tensor({4, 4}, -1, 1, rng));
  auto dead = p.add("dead", uniform_tensor({3}, -1, 1, rng));
  const Tensor x = uniform_tensor({4}, -1, 1, rng);
  const Tensor r = uniform_tensor({4}, -1, 1, rng);

  auto linear = [&](Graph& g) { return ad::sum(ad::matmul(g.param(w), g.constant(x)) * g.constant(r)); };
  auto rep = ad::finite_diff_check(p, linear, w, 1e-4);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err < 1e-9);

  auto chain = [&](Graph& g) {
    return ad::sum(ad::sigmoid(ad::matmul(g.param(w), ad::sigmoid(ad::matmul(g.param(w), g.constant(x))))));
  };
  CHECK(ad::finite_diff_check(p, chain, w, 1e-4).pass);

  auto dead_rep = ad::finite_diff_check(p, chain, dead, 1e-4);
  CHECK(dead_rep.pass);
  CHECK(dead_rep.max_rel_err == 0.0);
  CHECK(dead_rep.coords_checked == 3);
}

TEST_CASE("finite difference check catches a wrong gradient") {
  ad::ParameterSet p;
  auto x = p.add("x", Tensor::vector({0.3, -0.2, 0.8}));
  // d/dx of the recorded op claims 2x although the forward value is x^3.
  auto cube_with_bad_grad = [&](Graph& g) {
    Var v = g.param(x);
    Tensor out = v.value();
    for (auto& e : out.data()) e = e * e * e;
    auto node = g.record("bad_cube", out, {v.id()}, [](Graph& gr, std::uint32_t self) {
      const auto in = gr.inputs(self)[0];
      if (!gr.requires_grad(in)) return;
      const Tensor& up = gr.grad(self);
      Tensor& dst = gr.grad(in);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += up[i] * 2.0 * gr.value(in)[i];
    });
    return ad::sum(node);
  };
  auto rep = ad::finite_diff_check(p, cube_with_bad_grad, x, 1e-4);
  CHECK_FALSE(rep.pass);
  CHECK(rep.max_rel_err > 0.1);
}

TEST_CASE("finite difference check raises on non-finite perturbations") {
  ad::ParameterSet p;
  auto x = p.add("x", Tensor::vector({1e-4}));
  auto f = [&](Graph& g) { return ad::sum(ad::log(g.param(x))); };
  CHECK_THROWS_AS(ad::finite_diff_check(p, f, x, 1e-4, {.step = 1e-3}), AnomalyError);
}

}  // TEST_SUITE
