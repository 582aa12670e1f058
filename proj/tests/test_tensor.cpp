#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "rdunet/parallel.hpp"
#include "rdunet/rng.hpp"
#include "rdunet/tensor.hpp"

using namespace rdunet;

namespace {

Tensor scalar(double v, bool rg = false) { return Tensor::from(Shape{1, 1, 1, 1}, {v}, rg); }

bool bits_equal(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("tensor construction and invariants") {
  Tensor t = Tensor::zeros(Shape{2, 3, 4, 5});
  CHECK(t.numel() == 120);
  CHECK(t.shape() == Shape{2, 3, 4, 5});
  CHECK_THROWS_AS(Tensor::from(Shape{1, 1, 2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  t.at(1, 2, 3, 4) = 7.0;
  CHECK(t.data()[119] == 7.0);
}

TEST_CASE("add and mul demand exact shape equality") {
  Graph g;
  Tensor a = Tensor::zeros(Shape{1, 2, 2, 2});
  Tensor b = Tensor::zeros(Shape{1, 2, 2, 3});
  CHECK_THROWS_AS(add(g, a, b), ShapeError);
  CHECK_THROWS_AS(mul(g, a, b), ShapeError);
}

TEST_CASE("backward through residual with F == 0 passes the seed unchanged") {
  // y = x + w*x with w = 0: only the identity path carries gradient.
  Graph g;
  Tensor x = Tensor::from(Shape{1, 1, 2, 2}, {1.0, -2.0, 3.0, 0.5}, true);
  Tensor w = Tensor::zeros(Shape{1, 1, 2, 2}, true);
  Tensor y = add(g, x, mul(g, w, x));
  g.backward(Tensor::full(y.shape(), 1.0));
  for (double v : x.grad()) CHECK(v == 1.0);
}

TEST_CASE("backward of y = x + w*x with w = 3 gives grad 4") {
  Graph g;
  Tensor x = scalar(5.0, true);
  Tensor w = scalar(3.0, true);
  Tensor y = add(g, x, mul(g, w, x));
  g.backward(scalar(1.0));
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK(w.grad()[0] == doctest::Approx(5.0));
}

TEST_CASE("chain rule: x -> x^2 -> sum") {
  Graph g;
  Tensor x = scalar(3.0, true);
  Tensor b = sum(g, mul(g, x, x));
  CHECK(b.data()[0] == 9.0);
  g.backward(scalar(1.0));
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward rejects empty graphs and mismatched seeds") {
  Graph g;
  CHECK_THROWS_AS(g.backward(scalar(1.0)), ValueError);
  Tensor x = Tensor::full(Shape{1, 2, 2, 2}, 1.0, true);
  sum(g, x);
  CHECK_THROWS_AS(g.backward(Tensor::zeros(Shape{1, 2, 2, 2})), ShapeError);
}

TEST_CASE("shared parameters accumulate gradient over every use") {
  Graph g;
  Tensor x = scalar(2.0, true);
  // f = x*x + x  ->  df/dx = 2x + 1 = 5
  Tensor y = add(g, mul(g, x, x), x);
  g.backward(scalar(1.0));
  CHECK(x.grad()[0] == doctest::Approx(5.0));
}

TEST_CASE("concat_channels stacks channels and splits gradient") {
  Graph g;
  Tensor a = Tensor::full(Shape{1, 4, 8, 8}, 1.5, true);
  Tensor b = Tensor::full(Shape{1, 12, 8, 8}, -0.5, true);
  Tensor c = concat_channels(g, a, b);
  CHECK(c.shape() == Shape{1, 16, 8, 8});
  CHECK(c.at(0, 0, 0, 0) == 1.5);
  CHECK(c.at(0, 4, 0, 0) == -0.5);

  g.backward(Tensor::full(c.shape(), 1.0));
  for (double v : a.grad()) CHECK(v == 1.0);
  for (double v : b.grad()) CHECK(v == 1.0);
}

TEST_CASE("concat of spatially mismatched tensors is rejected") {
  Graph g;
  Tensor a = Tensor::zeros(Shape{1, 2, 4, 4});
  Tensor b = Tensor::zeros(Shape{1, 2, 4, 5});
  CHECK_THROWS_AS(concat_channels(g, a, b), ShapeError);
  Tensor c = Tensor::zeros(Shape{2, 2, 4, 4});
  CHECK_THROWS_AS(concat_channels(g, a, c), ShapeError);
}

TEST_CASE("concat(x, x) duplicates every channel") {
  Graph g;
  Rng rng(11);
  Tensor x = Tensor::zeros(Shape{2, 3, 4, 4});
  for (double& v : x.data()) v = rng.uniform(-1.0, 1.0);
  Tensor c = concat_channels(g, x, x);
  const std::int64_t C = 3;
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t ch = 0; ch < C; ++ch)
      for (std::int64_t y = 0; y < 4; ++y)
        for (std::int64_t xx = 0; xx < 4; ++xx)
          CHECK(c.at(n, ch, y, xx) == c.at(n, ch + C, y, xx));
}

TEST_CASE("grad_check on sum of squares") {
  Tensor x = Tensor::from(Shape{1, 1, 1, 3}, {1.0, 2.0, 3.0}, true);
  auto fn = [&x](Graph& g) { return sum(g, mul(g, x, x)); };
  Tensor wrt[] = {x};
  auto report = grad_check(fn, wrt, 1e-6, 1e-7);
  CHECK(report.pass);
  CHECK(report.max_rel_err < 1e-7);

  // Frozen analytic gradient 2x.
  Graph g;
  fn(g);
  g.backward(scalar(1.0));
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
  CHECK(x.grad()[2] == doctest::Approx(6.0));
}

TEST_CASE("grad_check reports non-finite function values") {
  Tensor x = scalar(0.0, true);
  auto fn = [&x](Graph& g) {
    Tensor y = mul(g, x, x);
    y.data()[0] = std::numeric_limits<double>::quiet_NaN();
    return sum(g, y);
  };
  Tensor wrt[] = {x};
  auto report = grad_check(fn, wrt);
  CHECK_FALSE(report.pass);
  CHECK_FALSE(report.finite);
}

TEST_CASE("linearity of backward over random graphs") {
  Rng rng(99);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = Tensor::zeros(Shape{1, 2, 3, 3}, true);
    for (double& v : x.data()) v = rng.uniform(-1.0, 1.0);
    Tensor c = Tensor::zeros(Shape{1, 2, 3, 3});
    for (double& v : c.data()) v = rng.uniform(-1.0, 1.0);
    const double alpha = rng.uniform(-2.0, 2.0);
    const double beta = rng.uniform(-2.0, 2.0);

    auto f = [&](Graph& g) { return sum(g, mul(g, x, x)); };
    auto h = [&](Graph& g) { return sum(g, mul(g, c, x)); };

    Graph gf;
    f(gf);
    gf.backward(scalar(1.0));
    std::vector<double> grad_f(x.grad().begin(), x.grad().end());

    Graph gh;
    h(gh);
    gh.backward(scalar(1.0));
    std::vector<double> grad_h(x.grad().begin(), x.grad().end());

    Graph gc;
    Tensor combined = add(gc, scale(gc, f(gc), alpha), scale(gc, h(gc), beta));
    (void)combined;
    gc.backward(scalar(1.0));
    auto gx = x.grad();
    for (std::size_t i = 0; i < gx.size(); ++i)
      CHECK(gx[i] == doctest::Approx(alpha * grad_f[i] + beta * grad_h[i]).epsilon(1e-12));
  }
}

TEST_CASE("identity-skip gradient decomposition") {
  // grad(x) through y = x + F(x) minus the F-path gradient equals the seed.
  Rng rng(7);
  Tensor x = Tensor::zeros(Shape{1, 2, 4, 4}, true);
  for (double& v : x.data()) v = rng.uniform(-1.0, 1.0);
  Tensor w = Tensor::zeros(Shape{1, 2, 4, 4}, true);
  for (double& v : w.data()) v = rng.uniform(-0.5, 0.5);
  Tensor seed = Tensor::zeros(Shape{1, 2, 4, 4});
  for (double& v : seed.data()) v = rng.uniform(-1.0, 1.0);

  auto F = [&w](Graph& g, const Tensor& in) { return mul(g, mul(g, w, in), in); };

  Graph full;
  add(full, x, F(full, x));
  full.backward(seed);
  std::vector<double> grad_full(x.grad().begin(), x.grad().end());

  Graph fpath;
  F(fpath, x);
  fpath.backward(seed);
  auto grad_f = x.grad();

  auto sd = seed.data();
  for (std::size_t i = 0; i < sd.size(); ++i)
    CHECK(std::fabs(grad_full[i] - grad_f[i] - sd[i]) < 1e-12);
}

TEST_CASE("forward and backward are deterministic") {
  auto run = [](std::vector<double>* out, std::vector<double>* grad) {
    Rng rng(1234);
    Tensor x = Tensor::zeros(Shape{2, 3, 5, 5}, true);
    for (double& v : x.data()) v = rng.uniform(-1.0, 1.0);
    Graph g;
    Tensor y = mul(g, x, x);
    Tensor z = sum(g, concat_channels(g, y, x));
    out->assign(z.data().begin(), z.data().end());
    g.backward(scalar(1.0));
    grad->assign(x.grad().begin(), x.grad().end());
  };
  std::vector<double> o1, g1, o2, g2;
  run(&o1, &g1);
  run(&o2, &g2);
  CHECK(bits_equal(o1, o2));
  CHECK(bits_equal(g1, g2));
}

TEST_CASE("parallel execution is bit-identical to serial") {
  Rng rng(5);
  Tensor x = Tensor::zeros(Shape{3, 4, 6, 6}, true);
  for (double& v : x.data()) v = rng.uniform(-1.0, 1.0);

  auto run = [&x]() {
    Graph g;
    Tensor y = sum(g, mul(g, x, x));
    g.backward(Tensor::full(Shape{1, 1, 1, 1}, 1.0));
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  set_threads(0);
  auto serial = run();
  set_threads(4);
  auto parallel = run();
  set_threads(0);
  CHECK(bits_equal(serial, parallel));
}

TEST_CASE("finite outputs from finite inputs") {
  Rng rng(21);
  Tensor x = Tensor::zeros(Shape{2, 2, 8, 8}, true);
  for (double& v : x.data()) v = rng.uniform(-10.0, 10.0);
  Graph g;
  Tensor y = scale(g, mul(g, x, x), 0.5);
  Tensor z = sum(g, y);
  for (double v : y.data()) CHECK(std::isfinite(v));
  CHECK(std::isfinite(z.data()[0]));
}
