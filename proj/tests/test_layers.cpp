#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rdunet/layers.hpp"
#include "rdunet/rng.hpp"

using namespace rdunet;

namespace {

Tensor randu(Shape s, Rng& rng, double lo = -0.5, double hi = 0.5, bool rg = false) {
  Tensor t = Tensor::zeros(s, rg);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

ConvParams conv_of(Tensor w, Tensor b, int stride, Padding pad) {
  ConvParams p;
  p.w = std::move(w);
  p.b = std::move(b);
  p.stride = stride;
  p.padding = pad;
  return p;
}

Tensor ones_seed(const Tensor& like) { return Tensor::full(like.shape(), 1.0); }

}  // namespace

TEST_CASE("1x1 conv is a per-pixel affine map") {
  Graph g;
  Tensor x = Tensor::full(Shape{1, 1, 2, 2}, 3.0);
  ConvParams p = conv_of(Tensor::from(Shape{1, 1, 1, 1}, {2.0}),
                         Tensor::from(Shape{1, 1, 1, 1}, {1.0}), 1, Padding::same);
  Tensor y = conv2d(g, x, p);
  for (double v : y.data()) CHECK(v == doctest::Approx(7.0));
}

TEST_CASE("stride-2 2x2 conv halves the spatial size") {
  Graph g;
  Rng rng(3);
  ConvParams p = conv_of(randu(Shape{4, 4, 2, 2}, rng), Tensor::zeros(Shape{1, 4, 1, 1}), 2,
                         Padding::valid);
  Tensor y = conv2d(g, randu(Shape{1, 4, 8, 8}, rng), p);
  CHECK(y.shape() == Shape{1, 4, 4, 4});

  // The Down 2 geometry: 320x320x64 -> 160x160x64.
  std::int64_t oh = 0, ow = 0;
  conv_output_size(320, 320, 2, 2, 2, Padding::valid, &oh, &ow);
  CHECK(oh == 160);
  CHECK(ow == 160);
}

TEST_CASE("3x3 all-ones kernel on constant input: window sums") {
  Graph g;
  Tensor x = Tensor::full(Shape{1, 1, 6, 6}, 5.0);
  ConvParams p = conv_of(Tensor::full(Shape{1, 1, 3, 3}, 1.0), Tensor::zeros(Shape{1, 1, 1, 1}), 1,
                         Padding::same);
  Tensor y = conv2d(g, x, p);
  CHECK(y.at(0, 0, 3, 3) == doctest::Approx(45.0));  // interior: 9 taps
  CHECK(y.at(0, 0, 0, 0) == doctest::Approx(20.0));  // corner: 4 taps
  CHECK(y.at(0, 0, 0, 3) == doctest::Approx(30.0));  // edge: 6 taps
}

TEST_CASE("2x2 same conv pads bottom/right") {
  // With weight only on the top-left tap the map is the identity; the
  // bottom/right padding never contributes.
  Graph g;
  Rng rng(17);
  Tensor x = randu(Shape{1, 1, 4, 4}, rng);
  ConvParams p = conv_of(Tensor::from(Shape{1, 1, 2, 2}, {1.0, 0.0, 0.0, 0.0}),
                         Tensor::zeros(Shape{1, 1, 1, 1}), 1, Padding::same);
  Tensor y = conv2d(g, x, p);
  CHECK(y.shape() == x.shape());
  for (std::int64_t i = 0; i < 4; ++i)
    for (std::int64_t j = 0; j < 4; ++j) CHECK(y.at(0, 0, i, j) == x.at(0, 0, i, j));
}

TEST_CASE("conv rejects bad geometry") {
  Graph g;
  Rng rng(5);
  ConvParams p = conv_of(randu(Shape{2, 3, 3, 3}, rng), Tensor::zeros(Shape{1, 2, 1, 1}), 1,
                         Padding::same);
  CHECK_THROWS_AS(conv2d(g, Tensor::zeros(Shape{1, 4, 8, 8}), p), ShapeError);  // channel mismatch

  ConvParams down = conv_of(randu(Shape{2, 2, 2, 2}, rng), Tensor::zeros(Shape{1, 2, 1, 1}), 2,
                            Padding::valid);
  CHECK_THROWS_AS(conv2d(g, Tensor::zeros(Shape{1, 2, 7, 8}), down), ShapeError);  // odd spatial

  ConvParams wide = conv_of(randu(Shape{2, 2, 5, 5}, rng), Tensor::zeros(Shape{1, 2, 1, 1}), 1,
                            Padding::same);
  CHECK_THROWS_AS(conv2d(g, Tensor::zeros(Shape{1, 2, 8, 8}), wide), ValueError);  // kernel > 3
}

TEST_CASE("one-hot centred 3x3 kernel is the identity map") {
  Graph g;
  Rng rng(23);
  const std::int64_t C = 3;
  Tensor w = Tensor::zeros(Shape{C, C, 3, 3});
  for (std::int64_t c = 0; c < C; ++c) w.at(c, c, 1, 1) = 1.0;
  ConvParams p = conv_of(w, Tensor::zeros(Shape{1, C, 1, 1}), 1, Padding::same);
  Tensor x = randu(Shape{2, C, 5, 5}, rng);
  Tensor y = conv2d(g, x, p);
  auto xd = x.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < xd.size(); ++i) CHECK(yd[i] == xd[i]);
}

TEST_CASE("batch norm of a constant input is zero") {
  Graph g;
  BNParams p;
  ParamRegistry reg;
  p = make_bn(reg, "bn", 2);
  Tensor x = Tensor::full(Shape{1, 2, 2, 2}, 4.2);
  Tensor y = batch_norm(g, x, p, true);
  for (double v : y.data()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("batch norm of {3,7} gives {-1,+1}") {
  Graph g;
  ParamRegistry reg;
  BNParams p = make_bn(reg, "bn", 1);
  Tensor x = Tensor::from(Shape{1, 1, 1, 2}, {3.0, 7.0});
  Tensor y = batch_norm(g, x, p, true);
  CHECK(y.data()[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(y.data()[1] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("batch norm affine terms: gamma 2, delta 3 on a unit deviation") {
  Graph g;
  ParamRegistry reg;
  BNParams p = make_bn(reg, "bn", 1);
  p.gamma.data()[0] = 2.0;
  p.delta.data()[0] = 3.0;
  Tensor x = Tensor::from(Shape{1, 1, 1, 2}, {3.0, 7.0});
  Tensor y = batch_norm(g, x, p, true);
  CHECK(y.data()[1] == doctest::Approx(5.0).epsilon(1e-6));
}

TEST_CASE("batch norm rejects single-element statistics in training mode") {
  Graph g;
  ParamRegistry reg;
  BNParams p = make_bn(reg, "bn", 2);
  CHECK_THROWS_AS(batch_norm(g, Tensor::zeros(Shape{1, 2, 1, 1}), p, true), ValueError);
}

TEST_CASE("batch norm normalizes each channel: |mean| and |std-1| bounds") {
  Rng rng(77);
  ParamRegistry reg;
  BNParams p = make_bn(reg, "bn", 3);
  for (int trial = 0; trial < 5; ++trial) {
    Graph g;
    Tensor x = randu(Shape{2, 3, 8, 8}, rng, -2.0, 3.0);
    Tensor y = batch_norm(g, x, p, true);
    const std::int64_t plane = 64, M = 2 * plane;
    for (std::int64_t c = 0; c < 3; ++c) {
      double mean = 0.0, sq = 0.0;
      for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t i = 0; i < plane; ++i) {
          const double v = y.data()[(n * 3 + c) * plane + i];
          mean += v;
          sq += v * v;
        }
      mean /= M;
      const double stddev = std::sqrt(sq / M - mean * mean);
      CHECK(std::fabs(mean) < 1e-10);
      CHECK(std::fabs(stddev - 1.0) < 1e-3);
    }
  }
}

TEST_CASE("batch norm near the variance floor still normalizes") {
  ParamRegistry reg;
  BNParams p = make_bn(reg, "bn", 1);
  Rng rng(5);
  Graph g;
  // Batch scaled to variance exactly 1e-6.
  Tensor x = randu(Shape{1, 1, 8, 8}, rng, -1.0, 1.0);
  double mean = 0.0;
  for (double v : x.data()) mean += v;
  mean /= 64.0;
  double var = 0.0;
  for (double v : x.data()) var += (v - mean) * (v - mean);
  var /= 64.0;
  const double target = 1e-6;
  for (double& v : x.data()) v = (v - mean) * std::sqrt(target / var);
  Tensor y = batch_norm(g, x, p, true);
  double sq = 0.0;
  for (double v : y.data()) sq += v * v;
  CHECK(std::fabs(std::sqrt(sq / 64.0) - 1.0) < 1e-3);
}

TEST_CASE("batch norm inference mode uses running statistics and keeps them") {
  ParamRegistry reg;
  BNParams p = make_bn(reg, "bn", 1);
  Rng rng(31);
  // A few training passes move the running stats.
  for (int i = 0; i < 20; ++i) {
    Graph g;
    Tensor x = randu(Shape{2, 1, 4, 4}, rng, 1.0, 3.0);
    batch_norm(g, x, p, true);
  }
  const double rm = p.running_mean.data()[0];
  const double rv = p.running_var.data()[0];
  CHECK(rm > 0.5);

  Graph g;
  Tensor x = Tensor::full(Shape{1, 1, 2, 2}, 2.0);
  Tensor y = batch_norm(g, x, p, false);
  const double expect = (2.0 - rm) / std::sqrt(rv + p.eps);
  for (double v : y.data()) CHECK(v == doctest::Approx(expect).epsilon(1e-12));
  CHECK(p.running_mean.data()[0] == rm);  // inference leaves state alone
  CHECK(p.running_var.data()[0] == rv);
}

TEST_CASE("prelu definition and slope gradient") {
  ParamRegistry reg;
  PReLUParams p = make_prelu(reg, "act", 1);
  {
    Graph g;
    Tensor x = Tensor::from(Shape{1, 1, 1, 1}, {5.0});
    CHECK(prelu(g, x, p).data()[0] == 5.0);
  }
  {
    Graph g;
    Tensor x = Tensor::from(Shape{1, 1, 1, 1}, {-4.0});
    CHECK(prelu(g, x, p).data()[0] == doctest::Approx(-1.0));  // slope 0.25
  }
  {
    Graph g;
    Tensor x = Tensor::from(Shape{1, 1, 1, 2}, {-2.0, 3.0}, true);
    Tensor y = prelu(g, x, p);
    g.backward(ones_seed(y));
    CHECK(p.slope.grad()[0] == doctest::Approx(-2.0));  // only x<0 contributes x*seed
    CHECK(x.grad()[0] == doctest::Approx(0.25));
    CHECK(x.grad()[1] == doctest::Approx(1.0));
  }
}

TEST_CASE("unpool doubles space and halves channels") {
  ParamRegistry reg;
  Rng rng(7);
  UnpoolParams p = make_unpool(reg, "unpool", 8, rng);
  Graph g;
  Tensor y = unpool(g, randu(Shape{1, 8, 4, 4}, rng), p);
  CHECK(y.shape() == Shape{1, 4, 8, 8});

  // The Up 4 geometry: 20x20x1024 -> 40x40x512.
  ParamRegistry reg2;
  UnpoolParams big = make_unpool(reg2, "unpool", 1024, rng);
  Graph g2;
  Tensor out = unpool(g2, Tensor::zeros(Shape{1, 1024, 20, 20}), big);
  CHECK(out.shape() == Shape{1, 512, 40, 40});
}

TEST_CASE("unpool with a pair-averaging projection preserves constants") {
  ParamRegistry reg;
  Rng rng(7);
  UnpoolParams p = make_unpool(reg, "unpool", 4, rng);
  for (double& v : p.proj.w.data()) v = 0.0;
  for (std::int64_t c = 0; c < 2; ++c) {
    p.proj.w.at(c, 2 * c, 0, 0) = 0.5;
    p.proj.w.at(c, 2 * c + 1, 0, 0) = 0.5;
  }
  Graph g;
  Tensor y = unpool(g, Tensor::full(Shape{1, 4, 3, 3}, 1.7), p);
  for (double v : y.data()) CHECK(v == doctest::Approx(1.7));
}

TEST_CASE("unpool replicates a single pixel into a 2x2 block") {
  ParamRegistry reg;
  Rng rng(7);
  UnpoolParams p = make_unpool(reg, "unpool", 2, rng);
  for (double& v : p.proj.w.data()) v = 0.0;
  p.proj.w.at(0, 0, 0, 0) = 1.0;  // project channel 0 through
  Tensor x = Tensor::zeros(Shape{1, 2, 3, 3});
  x.at(0, 0, 0, 0) = 4.0;
  Graph g;
  Tensor y = unpool(g, x, p);
  CHECK(y.shape() == Shape{1, 1, 6, 6});
  for (std::int64_t i = 0; i < 6; ++i)
    for (std::int64_t j = 0; j < 6; ++j)
      CHECK(y.at(0, 0, i, j) == doctest::Approx(i < 2 && j < 2 ? 4.0 : 0.0));
}

TEST_CASE("unpool rejects odd channel counts") {
  ParamRegistry reg;
  Rng rng(7);
  CHECK_THROWS_AS(make_unpool(reg, "unpool", 3, rng), ValueError);
}

TEST_CASE("pre-activation unit applies BN, PReLU, Conv in that order") {
  ParamRegistry reg;
  Rng rng(13);
  {
    // Zero input: BN and PReLU keep zero, so the conv bias is the output.
    PreActUnit u = make_pre_act_unit(reg, "u", 1, 1, 1, rng);
    u.conv.w.data()[0] = 2.5;
    u.conv.b.data()[0] = 0.75;
    Graph g;
    Tensor y = pre_activation_unit(g, Tensor::zeros(Shape{1, 1, 2, 2}), u, true);
    for (double v : y.data()) CHECK(v == doctest::Approx(0.75));
  }
  {
    // Order check on {-1,+1}: BN leaves +-1, a zero slope clamps the
    // negative, the identity conv passes through -> {0, +1}.
    PreActUnit u = make_pre_act_unit(reg, "u2", 1, 1, 1, rng);
    u.act.slope.data()[0] = 0.0;
    u.conv.w.data()[0] = 1.0;
    u.conv.b.data()[0] = 0.0;
    Graph g;
    Tensor x = Tensor::from(Shape{1, 1, 1, 2}, {-1.0, 1.0});
    Tensor y = pre_activation_unit(g, x, u, true);
    CHECK(y.data()[0] == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(y.data()[1] == doctest::Approx(1.0).epsilon(1e-6));
  }
  {
    // Same-pad 3x3 shape contract at the Down 1 width.
    std::int64_t oh = 0, ow = 0;
    conv_output_size(320, 320, 3, 3, 1, Padding::same, &oh, &ow);
    CHECK(oh == 320);
    CHECK(ow == 320);
  }
}

TEST_CASE("gradient checks for every layer type") {
  Rng rng(101);
  ParamRegistry reg;

  auto check = [&](const std::function<Tensor(Graph&)>& fn, std::vector<Tensor> wrt) {
    auto report = grad_check(fn, wrt, 1e-6, 1e-4);
    CAPTURE(report.worst);
    CHECK(report.pass);
  };

  SUBCASE("conv 3x3 same") {
    Tensor x = randu(Shape{2, 3, 8, 8}, rng, -0.5, 0.5, true);
    ConvParams p = conv_of(randu(Shape{4, 3, 3, 3}, rng, -0.5, 0.5, true),
                           randu(Shape{1, 4, 1, 1}, rng, -0.5, 0.5, true), 1, Padding::same);
    check([&](Graph& g) { return sum(g, conv2d(g, x, p)); }, {x, p.w, p.b});
  }
  SUBCASE("conv 2x2 same") {
    Tensor x = randu(Shape{1, 2, 5, 5}, rng, -0.5, 0.5, true);
    ConvParams p = conv_of(randu(Shape{3, 2, 2, 2}, rng, -0.5, 0.5, true),
                           randu(Shape{1, 3, 1, 1}, rng, -0.5, 0.5, true), 1, Padding::same);
    check([&](Graph& g) { return sum(g, conv2d(g, x, p)); }, {x, p.w, p.b});
  }
  SUBCASE("conv 2x2 stride 2") {
    Tensor x = randu(Shape{2, 2, 6, 6}, rng, -0.5, 0.5, true);
    ConvParams p = conv_of(randu(Shape{3, 2, 2, 2}, rng, -0.5, 0.5, true),
                           randu(Shape{1, 3, 1, 1}, rng, -0.5, 0.5, true), 2, Padding::valid);
    check([&](Graph& g) { return sum(g, conv2d(g, x, p)); }, {x, p.w, p.b});
  }
  SUBCASE("conv 1x1") {
    Tensor x = randu(Shape{1, 4, 4, 4}, rng, -0.5, 0.5, true);
    ConvParams p = conv_of(randu(Shape{2, 4, 1, 1}, rng, -0.5, 0.5, true),
                           randu(Shape{1, 2, 1, 1}, rng, -0.5, 0.5, true), 1, Padding::same);
    check([&](Graph& g) { return sum(g, conv2d(g, x, p)); }, {x, p.w, p.b});
  }
  SUBCASE("batch norm training mode") {
    BNParams p = make_bn(reg, "bn", 3);
    for (double& v : p.gamma.data()) v = rng.uniform(0.5, 1.5);
    for (double& v : p.delta.data()) v = rng.uniform(-0.5, 0.5);
    Tensor x = randu(Shape{2, 3, 5, 5}, rng, -1.0, 1.0, true);
    // A fixed random head; a symmetric head like sum(y^2) is nearly
    // invariant to x under batch statistics and only measures noise.
    Tensor head = randu(x.shape(), rng, -1.0, 1.0);
    check([&](Graph& g) {
      Tensor y = batch_norm(g, x, p, true);
      return sum(g, mul(g, head, y));
    }, {x, p.gamma, p.delta});
  }
  SUBCASE("batch norm inference mode") {
    BNParams p = make_bn(reg, "bn_inf", 2);
    for (double& v : p.running_mean.data()) v = rng.uniform(-0.5, 0.5);
    for (double& v : p.running_var.data()) v = rng.uniform(0.5, 1.5);
    Tensor x = randu(Shape{2, 2, 4, 4}, rng, -1.0, 1.0, true);
    check([&](Graph& g) {
      Tensor y = batch_norm(g, x, p, false);
      return sum(g, mul(g, y, y));
    }, {x, p.gamma, p.delta});
  }
  SUBCASE("prelu") {
    PReLUParams p = make_prelu(reg, "act", 3);
    Tensor x = randu(Shape{2, 3, 5, 5}, rng, -1.0, 1.0, true);
    check([&](Graph& g) { return sum(g, mul(g, prelu(g, x, p), prelu(g, x, p))); }, {x, p.slope});
  }
  SUBCASE("upsample") {
    Tensor x = randu(Shape{1, 2, 3, 3}, rng, -1.0, 1.0, true);
    check([&](Graph& g) {
      Tensor y = upsample_nearest2x(g, x);
      return sum(g, mul(g, y, y));
    }, {x});
  }
  SUBCASE("unpool") {
    UnpoolParams p = make_unpool(reg, "unpool", 4, rng);
    Tensor x = randu(Shape{1, 4, 3, 3}, rng, -1.0, 1.0, true);
    check([&](Graph& g) { return sum(g, unpool(g, x, p)); }, {x, p.proj.w, p.proj.b});
  }
  SUBCASE("pre-activation unit") {
    PreActUnit u = make_pre_act_unit(reg, "unit", 3, 2, 3, rng);
    Tensor x = randu(Shape{2, 3, 6, 6}, rng, -1.0, 1.0, true);
    check([&](Graph& g) { return sum(g, pre_activation_unit(g, x, u, true)); },
          {x, u.bn.gamma, u.bn.delta, u.act.slope, u.conv.w, u.conv.b});
  }
}
