#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rdunet/dense_block.hpp"
#include "rdunet/rng.hpp"

using namespace rdunet;

namespace {

Tensor randu(Shape s, Rng& rng, double lo = -0.5, double hi = 0.5, bool rg = false) {
  Tensor t = Tensor::zeros(s, rg);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

DenseBlockConfig micro_cfg() {
  DenseBlockConfig cfg;
  cfg.channels = 4;
  cfg.growth_base = 2;
  return cfg;
}

}  // namespace

TEST_CASE("log-dense predecessor sets") {
  CHECK(log_dense_inputs(1) == std::vector<int>{0});
  CHECK(log_dense_inputs(2) == std::vector<int>{1, 0});
  CHECK(log_dense_inputs(3) == std::vector<int>{2, 1});
  CHECK(log_dense_inputs(4) == std::vector<int>{3, 2, 0});
  CHECK(log_dense_inputs(5) == std::vector<int>{4, 3, 1});
  CHECK(log_dense_inputs(6) == std::vector<int>{5, 4, 2});
  CHECK_THROWS_AS(log_dense_inputs(0), ValueError);
  CHECK_THROWS_AS(log_dense_inputs(-3), ValueError);

  // |S(i)| = floor(log2 i) + 1 and no duplicates.
  for (int i = 1; i <= 64; ++i) {
    auto s = log_dense_inputs(i);
    int expect = 0;
    for (int step = 1; step <= i; step *= 2) ++expect;
    CHECK(static_cast<int>(s.size()) == expect);
    std::set<int> uniq(s.begin(), s.end());
    CHECK(uniq.size() == s.size());
    for (int j : s) CHECK((0 <= j && j < i));
  }
}

TEST_CASE("growth schedule") {
  CHECK(growth_rate(1, 8) == 8);
  CHECK(growth_rate(3, 8) == 32);
  CHECK(growth_rate(5, 4) == 64);
  CHECK_THROWS_AS(growth_rate(0, 8), ValueError);
  CHECK_THROWS_AS(growth_rate(6, 8), ValueError);

  // A cap equal to p0 recovers the constant-width schedule.
  for (int m = 1; m <= 5; ++m) CHECK(growth_rate(m, 8, 8) == 8);
}

TEST_CASE("stage widths follow the log-dense gather") {
  DenseBlockConfig cfg = micro_cfg();
  // p = 2,4,8,16,32; stage 6 emits C = 4.
  CHECK(cfg.stage_input_width(1) == 4);        // {0} -> C
  CHECK(cfg.stage_input_width(2) == 6);        // {1,0} -> 2+4
  CHECK(cfg.stage_input_width(3) == 6);        // {2,1} -> 4+2
  CHECK(cfg.stage_input_width(4) == 16);       // {3,2,0} -> 8+4+4
  CHECK(cfg.stage_input_width(5) == 26);       // {4,3,1} -> 16+8+2
  CHECK(cfg.stage_input_width(6) == 52);       // {5,4,2} -> 32+16+4
  CHECK(cfg.kernel(1) == 1);
  CHECK(cfg.kernel(4) == 3);
  CHECK(cfg.kernel(6) == 1);
}

TEST_CASE("block audit counts 14 log-dense edges against 21 full-dense") {
  ParamRegistry reg;
  Rng rng(42);
  DenseBlock block = make_dense_block(reg, "blk", micro_cfg(), rng);
  auto audit = block.audit();
  CHECK(audit.log_dense_edges == 14);
  CHECK(audit.full_dense_edges == 21);
  CHECK(audit.input_width[3] == 16);
  CHECK(audit.output_width[5] == 4);
}

TEST_CASE("forward preserves shape and channel count") {
  ParamRegistry reg;
  Rng rng(1);
  DenseBlock block = make_dense_block(reg, "blk", micro_cfg(), rng);
  Graph g;
  Tensor x = randu(Shape{1, 4, 8, 8}, rng);
  Tensor y = block.forward(g, x, true);
  CHECK(y.shape() == x.shape());
  CHECK_THROWS_AS(block.forward(g, Tensor::zeros(Shape{1, 5, 8, 8}), true), ShapeError);

  for (std::int64_t c : {3, 7, 16}) {
    ParamRegistry r2;
    DenseBlockConfig cfg;
    cfg.channels = c;
    cfg.growth_base = 2;
    DenseBlock b2 = make_dense_block(r2, "blk", cfg, rng);
    Graph g2;
    Tensor out = b2.forward(g2, randu(Shape{1, c, 4, 4}, rng), true);
    CHECK(out.shape().c == c);
  }
}

TEST_CASE("zeroed compression stage degenerates the block to PReLU(x)") {
  ParamRegistry reg;
  Rng rng(9);
  DenseBlock block = make_dense_block(reg, "blk", micro_cfg(), rng);
  for (double& v : block.stage[5].conv.w.data()) v = 0.0;
  for (double& v : block.stage[5].conv.b.data()) v = 0.0;

  Graph g;
  Tensor x = randu(Shape{2, 4, 6, 6}, rng, -1.0, 1.0);
  Tensor y = block.forward(g, x, true);

  auto xd = x.data();
  auto yd = y.data();
  const std::int64_t plane = 36;
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t c = 0; c < 4; ++c) {
      const double slope = block.out_act.slope.data()[static_cast<std::size_t>(c)];
      for (std::int64_t i = 0; i < plane; ++i) {
        const double v = xd[(n * 4 + c) * plane + i];
        CHECK(yd[(n * 4 + c) * plane + i] == (v >= 0.0 ? v : slope * v));
      }
    }
}

TEST_CASE("residual identity: zeroed F makes the input gradient the PReLU local gradient") {
  ParamRegistry reg;
  Rng rng(10);
  DenseBlock block = make_dense_block(reg, "blk", micro_cfg(), rng);
  for (double& v : block.stage[5].conv.w.data()) v = 0.0;
  for (double& v : block.stage[5].conv.b.data()) v = 0.0;

  Graph g;
  Tensor x = randu(Shape{1, 4, 5, 5}, rng, -1.0, 1.0, true);
  Tensor y = block.forward(g, x, true);
  Tensor seed = randu(y.shape(), rng, -1.0, 1.0);
  g.backward(seed);

  auto gx = x.grad();
  auto xd = x.data();
  auto sd = seed.data();
  const std::int64_t plane = 25;
  for (std::int64_t c = 0; c < 4; ++c) {
    const double slope = block.out_act.slope.data()[static_cast<std::size_t>(c)];
    for (std::int64_t i = 0; i < plane; ++i) {
      const std::size_t at = static_cast<std::size_t>(c * plane + i);
      const double expect = xd[at] >= 0.0 ? sd[at] : slope * sd[at];
      CHECK(gx[at] == expect);  // exact: the zero weights cut the F path
    }
  }
}

TEST_CASE("full block gradient check at p0 = 2") {
  ParamRegistry reg;
  Rng rng(1234);
  DenseBlock block = make_dense_block(reg, "blk", micro_cfg(), rng);
  Tensor x = randu(Shape{1, 4, 8, 8}, rng, -0.5, 0.5, true);

  std::vector<Tensor> wrt{x};
  for (const auto& e : reg.entries())
    if (e.trainable) wrt.push_back(e.tensor);

  auto report = grad_check(
      [&](Graph& g) { return sum(g, block.forward(g, x, true)); }, wrt, 1e-6, 1e-4);
  CAPTURE(report.worst);
  CAPTURE(report.probes);
  CHECK(report.pass);
  CHECK(report.max_rel_err < 1e-4);
}
