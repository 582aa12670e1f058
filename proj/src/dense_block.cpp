#include "rdunet/dense_block.hpp"

#include <algorithm>

namespace rdunet {

std::vector<int> log_dense_inputs(int i) {
  if (i < 1) throw ValueError("log_dense_inputs: stage index must be >= 1, got " + std::to_string(i));
  std::vector<int> preds;
  for (int step = 1; step <= i; step *= 2) preds.push_back(i - step);
  return preds;
}

std::int64_t growth_rate(int m, std::int64_t p0, std::optional<std::int64_t> cap) {
  if (m < 1 || m > 5)
    throw ValueError("growth_rate: stage index must be in 1..5, got " + std::to_string(m));
  if (p0 < 1) throw ValueError("growth_rate: growth base must be positive");
  std::int64_t p = p0 << (m - 1);
  if (cap && p > *cap) p = *cap;
  return p;
}

std::int64_t DenseBlockConfig::emitted(int m) const {
  if (m == 0) return channels;
  if (m == stages) return channels;
  return growth_rate(m, growth_base, growth_cap);
}

std::int64_t DenseBlockConfig::kernel(int m) const { return (m == 1 || m == stages) ? 1 : 3; }

std::int64_t DenseBlockConfig::stage_input_width(int m) const {
  std::int64_t width = 0;
  for (int j : log_dense_inputs(m)) width += emitted(j);
  return width;
}

Tensor DenseBlock::forward(Graph& g, const Tensor& x, bool training) const {
  if (x.shape().c != cfg.channels)
    throw ShapeError("dense block: input has " + std::to_string(x.shape().c) +
                     " channels, expected " + std::to_string(cfg.channels));
  // outputs[0] is the block input; outputs[m] the emitted features of stage m.
  std::vector<Tensor> outputs(DenseBlockConfig::stages + 1);
  outputs[0] = x;
  for (int m = 1; m <= DenseBlockConfig::stages; ++m) {
    std::vector<Tensor> gathered;
    for (int j : log_dense_inputs(m)) gathered.push_back(outputs[static_cast<std::size_t>(j)]);
    Tensor in = concat_channels(g, gathered);
    outputs[static_cast<std::size_t>(m)] =
        pre_activation_unit(g, in, stage[static_cast<std::size_t>(m - 1)], training);
  }
  Tensor f = batch_norm(g, outputs[DenseBlockConfig::stages], tail_bn, training);
  return prelu(g, add(g, x, f), out_act);
}

DenseBlock::Audit DenseBlock::audit() const {
  Audit report;
  for (int m = 1; m <= DenseBlockConfig::stages; ++m) {
    const PreActUnit& unit = stage[static_cast<std::size_t>(m - 1)];
    const std::int64_t expect_in = cfg.stage_input_width(m);
    const std::int64_t expect_out = cfg.emitted(m);
    if (unit.conv.in_channels() != expect_in)
      throw ValueError("dense block stage " + std::to_string(m) + ": conv input width " +
                       std::to_string(unit.conv.in_channels()) + " != log-dense width " +
                       std::to_string(expect_in));
    if (unit.conv.out_channels() != expect_out)
      throw ValueError("dense block stage " + std::to_string(m) + ": conv output width " +
                       std::to_string(unit.conv.out_channels()) + " != scheduled width " +
                       std::to_string(expect_out));
    if (unit.conv.kh() != cfg.kernel(m))
      throw ValueError("dense block stage " + std::to_string(m) + ": kernel size mismatch");
    report.input_width[static_cast<std::size_t>(m - 1)] = expect_in;
    report.output_width[static_cast<std::size_t>(m - 1)] = expect_out;
    report.log_dense_edges += static_cast<int>(log_dense_inputs(m).size());
    report.full_dense_edges += m;
  }
  return report;
}

DenseBlock make_dense_block(ParamRegistry& reg, const std::string& name,
                            const DenseBlockConfig& cfg, Rng& rng) {
  if (cfg.channels < 1) throw ValueError("dense block: channel count must be positive");
  DenseBlock block;
  block.cfg = cfg;
  for (int m = 1; m <= DenseBlockConfig::stages; ++m) {
    // Every stage output is consumed through a later batch norm, so stage
    // convolutions carry no bias.
    block.stage[static_cast<std::size_t>(m - 1)] =
        make_pre_act_unit(reg, name + "/stage" + std::to_string(m), cfg.stage_input_width(m),
                          cfg.emitted(m), cfg.kernel(m), rng, /*bias=*/false);
  }
  block.tail_bn = make_bn(reg, name + "/tail_bn", cfg.channels);
  block.out_act = make_prelu(reg, name + "/out_act", cfg.channels);
  block.audit();
  return block;
}

}  // namespace rdunet
