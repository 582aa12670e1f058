#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "rdunet/layers.hpp"

namespace rdunet {

/// Six-stage residual block with log-dense connectivity. Stage 1 (1x1)
/// adapts the block input to the first growth width, stages 2-5 (3x3) grow
/// the feature count as p_m = 2^(m-1) * p0, stage 6 (1x1) compresses back
/// to the block's channel count so the identity skip can be added.
struct DenseBlockConfig {
  std::int64_t channels = 0;     // block input == block output channels
  std::int64_t growth_base = 8;  // p0
  std::optional<std::int64_t> growth_cap;
  static constexpr int stages = 6;

  /// Channels emitted by stage m (1-based). Stages 1..5 follow the growth
  /// schedule, stage 6 emits `channels`.
  std::int64_t emitted(int m) const;
  /// Kernel size of stage m: 1 for stages 1 and 6, 3 otherwise.
  std::int64_t kernel(int m) const;
  /// Convolution input width of stage m: sum of emitted() over the
  /// log-dense predecessor set (stage 0 is the block input).
  std::int64_t stage_input_width(int m) const;
};

/// Predecessor set S(i) = { i - 2^k : k = 0..floor(log2 i) } for stage
/// i >= 1; stage 0 denotes the block input. Ordered by increasing k, i.e.
/// nearest predecessor first.
std::vector<int> log_dense_inputs(int i);

/// Growth schedule p_m = 2^(m-1) * p0 for m in 1..5, clamped to `cap`.
std::int64_t growth_rate(int m, std::int64_t p0, std::optional<std::int64_t> cap = {});

struct DenseBlock {
  DenseBlockConfig cfg;
  std::array<PreActUnit, DenseBlockConfig::stages> stage;
  BNParams tail_bn;     // after stage 6, before the addition
  PReLUParams out_act;  // post-addition activation

  Tensor forward(Graph& g, const Tensor& x, bool training) const;

  struct Audit {
    int log_dense_edges = 0;  // 14 for six stages
    int full_dense_edges = 0; // 21 for six stages
    std::array<std::int64_t, DenseBlockConfig::stages> input_width{};
    std::array<std::int64_t, DenseBlockConfig::stages> output_width{};
  };
  /// Verifies the realized convolution widths against the log-dense wiring
  /// rule; throws on any mismatch.
  Audit audit() const;
};

DenseBlock make_dense_block(ParamRegistry& reg, const std::string& name,
                            const DenseBlockConfig& cfg, Rng& rng);

}  // namespace rdunet
