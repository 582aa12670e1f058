#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rdunet/dense_block.hpp"
#include "rdunet/layers.hpp"
#include "rdunet/params.hpp"

namespace rdunet {

struct NetworkConfig {
  std::int64_t input_h = 64;
  std::int64_t input_w = 64;
  std::int64_t input_channels = 1;
  std::int64_t base_width = 16;  // W0; the channel width of level 1
  std::int64_t growth_base = 4;  // p0 for every dense block
  std::optional<std::int64_t> growth_cap;
  std::int64_t classes = 2;

  /// 320x320 single-channel input, W0 = 64, p0 = 8.
  static NetworkConfig paper();
  /// 64x64 input, W0 = 16, p0 = 4; the size every test runs at.
  static NetworkConfig desk();

  void validate() const;
};

/// Levels top to bottom: four contracting levels with dense blocks, a
/// bridge, four expansive levels, and a full-resolution tail block before
/// the classifier. The expansive path upsamples with unpool and merges with
/// the same-level contracting feature by element-wise addition.
struct Model {
  NetworkConfig cfg;

  struct Down {
    std::optional<ConvParams> pool;  // stride-2 2x2, levels 2..4
    std::optional<BNParams> entry_bn;
    std::optional<PReLUParams> entry_act;
    ConvParams entry_conv;  // 3x3 to the level width (plain conv on level 1)
    DenseBlock block;
    PreActUnit exit;  // BN, PReLU, 2x2 conv
  };
  std::array<Down, 4> down;

  struct BridgePart {
    ConvParams pool;  // stride-2 2x2
    PreActUnit widen; // 2x2 conv doubling the width
  } bridge;

  struct Up {
    DenseBlock block;
    PreActUnit exit;   // 2x2 conv
    UnpoolParams up;   // 2x upsample + channel-halving projection
    PreActUnit post;   // 3x3 conv applied after the skip addition
  };
  std::array<Up, 4> up;  // up[0] works at bridge width, up[3] at 2*W0

  struct TailPart {
    DenseBlock block;
    PreActUnit exit;
    ConvParams head;  // 1x1 to `classes` logits
  } tail;

  ParamRegistry params;
};

Model build_network(const NetworkConfig& cfg, std::uint64_t seed);

struct ForwardOptions {
  /// Drop every skip addition (the unpooled tensor passes through alone).
  bool skip_additions = false;
  /// Replace the named intermediates with zero tensors (test hook).
  const std::set<std::string>* zero_labels = nullptr;
  /// Observe every labelled intermediate.
  std::function<void(const std::string&, const Tensor&)> tap;
};

/// Full forward pass to (n, classes, h, w) logits.
Tensor forward(Graph& g, const Model& model, const Tensor& batch, bool training,
               const ForwardOptions& options = {});

// ---- Architecture plan: pure shape/cost arithmetic, no tensors. ----

struct PlanRow {
  std::string label;  // matches the forward tap labels
  std::int64_t c, h, w;
};

struct PlanUnit {
  std::string level;  // down1..down4, bridge, up4..up1, tail
  std::string name;
  bool dense;         // belongs to a dense block
  std::int64_t in_ch, out_ch, k;
  int stride;
  std::int64_t out_h, out_w;
  bool has_bn, has_act;  // pre-activation BN/PReLU sized by in_ch
  bool has_bias;         // convs feeding a BN drop theirs
};

struct PlanNorm {
  std::string level;
  std::string name;
  std::int64_t bn_channels;   // trailing BN
  std::int64_t act_channels;  // post-addition PReLU
};

struct ArchPlan {
  std::vector<PlanRow> rows;
  std::vector<PlanUnit> units;
  std::vector<PlanNorm> norms;
};

ArchPlan plan_network(const NetworkConfig& cfg);

struct UnitCost {
  std::string name;
  std::int64_t params = 0;
  std::int64_t macs = 0;  // forward multiply-adds at batch 1
};

struct CostReport {
  std::vector<UnitCost> blocks;  // the nine dense blocks
  std::vector<UnitCost> levels;  // down1..4, bridge, up4..1, tail
  std::int64_t total_params = 0;
  std::int64_t total_macs = 0;
};

CostReport count_params_and_flops(const NetworkConfig& cfg);
std::string cost_report_csv(const CostReport& report);

// ---- Checkpoints: "RDUN" container with a name/shape manifest followed by
// row-major float64 payloads in manifest order. ----

void save_checkpoint(const std::filesystem::path& path, const ParamRegistry& params);
void load_checkpoint(const std::filesystem::path& path, ParamRegistry& params);

}  // namespace rdunet
