#pragma once

#include <optional>
#include <string>

#include "rdunet/params.hpp"
#include "rdunet/rng.hpp"
#include "rdunet/tensor.hpp"

namespace rdunet {

enum class Padding { same, valid };

/// 2-D convolution (cross-correlation) parameters. Kernels are restricted
/// to 1x1, 2x2 and 3x3. Same padding with stride 1 preserves spatial size;
/// an even kernel pads 0 on top/left and 1 on bottom/right. Stride 2 is the
/// downsampling form: 2x2 kernel, valid padding, even input, output exactly
/// half the input. An undefined bias tensor means the layer has none —
/// convolutions that feed straight into a batch norm drop it, since the
/// normalization cancels per-channel constants and the gradient would be
/// identically zero.
struct ConvParams {
  Tensor w;  // (out_channels, in_channels, kh, kw)
  Tensor b;  // (1, out_channels, 1, 1); undefined = no bias
  int stride = 1;
  Padding padding = Padding::same;

  std::int64_t out_channels() const { return w.shape().n; }
  std::int64_t in_channels() const { return w.shape().c; }
  std::int64_t kh() const { return w.shape().h; }
  std::int64_t kw() const { return w.shape().w; }
  void validate() const;
};

struct BNParams {
  Tensor gamma;  // (1,c,1,1)
  Tensor delta;  // (1,c,1,1)
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-9;
  double momentum = 0.9;

  std::int64_t channels() const { return gamma.shape().c; }
};

struct PReLUParams {
  Tensor slope;  // (1,c,1,1)
  std::int64_t channels() const { return slope.shape().c; }
};

/// Expansive-path upsampler: nearest-neighbour 2x replication followed by a
/// 1x1 projection halving the channel count (2C -> C).
struct UnpoolParams {
  ConvParams proj;
  void validate() const;
};

/// BN -> PReLU -> Conv, the unit every "BN, PReLU, Conv" row denotes.
struct PreActUnit {
  BNParams bn;
  PReLUParams act;
  ConvParams conv;
};

Tensor conv2d(Graph& g, const Tensor& x, const ConvParams& p);
Tensor batch_norm(Graph& g, const Tensor& x, const BNParams& p, bool training);
Tensor prelu(Graph& g, const Tensor& x, const PReLUParams& p);
Tensor upsample_nearest2x(Graph& g, const Tensor& x);
Tensor unpool(Graph& g, const Tensor& x, const UnpoolParams& p);
Tensor pre_activation_unit(Graph& g, const Tensor& x, const BNParams& bn, const PReLUParams& act,
                           const ConvParams& conv, bool training);
Tensor pre_activation_unit(Graph& g, const Tensor& x, const PreActUnit& unit, bool training);

/// Output spatial size for the given geometry; validates the contracts
/// above without touching any data.
void conv_output_size(std::int64_t h, std::int64_t w, std::int64_t kh, std::int64_t kw, int stride,
                      Padding padding, std::int64_t* out_h, std::int64_t* out_w);

// Builders. Weights use He fan-in scaling matched to the 0.25 PReLU slope,
// biases start at zero, gamma at 1, delta at 0. Parameters are registered
// under "<name>/w", "<name>/gamma", ... in construction order.
ConvParams make_conv(ParamRegistry& reg, const std::string& name, std::int64_t in_ch,
                     std::int64_t out_ch, std::int64_t k, int stride, Padding padding, Rng& rng,
                     bool bias = true);
BNParams make_bn(ParamRegistry& reg, const std::string& name, std::int64_t channels);
PReLUParams make_prelu(ParamRegistry& reg, const std::string& name, std::int64_t channels);
UnpoolParams make_unpool(ParamRegistry& reg, const std::string& name, std::int64_t in_ch, Rng& rng);
PreActUnit make_pre_act_unit(ParamRegistry& reg, const std::string& name, std::int64_t in_ch,
                             std::int64_t out_ch, std::int64_t k, Rng& rng, bool bias = true);

}  // namespace rdunet
