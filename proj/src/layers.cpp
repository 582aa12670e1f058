#include "rdunet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "rdunet/parallel.hpp"

namespace rdunet {

namespace {

std::int64_t ceil_div(std::int64_t a, std::int64_t b) {
  return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  return a >= 0 ? a / b : -((-a + b - 1) / b);
}

struct ConvGeom {
  std::int64_t pad_top, pad_left, out_h, out_w;
};

ConvGeom conv_geometry(std::int64_t h, std::int64_t w, std::int64_t kh, std::int64_t kw,
                       int stride, Padding padding) {
  ConvGeom geom{};
  if (stride == 1 && padding == Padding::same) {
    // Even kernels pad 0 on top/left, 1 on bottom/right.
    geom.pad_top = (kh - 1) / 2;
    geom.pad_left = (kw - 1) / 2;
    geom.out_h = h;
    geom.out_w = w;
  } else if (padding == Padding::valid) {
    if (h < kh || w < kw)
      throw ShapeError("conv2d: input " + std::to_string(h) + "x" + std::to_string(w) +
                       " smaller than kernel");
    if (stride == 2 && (h % 2 != 0 || w % 2 != 0))
      throw ShapeError("conv2d: stride 2 requires even spatial size, got " + std::to_string(h) +
                       "x" + std::to_string(w));
    geom.pad_top = 0;
    geom.pad_left = 0;
    geom.out_h = (h - kh) / stride + 1;
    geom.out_w = (w - kw) / stride + 1;
  } else {
    throw ValueError("conv2d: same padding is only defined for stride 1");
  }
  return geom;
}

// Valid output range along one axis for kernel offset d (= k - pad):
// indices oy with oy*stride + d inside [0, extent).
void valid_range(std::int64_t extent, std::int64_t out_extent, std::int64_t d, int stride,
                 std::int64_t* lo, std::int64_t* hi) {
  *lo = std::max<std::int64_t>(0, ceil_div(-d, stride));
  *hi = std::min<std::int64_t>(out_extent - 1, floor_div(extent - 1 - d, stride));
}

}  // namespace

void ConvParams::validate() const {
  if (!w.defined()) throw ValueError("conv2d: undefined weights");
  std::int64_t k_h = kh(), k_w = kw();
  if (k_h != k_w || k_h < 1 || k_h > 3)
    throw ValueError("conv2d: kernel must be 1x1, 2x2 or 3x3, got " + std::to_string(k_h) + "x" +
                     std::to_string(k_w));
  if (stride != 1 && stride != 2) throw ValueError("conv2d: stride must be 1 or 2");
  if (stride == 2 && (k_h != 2 || padding != Padding::valid))
    throw ValueError("conv2d: stride 2 is the 2x2 valid downsampling form");
  if (b.defined() && !(b.shape() == Shape{1, out_channels(), 1, 1}))
    throw ShapeError("conv2d: bias shape " + b.shape().str() + " does not match out channels");
}

void conv_output_size(std::int64_t h, std::int64_t w, std::int64_t kh, std::int64_t kw, int stride,
                      Padding padding, std::int64_t* out_h, std::int64_t* out_w) {
  ConvGeom geom = conv_geometry(h, w, kh, kw, stride, padding);
  *out_h = geom.out_h;
  *out_w = geom.out_w;
}

Tensor conv2d(Graph& g, const Tensor& x, const ConvParams& p) {
  p.validate();
  const Shape xs = x.shape();
  if (xs.c != p.in_channels())
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) + " channels, weights expect " +
                     std::to_string(p.in_channels()));
  const std::int64_t KH = p.kh(), KW = p.kw(), CI = xs.c, CO = p.out_channels();
  const int stride = p.stride;
  const ConvGeom geom = conv_geometry(xs.h, xs.w, KH, KW, stride, p.padding);
  const std::int64_t H = xs.h, W = xs.w, OH = geom.out_h, OW = geom.out_w;
  const std::int64_t pt = geom.pad_top, pl = geom.pad_left;

  const bool has_bias = p.b.defined();
  Tensor out = Tensor::zeros(Shape{xs.n, CO, OH, OW});
  {
    const double* xd = x.data().data();
    const double* wd = p.w.data().data();
    const double* bd = has_bias ? p.b.data().data() : nullptr;
    double* od = out.data().data();
    parallel_for(xs.n * CO, [&](std::int64_t task) {
      const std::int64_t n = task / CO, co = task % CO;
      double* oplane = od + (n * CO + co) * OH * OW;
      std::fill(oplane, oplane + OH * OW, has_bias ? bd[co] : 0.0);
      for (std::int64_t ci = 0; ci < CI; ++ci) {
        const double* xplane = xd + (n * CI + ci) * H * W;
        const double* wk = wd + (co * CI + ci) * KH * KW;
        for (std::int64_t ky = 0; ky < KH; ++ky) {
          const std::int64_t dy = ky - pt;
          std::int64_t oy_lo, oy_hi;
          valid_range(H, OH, dy, stride, &oy_lo, &oy_hi);
          for (std::int64_t kx = 0; kx < KW; ++kx) {
            const std::int64_t dx = kx - pl;
            const double wv = wk[ky * KW + kx];
            std::int64_t ox_lo, ox_hi;
            valid_range(W, OW, dx, stride, &ox_lo, &ox_hi);
            for (std::int64_t oy = oy_lo; oy <= oy_hi; ++oy) {
              const double* xrow = xplane + (oy * stride + dy) * W + dx;
              double* orow = oplane + oy * OW;
              if (stride == 1) {
                for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) orow[ox] += wv * xrow[ox];
              } else {
                for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) orow[ox] += wv * xrow[ox * 2];
              }
            }
          }
        }
      }
    });
  }

  auto backward = [KH, KW, CI, CO, H, W, OH, OW, pt, pl, stride,
                   has_bias](const Graph::Node& node) {
    Tensor x = node.inputs[0], w = node.inputs[1];
    const double* go = node.output.grad().data();
    const std::int64_t N = x.shape().n;

    if (has_bias) {
      Tensor b = node.inputs[2];
      if (b.requires_grad()) {
        double* gb = b.grad_mut().data();
        parallel_for(CO, [&](std::int64_t co) {
          double acc = 0.0;
          for (std::int64_t n = 0; n < N; ++n) {
            const double* gplane = go + (n * CO + co) * OH * OW;
            for (std::int64_t i = 0; i < OH * OW; ++i) acc += gplane[i];
          }
          gb[co] += acc;
        });
      }
    }

    if (w.requires_grad()) {
      const double* xd = x.data().data();
      double* gw = w.grad_mut().data();
      parallel_for(CO * CI, [&](std::int64_t task) {
        const std::int64_t co = task / CI, ci = task % CI;
        double* wk = gw + (co * CI + ci) * KH * KW;
        for (std::int64_t ky = 0; ky < KH; ++ky) {
          const std::int64_t dy = ky - pt;
          std::int64_t oy_lo, oy_hi;
          valid_range(H, OH, dy, stride, &oy_lo, &oy_hi);
          for (std::int64_t kx = 0; kx < KW; ++kx) {
            const std::int64_t dx = kx - pl;
            std::int64_t ox_lo, ox_hi;
            valid_range(W, OW, dx, stride, &ox_lo, &ox_hi);
            double acc = 0.0;
            for (std::int64_t n = 0; n < N; ++n) {
              const double* xplane = xd + (n * CI + ci) * H * W;
              const double* gplane = go + (n * CO + co) * OH * OW;
              for (std::int64_t oy = oy_lo; oy <= oy_hi; ++oy) {
                const double* xrow = xplane + (oy * stride + dy) * W + dx;
                const double* grow = gplane + oy * OW;
                if (stride == 1) {
                  for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) acc += grow[ox] * xrow[ox];
                } else {
                  for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) acc += grow[ox] * xrow[ox * 2];
                }
              }
            }
            wk[ky * KW + kx] += acc;
          }
        }
      });
    }

    if (x.requires_grad()) {
      const double* wd = w.data().data();
      double* gx = x.grad_mut().data();
      parallel_for(N * CI, [&](std::int64_t task) {
        const std::int64_t n = task / CI, ci = task % CI;
        double* gxplane = gx + (n * CI + ci) * H * W;
        for (std::int64_t co = 0; co < CO; ++co) {
          const double* gplane = go + (n * CO + co) * OH * OW;
          const double* wk = wd + (co * CI + ci) * KH * KW;
          for (std::int64_t ky = 0; ky < KH; ++ky) {
            const std::int64_t dy = ky - pt;
            std::int64_t oy_lo, oy_hi;
            valid_range(H, OH, dy, stride, &oy_lo, &oy_hi);
            for (std::int64_t kx = 0; kx < KW; ++kx) {
              const std::int64_t dx = kx - pl;
              const double wv = wk[ky * KW + kx];
              std::int64_t ox_lo, ox_hi;
              valid_range(W, OW, dx, stride, &ox_lo, &ox_hi);
              for (std::int64_t oy = oy_lo; oy <= oy_hi; ++oy) {
                double* gxrow = gxplane + (oy * stride + dy) * W + dx;
                const double* grow = gplane + oy * OW;
                if (stride == 1) {
                  for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) gxrow[ox] += wv * grow[ox];
                } else {
                  for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) gxrow[ox * 2] += wv * grow[ox];
                }
              }
            }
          }
        }
      });
    }
  };
  std::vector<Tensor> inputs{x, p.w};
  if (has_bias) inputs.push_back(p.b);
  return g.record("conv2d", std::move(inputs), out, backward);
}

Tensor batch_norm(Graph& g, const Tensor& x, const BNParams& p, bool training) {
  const Shape xs = x.shape();
  const std::int64_t C = p.channels();
  if (xs.c != C)
    throw ShapeError("batch_norm: input has " + std::to_string(xs.c) +
                     " channels, parameters expect " + std::to_string(C));
  if (p.eps <= 0.0) throw ValueError("batch_norm: eps must be positive");
  const std::int64_t plane = xs.h * xs.w;
  const std::int64_t M = xs.n * plane;  // elements per channel
  if (training && M < 2)
    throw ValueError("batch_norm: training mode needs at least 2 elements per channel");

  // Per-channel mean and inverse std used by this pass; saved for backward.
  auto ctx = std::make_shared<std::vector<double>>(static_cast<std::size_t>(2 * C));
  double* mean = ctx->data();
  double* inv_std = ctx->data() + C;

  const double* xd = x.data().data();
  if (training) {
    for (std::int64_t c = 0; c < C; ++c) {
      double sum = 0.0;
      for (std::int64_t n = 0; n < xs.n; ++n) {
        const double* row = xd + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) sum += row[i];
      }
      const double mu = sum / static_cast<double>(M);
      double sq = 0.0;
      for (std::int64_t n = 0; n < xs.n; ++n) {
        const double* row = xd + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const double d = row[i] - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(M);
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + p.eps);
      // Running statistics are updated but never used in training mode.
      Tensor rm = p.running_mean, rv = p.running_var;
      rm.data()[static_cast<std::size_t>(c)] =
          p.momentum * rm.data()[static_cast<std::size_t>(c)] + (1.0 - p.momentum) * mu;
      rv.data()[static_cast<std::size_t>(c)] =
          p.momentum * rv.data()[static_cast<std::size_t>(c)] + (1.0 - p.momentum) * var;
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      mean[c] = p.running_mean.data()[static_cast<std::size_t>(c)];
      inv_std[c] = 1.0 / std::sqrt(p.running_var.data()[static_cast<std::size_t>(c)] + p.eps);
    }
  }

  Tensor out = Tensor::zeros(xs);
  {
    double* od = out.data().data();
    const double* gamma = p.gamma.data().data();
    const double* delta = p.delta.data().data();
    for (std::int64_t n = 0; n < xs.n; ++n) {
      for (std::int64_t c = 0; c < C; ++c) {
        const double* xrow = xd + (n * C + c) * plane;
        double* orow = od + (n * C + c) * plane;
        const double mu = mean[c], is = inv_std[c], gm = gamma[c], dl = delta[c];
        for (std::int64_t i = 0; i < plane; ++i) orow[i] = gm * (xrow[i] - mu) * is + dl;
      }
    }
  }

  auto backward = [ctx, training, C, plane, M](const Graph::Node& node) {
    Tensor x = node.inputs[0], gamma = node.inputs[1], delta = node.inputs[2];
    const double* mean = ctx->data();
    const double* inv_std = ctx->data() + C;
    const double* xd = x.data().data();
    const double* go = node.output.grad().data();
    const std::int64_t N = x.shape().n;
    const double* gm = gamma.data().data();

    for (std::int64_t c = 0; c < C; ++c) {
      // Channel sums of g and g*xhat drive every gradient below.
      double sum_g = 0.0, sum_gx = 0.0;
      const double mu = mean[c], is = inv_std[c];
      for (std::int64_t n = 0; n < N; ++n) {
        const double* grow = go + (n * C + c) * plane;
        const double* xrow = xd + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          sum_g += grow[i];
          sum_gx += grow[i] * (xrow[i] - mu) * is;
        }
      }
      if (gamma.requires_grad()) gamma.grad_mut()[static_cast<std::size_t>(c)] += sum_gx;
      if (delta.requires_grad()) delta.grad_mut()[static_cast<std::size_t>(c)] += sum_g;
      if (x.requires_grad()) {
        double* gx = x.grad_mut().data();
        const double k = gm[c] * is;
        if (training) {
          const double mg = sum_g / static_cast<double>(M);
          const double mgx = sum_gx / static_cast<double>(M);
          for (std::int64_t n = 0; n < N; ++n) {
            const double* grow = go + (n * C + c) * plane;
            const double* xrow = xd + (n * C + c) * plane;
            double* gxrow = gx + (n * C + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              const double xh = (xrow[i] - mu) * is;
              gxrow[i] += k * (grow[i] - mg - xh * mgx);
            }
          }
        } else {
          for (std::int64_t n = 0; n < N; ++n) {
            const double* grow = go + (n * C + c) * plane;
            double* gxrow = gx + (n * C + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) gxrow[i] += k * grow[i];
          }
        }
      }
    }
  };
  return g.record("batch_norm", {x, p.gamma, p.delta}, out, backward);
}

Tensor prelu(Graph& g, const Tensor& x, const PReLUParams& p) {
  const Shape xs = x.shape();
  if (xs.c != p.channels())
    throw ShapeError("prelu: input has " + std::to_string(xs.c) + " channels, slopes expect " +
                     std::to_string(p.channels()));
  const std::int64_t C = xs.c, plane = xs.h * xs.w;
  Tensor out = Tensor::zeros(xs);
  {
    const double* xd = x.data().data();
    const double* sd = p.slope.data().data();
    double* od = out.data().data();
    for (std::int64_t n = 0; n < xs.n; ++n)
      for (std::int64_t c = 0; c < C; ++c) {
        const double a = sd[c];
        const double* xrow = xd + (n * C + c) * plane;
        double* orow = od + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) orow[i] = xrow[i] >= 0.0 ? xrow[i] : a * xrow[i];
      }
  }
  auto backward = [C, plane](const Graph::Node& node) {
    Tensor x = node.inputs[0], slope = node.inputs[1];
    const double* xd = x.data().data();
    const double* sd = slope.data().data();
    const double* go = node.output.grad().data();
    const std::int64_t N = x.shape().n;
    double* gx = x.requires_grad() ? x.grad_mut().data() : nullptr;
    for (std::int64_t c = 0; c < C; ++c) {
      const double a = sd[c];
      double slope_acc = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        const double* xrow = xd + (n * C + c) * plane;
        const double* grow = go + (n * C + c) * plane;
        if (gx != nullptr) {
          double* gxrow = gx + (n * C + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            if (xrow[i] >= 0.0) {
              gxrow[i] += grow[i];
            } else {
              gxrow[i] += a * grow[i];
              slope_acc += xrow[i] * grow[i];
            }
          }
        } else {
          for (std::int64_t i = 0; i < plane; ++i)
            if (xrow[i] < 0.0) slope_acc += xrow[i] * grow[i];
        }
      }
      if (slope.requires_grad()) slope.grad_mut()[static_cast<std::size_t>(c)] += slope_acc;
    }
  };
  return g.record("prelu", {x, p.slope}, out, backward);
}

Tensor upsample_nearest2x(Graph& g, const Tensor& x) {
  const Shape xs = x.shape();
  Tensor out = Tensor::zeros(Shape{xs.n, xs.c, 2 * xs.h, 2 * xs.w});
  {
    const double* xd = x.data().data();
    double* od = out.data().data();
    const std::int64_t planes = xs.n * xs.c;
    for (std::int64_t pc = 0; pc < planes; ++pc) {
      const double* xplane = xd + pc * xs.h * xs.w;
      double* oplane = od + pc * 4 * xs.h * xs.w;
      for (std::int64_t y = 0; y < xs.h; ++y)
        for (std::int64_t x2 = 0; x2 < xs.w; ++x2) {
          const double v = xplane[y * xs.w + x2];
          double* o = oplane + (2 * y) * (2 * xs.w) + 2 * x2;
          o[0] = v;
          o[1] = v;
          o[2 * xs.w] = v;
          o[2 * xs.w + 1] = v;
        }
    }
  }
  auto backward = [](const Graph::Node& node) {
    Tensor x = node.inputs[0];
    if (!x.requires_grad()) return;
    const Shape xs = x.shape();
    const double* go = node.output.grad().data();
    double* gx = x.grad_mut().data();
    const std::int64_t planes = xs.n * xs.c;
    for (std::int64_t pc = 0; pc < planes; ++pc) {
      const double* gplane = go + pc * 4 * xs.h * xs.w;
      double* gxplane = gx + pc * xs.h * xs.w;
      for (std::int64_t y = 0; y < xs.h; ++y)
        for (std::int64_t x2 = 0; x2 < xs.w; ++x2) {
          const double* s = gplane + (2 * y) * (2 * xs.w) + 2 * x2;
          gxplane[y * xs.w + x2] += s[0] + s[1] + s[2 * xs.w] + s[2 * xs.w + 1];
        }
    }
  };
  return g.record("upsample2x", {x}, out, backward);
}

void UnpoolParams::validate() const {
  proj.validate();
  if (proj.kh() != 1 || proj.stride != 1)
    throw ValueError("unpool: projection must be a stride-1 1x1 convolution");
  if (proj.in_channels() != 2 * proj.out_channels())
    throw ValueError("unpool: projection must halve the channel count");
}

Tensor unpool(Graph& g, const Tensor& x, const UnpoolParams& p) {
  p.validate();
  if (x.shape().c % 2 != 0)
    throw ShapeError("unpool: channel count " + std::to_string(x.shape().c) + " is odd");
  return conv2d(g, upsample_nearest2x(g, x), p.proj);
}

Tensor pre_activation_unit(Graph& g, const Tensor& x, const BNParams& bn, const PReLUParams& act,
                           const ConvParams& conv, bool training) {
  return conv2d(g, prelu(g, batch_norm(g, x, bn, training), act), conv);
}

Tensor pre_activation_unit(Graph& g, const Tensor& x, const PreActUnit& unit, bool training) {
  return pre_activation_unit(g, x, unit.bn, unit.act, unit.conv, training);
}

ConvParams make_conv(ParamRegistry& reg, const std::string& name, std::int64_t in_ch,
                     std::int64_t out_ch, std::int64_t k, int stride, Padding padding, Rng& rng,
                     bool bias) {
  ConvParams p;
  const double fan_in = static_cast<double>(in_ch * k * k);
  const double stddev = std::sqrt(2.0 / ((1.0 + 0.25 * 0.25) * fan_in));
  Tensor w = Tensor::zeros(Shape{out_ch, in_ch, k, k});
  for (double& v : w.data()) v = rng.normal(0.0, stddev);
  p.w = reg.add(name + "/w", w, ParamKind::conv_weight);
  if (bias)
    p.b = reg.add(name + "/b", Tensor::zeros(Shape{1, out_ch, 1, 1}), ParamKind::conv_bias);
  p.stride = stride;
  p.padding = padding;
  p.validate();
  return p;
}

BNParams make_bn(ParamRegistry& reg, const std::string& name, std::int64_t channels) {
  BNParams p;
  p.gamma = reg.add(name + "/gamma", Tensor::full(Shape{1, channels, 1, 1}, 1.0), ParamKind::bn_gamma);
  p.delta = reg.add(name + "/delta", Tensor::zeros(Shape{1, channels, 1, 1}), ParamKind::bn_delta);
  p.running_mean = reg.add(name + "/running_mean", Tensor::zeros(Shape{1, channels, 1, 1}),
                           ParamKind::bn_running_mean, false);
  p.running_var = reg.add(name + "/running_var", Tensor::full(Shape{1, channels, 1, 1}, 1.0),
                          ParamKind::bn_running_var, false);
  return p;
}

PReLUParams make_prelu(ParamRegistry& reg, const std::string& name, std::int64_t channels) {
  PReLUParams p;
  p.slope = reg.add(name + "/slope", Tensor::full(Shape{1, channels, 1, 1}, 0.25),
                    ParamKind::prelu_slope);
  return p;
}

UnpoolParams make_unpool(ParamRegistry& reg, const std::string& name, std::int64_t in_ch,
                         Rng& rng) {
  if (in_ch % 2 != 0) throw ValueError("unpool: input channel count must be even");
  UnpoolParams p;
  // The projection lands on a skip addition that feeds a batch norm, so a
  // bias would be dead weight.
  p.proj = make_conv(reg, name + "/proj", in_ch, in_ch / 2, 1, 1, Padding::same, rng, false);
  return p;
}

PreActUnit make_pre_act_unit(ParamRegistry& reg, const std::string& name, std::int64_t in_ch,
                             std::int64_t out_ch, std::int64_t k, Rng& rng, bool bias) {
  PreActUnit unit;
  unit.bn = make_bn(reg, name + "/bn", in_ch);
  unit.act = make_prelu(reg, name + "/act", in_ch);
  unit.conv = make_conv(reg, name + "/conv", in_ch, out_ch, k, 1, Padding::same, rng, bias);
  return unit;
}

}  // namespace rdunet
