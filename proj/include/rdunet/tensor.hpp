#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rdunet/errors.hpp"

namespace rdunet {

/// (batch, channels, height, width) of a dense 4-D array.
struct Shape {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  std::int64_t numel() const { return n * c * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense 4-D tensor of 64-bit reals with an optional gradient buffer.
/// Copies share storage; a Tensor is a handle, which is what lets graph
/// nodes and parameter registries observe gradient accumulation.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false);
  static Tensor full(Shape s, double value, bool requires_grad = false);
  static Tensor from(Shape s, std::vector<double> values, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t numel() const { return shape().numel(); }

  std::span<double> data();
  std::span<const double> data() const;
  double& at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x);
  double at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const;

  /// True when gradients will be accumulated for this tensor during
  /// backward. Set on leaves by the caller; propagated to op outputs by
  /// Graph::record.
  bool requires_grad() const;
  void set_requires_grad(bool v);

  bool has_grad() const;
  std::span<const double> grad() const;
  /// Gradient buffer, allocated zero-filled on first use.
  std::span<double> grad_mut();
  void zero_grad();
  void drop_grad();

  /// Deep copy of values (grad and flags are not copied).
  Tensor clone() const;

  /// Stable identity of the underlying storage.
  const void* id() const { return impl_.get(); }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
};

/// Define-by-run computation graph. Operations append nodes in construction
/// order; backward() replays them in exact reverse order, accumulating
/// gradients into every tensor that requires them. The graph is rebuilt on
/// every forward pass.
class Graph {
 public:
  struct Node {
    const char* op;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void(const Node&)> backward;
  };

  /// Appends a node; returns `output` with its requires_grad flag set to
  /// the OR over the inputs' flags.
  Tensor record(const char* op, std::vector<Tensor> inputs, Tensor output,
                std::function<void(const Node&)> backward);

  /// Seeds the final node's output with `seed` and runs the reverse sweep.
  /// All gradient buffers touched by this graph are zeroed first, so each
  /// backward call yields the gradients of exactly this pass.
  void backward(const Tensor& seed);

  bool empty() const { return nodes_.empty(); }
  std::size_t size() const { return nodes_.size(); }
  const Tensor& output() const;

 private:
  std::vector<Node> nodes_;
};

// Element-wise and structural primitives. Binary ops require exact shape
// equality; there is no implicit broadcasting.
Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& a, double factor);
Tensor sum(Graph& g, const Tensor& a);  // -> (1,1,1,1)

/// Stacks b's channels after a's; batch and spatial sizes must agree.
Tensor concat_channels(Graph& g, const Tensor& a, const Tensor& b);
Tensor concat_channels(Graph& g, std::span<const Tensor> parts);

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  bool finite = true;
  std::size_t probes = 0;
  std::string worst;  // "wrt[k][i] analytic=.. numeric=.."
};

/// Compares the analytic gradients of a scalar-valued function against
/// central finite differences (f(x+h)-f(x-h))/(2h), element by element over
/// the tensors in `wrt`. Relative error uses max(|analytic|, |numeric|,
/// 1e-8) as the denominator. With max_probes > 0 a deterministic subsample
/// of elements is checked (at least one per tensor).
GradCheckReport grad_check(const std::function<Tensor(Graph&)>& fn, std::span<Tensor> wrt,
                           double step = 1e-6, double tolerance = 1e-4,
                           std::size_t max_probes = 0, std::uint64_t probe_seed = 0x5eed);

}  // namespace rdunet
