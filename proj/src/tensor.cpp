#include "rdunet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_set>
#include <utility>

#include "rdunet/rng.hpp"

namespace rdunet {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

struct Tensor::Impl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until demanded
  bool requires_grad = false;
};

Tensor Tensor::zeros(Shape s, bool requires_grad) {
  if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) throw ShapeError("negative dimension in " + s.str());
  auto impl = std::make_shared<Impl>();
  impl->shape = s;
  impl->data.assign(static_cast<std::size_t>(s.numel()), 0.0);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape s, double value, bool requires_grad) {
  Tensor t = zeros(s, requires_grad);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::from(Shape s, std::vector<double> values, bool requires_grad) {
  if (static_cast<std::int64_t>(values.size()) != s.numel())
    throw ShapeError("data length " + std::to_string(values.size()) + " does not match " + s.str());
  auto impl = std::make_shared<Impl>();
  impl->shape = s;
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ValueError("use of undefined tensor");
  return impl_->shape;
}

std::span<double> Tensor::data() {
  if (!impl_) throw ValueError("use of undefined tensor");
  return impl_->data;
}

std::span<const double> Tensor::data() const {
  if (!impl_) throw ValueError("use of undefined tensor");
  return impl_->data;
}

double& Tensor::at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) {
  const Shape& s = shape();
  return impl_->data[static_cast<std::size_t>(((n * s.c + c) * s.h + y) * s.w + x)];
}

double Tensor::at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const {
  const Shape& s = shape();
  return impl_->data[static_cast<std::size_t>(((n * s.c + c) * s.h + y) * s.w + x)];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
  if (!impl_) throw ValueError("use of undefined tensor");
  impl_->requires_grad = v;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ValueError("tensor has no gradient");
  return impl_->grad;
}

std::span<double> Tensor::grad_mut() {
  if (!impl_) throw ValueError("use of undefined tensor");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::drop_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::clone() const {
  if (!impl_) return Tensor();
  return from(impl_->shape, impl_->data);
}

Tensor Graph::record(const char* op, std::vector<Tensor> inputs, Tensor output,
                     std::function<void(const Node&)> backward) {
  bool track = false;
  for (const Tensor& t : inputs) track = track || t.requires_grad();
  output.set_requires_grad(track);
  nodes_.push_back(Node{op, std::move(inputs), output, std::move(backward)});
  return output;
}

const Tensor& Graph::output() const {
  if (nodes_.empty()) throw ValueError("empty graph has no output");
  return nodes_.back().output;
}

void Graph::backward(const Tensor& seed) {
  if (nodes_.empty()) throw ValueError("backward on an empty graph");
  Tensor root = nodes_.back().output;
  if (!(seed.shape() == root.shape()))
    throw ShapeError("seed shape " + seed.shape().str() + " does not match graph output " +
                     root.shape().str());

  // Fresh gradients for everything this graph touches.
  std::unordered_set<const void*> seen;
  for (Node& node : nodes_) {
    for (Tensor& t : node.inputs)
      if (seen.insert(t.id()).second) t.zero_grad();
    if (seen.insert(node.output.id()).second) node.output.zero_grad();
  }

  auto root_grad = root.grad_mut();
  auto seed_data = seed.data();
  std::copy(seed_data.begin(), seed_data.end(), root_grad.begin());

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.requires_grad()) continue;
    it->backward(*it);
  }
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!(a.shape() == b.shape()))
    throw ShapeError(std::string(op) + ": shapes " + a.shape().str() + " and " + b.shape().str() +
                     " differ");
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  auto ad = a.data();
  auto bd = b.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
  return g.record("add", {a, b}, out, [](const Graph::Node& n) {
    auto go = n.output.grad();
    for (int k = 0; k < 2; ++k) {
      Tensor t = n.inputs[static_cast<std::size_t>(k)];
      if (t.requires_grad()) axpy(1.0, go, t.grad_mut());
    }
  });
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  auto ad = a.data();
  auto bd = b.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
  return g.record("mul", {a, b}, out, [](const Graph::Node& n) {
    auto go = n.output.grad();
    Tensor a = n.inputs[0];
    Tensor b = n.inputs[1];
    if (a.requires_grad()) {
      auto ga = a.grad_mut();
      auto bd = b.data();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bd[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_mut();
      auto ad = a.data();
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * ad[i];
    }
  });
}

Tensor scale(Graph& g, const Tensor& a, double factor) {
  Tensor out = Tensor::zeros(a.shape());
  auto ad = a.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = factor * ad[i];
  return g.record("scale", {a}, out, [factor](const Graph::Node& n) {
    Tensor a = n.inputs[0];
    if (a.requires_grad()) axpy(factor, n.output.grad(), a.grad_mut());
  });
}

Tensor sum(Graph& g, const Tensor& a) {
  Tensor out = Tensor::zeros(Shape{1, 1, 1, 1});
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  out.data()[0] = acc;
  return g.record("sum", {a}, out, [](const Graph::Node& n) {
    Tensor a = n.inputs[0];
    if (!a.requires_grad()) return;
    double go = n.output.grad()[0];
    auto ga = a.grad_mut();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go;
  });
}

Tensor concat_channels(Graph& g, std::span<const Tensor> parts) {
  if (parts.empty()) throw ValueError("concat_channels: no inputs");
  if (parts.size() == 1) return parts[0];
  Shape first = parts[0].shape();
  std::int64_t channels = 0;
  for (const Tensor& t : parts) {
    const Shape& s = t.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w)
      throw ShapeError("concat_channels: " + s.str() + " does not align with " + first.str());
    channels += s.c;
  }
  Shape os{first.n, channels, first.h, first.w};
  Tensor out = Tensor::zeros(os);
  auto od = out.data();
  std::int64_t plane = first.h * first.w;
  std::int64_t offset_c = 0;
  for (const Tensor& t : parts) {
    auto td = t.data();
    std::int64_t tc = t.shape().c;
    for (std::int64_t n = 0; n < first.n; ++n) {
      std::copy_n(td.begin() + n * tc * plane, tc * plane,
                  od.begin() + (n * channels + offset_c) * plane);
    }
    offset_c += tc;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return g.record("concat", std::move(inputs), out, [plane, channels](const Graph::Node& n) {
    auto go = n.output.grad();
    std::int64_t batch = n.output.shape().n;
    std::int64_t offset_c = 0;
    for (const Tensor& in : n.inputs) {
      std::int64_t tc = in.shape().c;
      if (in.requires_grad()) {
        Tensor t = in;
        auto gi = t.grad_mut();
        for (std::int64_t b = 0; b < batch; ++b) {
          const double* src = go.data() + (b * channels + offset_c) * plane;
          double* dst = gi.data() + b * tc * plane;
          for (std::int64_t i = 0; i < tc * plane; ++i) dst[i] += src[i];
        }
      }
      offset_c += tc;
    }
  });
}

Tensor concat_channels(Graph& g, const Tensor& a, const Tensor& b) {
  Tensor parts[2] = {a, b};
  // A two-input concat still records a node even though the n-ary form
  // collapses single inputs; callers rely on the channel-order contract.
  return concat_channels(g, std::span<const Tensor>(parts, 2));
}

GradCheckReport grad_check(const std::function<Tensor(Graph&)>& fn, std::span<Tensor> wrt,
                           double step, double tolerance, std::size_t max_probes,
                           std::uint64_t probe_seed) {
  if (step <= 0.0) throw ValueError("grad_check: step must be positive");
  GradCheckReport report;

  auto eval = [&fn]() {
    Graph g;
    Tensor out = fn(g);
    if (!(out.shape() == Shape{1, 1, 1, 1}))
      throw ValueError("grad_check: function output must be scalar, got " + out.shape().str());
    return out.data()[0];
  };

  // Analytic pass.
  std::vector<std::vector<double>> analytic;
  {
    Graph g;
    Tensor out = fn(g);
    if (!(out.shape() == Shape{1, 1, 1, 1}))
      throw ValueError("grad_check: function output must be scalar, got " + out.shape().str());
    if (!std::isfinite(out.data()[0])) {
      report.finite = false;
      report.worst = "non-finite function value at the base point";
      return report;
    }
    g.backward(Tensor::full(Shape{1, 1, 1, 1}, 1.0));
    for (Tensor& t : wrt) {
      if (t.has_grad())
        analytic.emplace_back(t.grad().begin(), t.grad().end());
      else
        analytic.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
    }
  }

  // Probe selection: all elements, or a deterministic subsample with at
  // least one probe per tensor.
  std::vector<std::pair<std::size_t, std::size_t>> probes;
  std::size_t total = 0;
  for (const Tensor& t : wrt) total += static_cast<std::size_t>(t.numel());
  if (max_probes == 0 || max_probes >= total) {
    for (std::size_t k = 0; k < wrt.size(); ++k)
      for (std::size_t i = 0; i < static_cast<std::size_t>(wrt[k].numel()); ++i)
        probes.emplace_back(k, i);
  } else {
    Rng rng(probe_seed);
    std::set<std::pair<std::size_t, std::size_t>> chosen;
    for (std::size_t k = 0; k < wrt.size(); ++k)
      chosen.emplace(k, static_cast<std::size_t>(rng.uniform_index(
                            static_cast<std::uint64_t>(wrt[k].numel()))));
    while (chosen.size() < max_probes && chosen.size() < total) {
      std::size_t k = static_cast<std::size_t>(rng.uniform_index(wrt.size()));
      std::size_t i =
          static_cast<std::size_t>(rng.uniform_index(static_cast<std::uint64_t>(wrt[k].numel())));
      chosen.emplace(k, i);
    }
    probes.assign(chosen.begin(), chosen.end());
  }
  report.probes = probes.size();

  for (auto [k, i] : probes) {
    double* slot = &wrt[k].data()[i];
    double saved = *slot;
    *slot = saved + step;
    double f_plus = eval();
    *slot = saved - step;
    double f_minus = eval();
    *slot = saved;
    if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
      report.finite = false;
      report.pass = false;
      report.worst = "non-finite function value while probing wrt[" + std::to_string(k) + "][" +
                     std::to_string(i) + "]";
      return report;
    }
    double numeric = (f_plus - f_minus) / (2.0 * step);
    double a = analytic[k][i];
    double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
    double rel = std::fabs(a - numeric) / denom;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst = "wrt[" + std::to_string(k) + "][" + std::to_string(i) +
                     "] analytic=" + std::to_string(a) + " numeric=" + std::to_string(numeric);
    }
  }
  report.pass = report.finite && report.max_rel_err < tolerance;
  return report;
}

}  // namespace rdunet
