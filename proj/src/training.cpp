#include "rdunet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace rdunet {

namespace {
constexpr double kProbFloor = 1e-12;  // guards log(0)
}

Tensor softmax_probs(Graph& g, const Tensor& logits) {
  const Shape s = logits.shape();
  if (s.c < 2) throw ShapeError("softmax needs at least 2 class channels, got " + s.str());
  const std::int64_t N = s.c, plane = s.h * s.w;
  Tensor out = Tensor::zeros(s);
  {
    const double* zd = logits.data().data();
    double* pd = out.data().data();
    for (std::int64_t n = 0; n < s.n; ++n) {
      const double* zb = zd + n * N * plane;
      double* pb = pd + n * N * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        double mx = zb[i];
        for (std::int64_t c = 1; c < N; ++c) mx = std::max(mx, zb[c * plane + i]);
        double denom = 0.0;
        for (std::int64_t c = 0; c < N; ++c) {
          const double e = std::exp(zb[c * plane + i] - mx);
          pb[c * plane + i] = e;
          denom += e;
        }
        for (std::int64_t c = 0; c < N; ++c) pb[c * plane + i] /= denom;
      }
    }
  }
  auto backward = [N, plane](const Graph::Node& node) {
    Tensor z = node.inputs[0];
    if (!z.requires_grad()) return;
    const double* p = node.output.data().data();
    const double* go = node.output.grad().data();
    double* gz = z.grad_mut().data();
    const std::int64_t batch = z.shape().n;
    for (std::int64_t n = 0; n < batch; ++n) {
      const double* pb = p + n * N * plane;
      const double* gb = go + n * N * plane;
      double* zb = gz + n * N * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        double dot = 0.0;
        for (std::int64_t c = 0; c < N; ++c) dot += gb[c * plane + i] * pb[c * plane + i];
        for (std::int64_t c = 0; c < N; ++c)
          zb[c * plane + i] += pb[c * plane + i] * (gb[c * plane + i] - dot);
      }
    }
  };
  return g.record("softmax", {logits}, out, backward);
}

Tensor nll_loss(Graph& g, const Tensor& probs, const std::vector<std::uint8_t>& labels,
                std::size_t* clamped) {
  const Shape s = probs.shape();
  const std::int64_t plane = s.h * s.w;
  if (static_cast<std::int64_t>(labels.size()) != s.n * plane)
    throw ShapeError("nll_loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(s.n * plane) + " pixels");
  const double inv_m = 1.0 / static_cast<double>(s.n * plane);

  auto shared_labels = std::make_shared<std::vector<std::uint8_t>>(labels);
  std::size_t clamp_count = 0;
  double acc = 0.0;
  const double* pd = probs.data().data();
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t i = 0; i < plane; ++i) {
      const std::uint8_t y = (*shared_labels)[static_cast<std::size_t>(n * plane + i)];
      if (y >= s.c) throw ValueError("nll_loss: label " + std::to_string(y) + " out of range");
      double p = pd[(n * s.c + y) * plane + i];
      if (p < kProbFloor) {
        p = kProbFloor;
        ++clamp_count;
      }
      acc -= std::log(p);
    }
  }
  if (clamped != nullptr) *clamped = clamp_count;

  Tensor out = Tensor::zeros(Shape{1, 1, 1, 1});
  out.data()[0] = acc * inv_m;
  auto backward = [shared_labels, plane, inv_m](const Graph::Node& node) {
    Tensor probs = node.inputs[0];
    if (!probs.requires_grad()) return;
    const Shape s = probs.shape();
    const double go = node.output.grad()[0];
    const double* pd = probs.data().data();
    double* gp = probs.grad_mut().data();
    for (std::int64_t n = 0; n < s.n; ++n) {
      for (std::int64_t i = 0; i < plane; ++i) {
        const std::uint8_t y = (*shared_labels)[static_cast<std::size_t>(n * plane + i)];
        const double p = pd[(n * s.c + y) * plane + i];
        // Clamped pixels sit on the flat part of log(max(p, floor)).
        if (p >= kProbFloor) gp[(n * s.c + y) * plane + i] -= go * inv_m / p;
      }
    }
  };
  return g.record("nll_loss", {probs}, out, backward);
}

Tensor weight_penalty(Graph& g, const ParamRegistry& params, double lambda) {
  if (lambda < 0.0) throw ValueError("weight penalty needs lambda >= 0");
  Tensor total = Tensor::zeros(Shape{1, 1, 1, 1});
  bool any = false;
  for (const auto& e : params.entries()) {
    if (e.kind != ParamKind::conv_weight) continue;
    Tensor term = sum(g, mul(g, e.tensor, e.tensor));
    total = any ? add(g, total, term) : term;
    any = true;
  }
  if (!any) return scale(g, total, 0.0);
  return scale(g, total, lambda / 2.0);
}

Tensor loss_from_probs(Graph& g, const Tensor& probs, const std::vector<std::uint8_t>& labels,
                       const ParamRegistry& params, double lambda, std::size_t* clamped) {
  Tensor data_term = nll_loss(g, probs, labels, clamped);
  if (lambda == 0.0) return data_term;
  return add(g, data_term, weight_penalty(g, params, lambda));
}

double lr_schedule(double base_lr, std::int64_t epoch, std::int64_t interval) {
  if (epoch < 0) throw ValueError("lr_schedule: epoch must be >= 0");
  if (interval < 1) throw ValueError("lr_schedule: interval must be >= 1");
  return base_lr * std::pow(10.0, -static_cast<double>(epoch / interval));
}

void adamax_step(AdamaxState& state, std::map<std::string, Tensor>& params,
                 const std::map<std::string, std::vector<double>>& grads, double lr) {
  if (params.size() != grads.size())
    throw ValueError("adamax_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ValueError("adamax_step: gradient for unknown parameter " + name);
    if (static_cast<std::int64_t>(g.size()) != it->second.numel())
      throw ShapeError("adamax_step: gradient size mismatch for " + name);
  }
  state.t += 1;
  const double correction = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  for (auto& [name, tensor] : params) {
    const std::vector<double>& g = grads.at(name);
    AdamaxState::Slot& slot = state.slots[name];
    if (slot.m.empty()) {
      slot.m.assign(g.size(), 0.0);
      slot.u.assign(g.size(), 0.0);
    }
    auto theta = tensor.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      slot.m[i] = state.beta1 * slot.m[i] + (1.0 - state.beta1) * g[i];
      slot.u[i] = std::max(state.beta2 * slot.u[i], std::fabs(g[i]));
      theta[i] -= lr / correction * slot.m[i] / (slot.u[i] + state.eps);
    }
  }
}

void adamax_step(AdamaxState& state, ParamRegistry& params, double lr) {
  state.t += 1;
  const double correction = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  for (const auto& e : params.entries()) {
    if (!e.trainable) continue;
    AdamaxState::Slot& slot = state.slots[e.name];
    const std::size_t numel = static_cast<std::size_t>(e.tensor.numel());
    if (slot.m.empty()) {
      slot.m.assign(numel, 0.0);
      slot.u.assign(numel, 0.0);
    }
    Tensor tensor = e.tensor;
    auto theta = tensor.data();
    if (tensor.has_grad()) {
      auto g = tensor.grad();
      for (std::size_t i = 0; i < numel; ++i) {
        slot.m[i] = state.beta1 * slot.m[i] + (1.0 - state.beta1) * g[i];
        slot.u[i] = std::max(state.beta2 * slot.u[i], std::fabs(g[i]));
        theta[i] -= lr / correction * slot.m[i] / (slot.u[i] + state.eps);
      }
    } else {
      for (std::size_t i = 0; i < numel; ++i) {
        slot.m[i] = state.beta1 * slot.m[i];
        slot.u[i] = state.beta2 * slot.u[i];
        theta[i] -= lr / correction * slot.m[i] / (slot.u[i] + state.eps);
      }
    }
  }
}

void make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> indices,
                Tensor* batch, std::vector<std::uint8_t>* labels) {
  if (indices.empty()) throw ValueError("make_batch: empty index list");
  const Sample& first = samples[indices[0]];
  const std::int64_t h = first.h, w = first.w;
  *batch = Tensor::zeros(Shape{static_cast<std::int64_t>(indices.size()), 1, h, w});
  labels->resize(indices.size() * static_cast<std::size_t>(h * w));
  auto bd = batch->data();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const Sample& s = samples[indices[k]];
    if (s.h != h || s.w != w) throw ShapeError("make_batch: samples differ in size");
    std::copy(s.image.begin(), s.image.end(), bd.begin() + static_cast<std::ptrdiff_t>(k * h * w));
    std::copy(s.mask.begin(), s.mask.end(),
              labels->begin() + static_cast<std::ptrdiff_t>(k * static_cast<std::size_t>(h * w)));
  }
}

std::vector<std::uint8_t> argmax_classes(const Tensor& logits) {
  const Shape s = logits.shape();
  const std::int64_t plane = s.h * s.w;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(s.n * plane));
  const double* zd = logits.data().data();
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t i = 0; i < plane; ++i) {
      int best = 0;
      double best_v = zd[(n * s.c) * plane + i];
      for (std::int64_t c = 1; c < s.c; ++c) {
        const double v = zd[(n * s.c + c) * plane + i];
        if (v > best_v) {
          best_v = v;
          best = static_cast<int>(c);
        }
      }
      out[static_cast<std::size_t>(n * plane + i)] = static_cast<std::uint8_t>(best);
    }
  return out;
}

double pixel_accuracy(const Tensor& logits, const std::vector<std::uint8_t>& labels) {
  auto pred = argmax_classes(logits);
  if (pred.size() != labels.size()) throw ShapeError("pixel_accuracy: label count mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

TrainResult train(Model& model, const std::vector<Sample>& dataset, const TrainingConfig& cfg,
                  const std::function<bool(const TrainLogRow&)>& on_step,
                  const std::function<void(std::int64_t)>& checkpoint_fn) {
  if (dataset.empty()) throw ValueError("train: dataset is empty");
  if (cfg.batch < 1) throw ValueError("train: batch size must be >= 1");
  if (cfg.lr <= 0.0) throw ValueError("train: learning rate must be positive");
  if (cfg.lambda_reg < 0.0) throw ValueError("train: lambda_reg must be >= 0");

  TrainResult result;
  Rng rng(cfg.seed);
  AdamaxState opt;
  std::int64_t step = 0;
  const std::size_t count = dataset.size();
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;

  bool stop = false;
  for (std::int64_t epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    const double lr = lr_schedule(cfg.lr, epoch, cfg.lr_decay_interval);
    // Fisher-Yates with the shared stream keeps runs reproducible.
    for (std::size_t i = count - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.uniform_index(i + 1));
      std::swap(order[i], order[j]);
    }
    for (std::size_t start = 0; start < count && !stop; start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t stop_at = std::min(count, start + static_cast<std::size_t>(cfg.batch));
      std::vector<Sample> prepared;
      std::vector<std::size_t> indices;
      prepared.reserve(stop_at - start);
      for (std::size_t k = start; k < stop_at; ++k) {
        const Sample& s = dataset[order[k]];
        prepared.push_back(cfg.augment ? augment(s, rng) : s);
        indices.push_back(prepared.size() - 1);
      }
      Tensor batch;
      std::vector<std::uint8_t> labels;
      make_batch(prepared, indices, &batch, &labels);

      Graph g;
      Tensor logits = forward(g, model, batch, /*training=*/true);
      Tensor probs = softmax_probs(g, logits);
      Tensor loss = loss_from_probs(g, probs, labels, model.params, cfg.lambda_reg);
      const double loss_value = loss.data()[0];
      if (!std::isfinite(loss_value)) {
        result.aborted = true;
        result.bad_step = step;
        return result;
      }
      g.backward(Tensor::full(Shape{1, 1, 1, 1}, 1.0));
      adamax_step(opt, model.params, lr);

      TrainLogRow row{epoch, step, lr, loss_value, pixel_accuracy(logits, labels)};
      result.log.push_back(row);
      ++step;
      if (on_step && !on_step(row)) stop = true;
      if (cfg.max_steps > 0 && step >= cfg.max_steps) stop = true;
    }
    if (checkpoint_fn && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)
      checkpoint_fn(epoch);
  }
  if (checkpoint_fn) checkpoint_fn(-1);  // final state
  return result;
}

std::string train_log_csv(const std::vector<TrainLogRow>& rows) {
  std::ostringstream out;
  out << "epoch,step,lr,loss,accuracy\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%lld,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(r.epoch), static_cast<long long>(r.step), r.lr, r.loss,
                  r.accuracy);
    out << buf;
  }
  return out.str();
}

}  // namespace rdunet
