#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "rdunet/data.hpp"
#include "rdunet/network.hpp"
#include "rdunet/tensor.hpp"

namespace rdunet {

/// Per-pixel class probabilities from (n, N, h, w) logits; numerically
/// stabilized by max subtraction, invariant to constant logit shifts.
Tensor softmax_probs(Graph& g, const Tensor& logits);

/// Mean negative log-probability of the true class over every pixel of the
/// batch. Probabilities below 1e-12 are clamped before the log; the clamp
/// count is reported through `clamped` when given.
Tensor nll_loss(Graph& g, const Tensor& probs, const std::vector<std::uint8_t>& labels,
                std::size_t* clamped = nullptr);

/// (lambda/2) * sum of squared convolution weights; biases, BN affine terms
/// and PReLU slopes are exempt.
Tensor weight_penalty(Graph& g, const ParamRegistry& params, double lambda);

/// Cross-entropy of `probs` against `labels` plus the weight penalty.
Tensor loss_from_probs(Graph& g, const Tensor& probs, const std::vector<std::uint8_t>& labels,
                       const ParamRegistry& params, double lambda, std::size_t* clamped = nullptr);

/// Step-decay schedule: base divided by ten every `interval` epochs.
double lr_schedule(double base_lr, std::int64_t epoch, std::int64_t interval = 15);

struct AdamaxState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;

  struct Slot {
    std::vector<double> m;  // first moment
    std::vector<double> u;  // infinity norm
  };
  std::map<std::string, Slot> slots;
};

/// One Adamax update over keyed parameters:
///   t += 1;  m = b1*m + (1-b1)*g;  u = max(b2*u, |g|);
///   theta -= lr/(1-b1^t) * m/(u+eps).
/// Gradient keys must match the parameter keys exactly.
void adamax_step(AdamaxState& state, std::map<std::string, Tensor>& params,
                 const std::map<std::string, std::vector<double>>& grads, double lr);

/// Registry convenience: applies the update to every trainable parameter
/// using the gradients accumulated by the last backward pass.
void adamax_step(AdamaxState& state, ParamRegistry& params, double lr);

struct TrainingConfig {
  std::int64_t batch = 16;
  double lr = 1e-3;
  std::int64_t lr_decay_interval = 15;  // epochs per division by ten
  std::int64_t epochs = 300;
  double lambda_reg = 1e-4;
  std::uint64_t seed = 0;
  bool augment = true;
  std::int64_t checkpoint_every = 0;  // epochs; 0 = final checkpoint only
  std::int64_t max_steps = 0;         // 0 = no step cap
};

struct TrainLogRow {
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;  // pixel accuracy of the step's batch
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  bool aborted = false;       // non-finite loss encountered
  std::int64_t bad_step = -1; // the offending step when aborted
};

/// Seeded epoch loop: shuffle, batch, optionally augment, forward, loss,
/// backward, Adamax. `on_step` may stop training early by returning false;
/// `checkpoint_fn` is called at the configured cadence and once at the end.
TrainResult train(Model& model, const std::vector<Sample>& dataset, const TrainingConfig& cfg,
                  const std::function<bool(const TrainLogRow&)>& on_step = {},
                  const std::function<void(std::int64_t epoch)>& checkpoint_fn = {});

std::string train_log_csv(const std::vector<TrainLogRow>& rows);

/// Arranges samples into an (n, 1, h, w) batch and a flat label vector.
void make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> indices,
                Tensor* batch, std::vector<std::uint8_t>* labels);

/// Argmax over the class channel -> per-pixel class ids.
std::vector<std::uint8_t> argmax_classes(const Tensor& logits);

/// Fraction of pixels whose argmax matches the label.
double pixel_accuracy(const Tensor& logits, const std::vector<std::uint8_t>& labels);

}  // namespace rdunet
