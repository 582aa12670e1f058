#pragma once

#include <map>
#include <string>
#include <vector>

#include "rdunet/tensor.hpp"

namespace rdunet {

enum class ParamKind {
  conv_weight,
  conv_bias,
  bn_gamma,
  bn_delta,
  bn_running_mean,  // state, not trained
  bn_running_var,   // state, not trained
  prelu_slope,
};

/// Ordered name -> tensor registry. Insertion order is the construction
/// order of the model and fixes the checkpoint manifest order.
class ParamRegistry {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    ParamKind kind;
    bool trainable;
  };

  Tensor add(const std::string& name, Tensor tensor, ParamKind kind, bool trainable = true);
  const Entry& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Total element counts.
  std::int64_t count_trainable() const;
  std::int64_t count_all() const;

  void zero_grads();

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Snapshot of the gradients currently held by the trainable parameters,
/// keyed like the registry.
std::map<std::string, std::vector<double>> collect_gradients(const ParamRegistry& params);

}  // namespace rdunet
