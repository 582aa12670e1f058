#include "rdunet/params.hpp"

namespace rdunet {

Tensor ParamRegistry::add(const std::string& name, Tensor tensor, ParamKind kind, bool trainable) {
  if (index_.count(name)) throw ValueError("duplicate parameter name: " + name);
  tensor.set_requires_grad(trainable);
  index_[name] = entries_.size();
  entries_.push_back(Entry{name, tensor, kind, trainable});
  return tensor;
}

const ParamRegistry::Entry& ParamRegistry::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("unknown parameter: " + name);
  return entries_[it->second];
}

bool ParamRegistry::contains(const std::string& name) const { return index_.count(name) > 0; }

std::int64_t ParamRegistry::count_trainable() const {
  std::int64_t total = 0;
  for (const Entry& e : entries_)
    if (e.trainable) total += e.tensor.numel();
  return total;
}

std::int64_t ParamRegistry::count_all() const {
  std::int64_t total = 0;
  for (const Entry& e : entries_) total += e.tensor.numel();
  return total;
}

void ParamRegistry::zero_grads() {
  for (Entry& e : entries_) e.tensor.zero_grad();
}

std::map<std::string, std::vector<double>> collect_gradients(const ParamRegistry& params) {
  std::map<std::string, std::vector<double>> grads;
  for (const auto& e : params.entries()) {
    if (!e.trainable) continue;
    if (e.tensor.has_grad()) {
      auto g = e.tensor.grad();
      grads.emplace(e.name, std::vector<double>(g.begin(), g.end()));
    } else {
      grads.emplace(e.name, std::vector<double>(static_cast<std::size_t>(e.tensor.numel()), 0.0));
    }
  }
  return grads;
}

}  // namespace rdunet
