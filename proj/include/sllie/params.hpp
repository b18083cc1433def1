#pragma once

#include <string>
#include <unordered_map>

#include "sllie/autograd.hpp"

namespace sllie {

// Named collection of parameter leaves. Insertion order is preserved so that
// checkpoints, EMA sweeps and optimizer state all walk the same sequence.
template <typename T>
class ParamStore {
 public:
  Var<T> add(const std::string& name, Tensor<T> init, bool trainable = true) {
    if (map_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
    Var<T> v = ag::leaf(std::move(init), trainable);
    map_.emplace(name, v);
    order_.push_back(name);
    return v;
  }

  const Var<T>& get(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw std::invalid_argument("ParamStore: unknown name " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return map_.count(name) != 0; }
  const std::vector<std::string>& names() const { return order_; }
  size_t size() const { return order_.size(); }

  int64_t trainable_count() const {
    int64_t n = 0;
    for (const auto& name : order_) {
      const Var<T>& v = map_.at(name);
      if (v->requires_grad) n += v->value.numel();
    }
    return n;
  }

  void zero_grad() {
    for (const auto& name : order_) map_.at(name)->zero_grad();
  }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Var<T>> map_;
};

}  // namespace sllie
