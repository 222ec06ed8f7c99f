#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tcsf/tensor.hpp"

namespace tcsf {

// Named trainable parameters in fixed registration order. The order defines
// both optimizer slot assignment and checkpoint layout.
class ParamStore {
 public:
  Tensor add(const std::string& name, Shape shape, std::vector<double> init) {
    for (const auto& it : items_) {
      if (it.first == name) throw std::logic_error("duplicate parameter name: " + name);
    }
    Tensor t = Tensor::param(std::move(shape), std::move(init));
    items_.emplace_back(name, t);
    return t;
  }

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    out.reserve(items_.size());
    for (const auto& it : items_) out.push_back(it.second);
    return out;
  }

  Tensor find(const std::string& name) const {
    for (const auto& it : items_) {
      if (it.first == name) return it.second;
    }
    throw std::logic_error("unknown parameter: " + name);
  }

  int64_t count_with_prefix(const std::string& prefix) const {
    int64_t n = 0;
    for (const auto& it : items_) {
      if (it.first.rfind(prefix, 0) == 0) n += it.second.numel();
    }
    return n;
  }

  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& it : items_) n += it.second.numel();
    return n;
  }

  void zero_grads() {
    for (auto& it : items_) it.second.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

}  // namespace tcsf
