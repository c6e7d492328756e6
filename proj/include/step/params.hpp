#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "step/tensor.hpp"

namespace step {

struct Parameter {
  std::string name;
  Tensor tensor;  // requires_grad = true
};

// Owns every learnable tensor of a model. Creation order is the canonical
// iteration order for optimizers and checkpoints, and initialization is a
// deterministic function of the rng passed in.
class ParameterStore {
 public:
  Tensor create_normal(const std::string& name, Shape shape, Rng& rng, double stddev) {
    Tensor t = Tensor::randn(std::move(shape), rng, stddev, true);
    insert(name, t);
    return t;
  }

  Tensor create_full(const std::string& name, Shape shape, double value) {
    Tensor t = Tensor::full(std::move(shape), value, true);
    insert(name, t);
    return t;
  }

  const std::vector<Parameter>& all() const { return params_; }
  std::vector<Parameter>& all() { return params_; }
  size_t size() const { return params_.size(); }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Tensor find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("parameter not found: " + name);
    return params_[it->second].tensor;
  }

  void zero_grads() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

 private:
  void insert(const std::string& name, const Tensor& t) {
    if (!index_.emplace(name, params_.size()).second)
      throw UsageError("duplicate parameter name: " + name);
    params_.push_back({name, t});
  }

  std::vector<Parameter> params_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace step
