// csiam/params.hpp
//
// Named trainable tensors and their binding into a tape. A parameter binds
// to exactly one leaf per graph, so gradients from repeated use (the audio
// encoder runs three times per training step) accumulate on one node.

#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "csiam/graph.hpp"
#include "csiam/tensor.hpp"

namespace csiam {

template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  bool trainable = true;
};

template <typename Real>
class ParameterStore {
 public:
  Parameter<Real>& create(const std::string& name, Shape shape, bool trainable = true) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_[name] = static_cast<int>(params_.size());
    params_.push_back(Parameter<Real>{name, Tensor<Real>(std::move(shape)), trainable});
    return params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter<Real>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return params_[static_cast<size_t>(it->second)];
  }
  const Parameter<Real>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return params_[static_cast<size_t>(it->second)];
  }

  std::vector<Parameter<Real>>& all() { return params_; }
  const std::vector<Parameter<Real>>& all() const { return params_; }
  size_t size() const { return params_.size(); }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  // Order-sensitive FNV over names and payload bytes; used by tests to prove
  // a routine left the model untouched.
  uint64_t checksum() const {
    uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, size_t len) {
      const auto* p = static_cast<const unsigned char*>(data);
      for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
      }
    };
    for (const auto& p : params_) {
      mix(p.name.data(), p.name.size());
      mix(p.value.data.data(), p.value.data.size() * sizeof(Real));
    }
    return h;
  }

 private:
  std::vector<Parameter<Real>> params_;
  std::unordered_map<std::string, int> index_;
};

// Glorot-uniform for weight matrices; zeros for biases/gains handled by the
// callers that want them.
template <typename Real>
void init_glorot(Tensor<Real>& t, std::mt19937_64& rng, int fan_in, int fan_out) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : t.data) v = static_cast<Real>(dist(rng));
}

// Per-graph binding of parameters to leaves. `overrides` substitutes a
// perturbed tensor (variational noise) while gradients still flow to the
// underlying parameter name.
template <typename Real>
class GraphBinding {
 public:
  GraphBinding(Graph<Real>& g, const ParameterStore<Real>& store,
               const std::unordered_map<std::string, Tensor<Real>>* overrides = nullptr)
      : g_(g), store_(store), overrides_(overrides) {}

  Var operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const Parameter<Real>& p = store_.get(name);
    const Tensor<Real>* value = &p.value;
    if (overrides_) {
      auto ov = overrides_->find(name);
      if (ov != overrides_->end()) value = &ov->second;
    }
    const Var v = g_.leaf(*value, p.trainable);
    bound_.emplace(name, v);
    return v;
  }

  // Gradients keyed by parameter name, accumulated into `out`.
  void accumulate_grads(std::unordered_map<std::string, Tensor<Real>>& out, Real weight = Real(1)) const {
    for (const auto& [name, var] : bound_) {
      if (!g_.requires_grad(var)) continue;
      Tensor<Real> grad = g_.grad(var);
      auto it = out.find(name);
      if (it == out.end()) {
        if (weight != Real(1)) {
          for (auto& v : grad.data) v *= weight;
        }
        out.emplace(name, std::move(grad));
      } else {
        for (int64_t i = 0; i < grad.numel(); ++i) it->second[i] += weight * grad[i];
      }
    }
  }

  Graph<Real>& graph() { return g_; }

 private:
  Graph<Real>& g_;
  const ParameterStore<Real>& store_;
  const std::unordered_map<std::string, Tensor<Real>>* overrides_;
  std::unordered_map<std::string, Var> bound_;
};

}  // namespace csiam
