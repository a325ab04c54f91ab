// csiam/optimizer.hpp
//
// Training-recipe machinery: linear-warmup / exponential-decay learning
// rate, global gradient-norm limiting, Adam with decoupled weight decay, and
// variational weight noise.

#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "csiam/params.hpp"
#include "csiam/tensor.hpp"

namespace csiam {

struct LrSchedule {
  double peak_lr = 3e-4;    // paper recipe: 2e-3
  double final_lr = 3e-6;   // paper recipe: 2.5e-6
  int64_t warmup_steps = 500;     // paper recipe: 10k
  int64_t decay_end_step = 10000; // paper recipe: 200k

  void validate() const {
    if (!(peak_lr > 0.0) || !(final_lr > 0.0)) throw std::invalid_argument("learning rates must be positive");
    if (warmup_steps < 1 || warmup_steps >= decay_end_step) {
      throw std::invalid_argument("need 1 <= warmup_steps < decay_end_step");
    }
  }
};

inline double lr_at(int64_t step, const LrSchedule& s) {
  if (step < 0) throw std::invalid_argument("lr_at: negative step");
  if (step <= s.warmup_steps) {
    return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  if (step <= s.decay_end_step) {
    const double frac = static_cast<double>(step - s.warmup_steps) /
                        static_cast<double>(s.decay_end_step - s.warmup_steps);
    return s.peak_lr * std::pow(s.final_lr / s.peak_lr, frac);
  }
  return s.final_lr;
}

// Scales all gradients by limit/norm when the global L2 norm exceeds the
// limit. Returns the pre-clip norm. Non-finite gradients are an error; the
// caller records the event and skips the step.
template <typename Real>
double clip_global_norm(std::unordered_map<std::string, Tensor<Real>>& grads, double limit) {
  if (!(limit > 0.0)) throw std::invalid_argument("gradient norm limit must be positive");
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (Real v : g.data) {
      const double d = static_cast<double>(v);
      if (!std::isfinite(d)) throw std::domain_error("non-finite gradient in " + name);
      sq += d * d;
    }
  }
  const double norm = std::sqrt(sq);
  if (norm > limit) {
    const Real s = static_cast<Real>(limit / norm);
    for (auto& [name, g] : grads) {
      for (auto& v : g.data) v *= s;
    }
  }
  return norm;
}

// Gaussian perturbations of the trainable weight matrices (rank >= 2;
// biases and layer-norm parameters excluded), active from start_step on.
// Returned overrides feed GraphBinding; master weights stay untouched.
template <typename Real>
std::unordered_map<std::string, Tensor<Real>> variational_noise_overrides(const ParameterStore<Real>& store,
                                                                          double stddev, int64_t step,
                                                                          int64_t start_step,
                                                                          std::mt19937_64& rng) {
  std::unordered_map<std::string, Tensor<Real>> overrides;
  if (stddev < 0.0) throw std::invalid_argument("variational noise std must be >= 0");
  if (stddev == 0.0 || step < start_step) return overrides;
  std::normal_distribution<double> dist(0.0, stddev);
  for (const auto& p : store.all()) {
    if (!p.trainable || p.value.rank() < 2) continue;
    Tensor<Real> noisy = p.value;
    for (auto& v : noisy.data) v += static_cast<Real>(dist(rng));
    overrides.emplace(p.name, std::move(noisy));
  }
  return overrides;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double weight_decay = 0.0;  // decoupled
};

template <typename Real>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }

  // One update over every trainable parameter that received a gradient.
  // `step_index` is the 1-based update count used for bias correction.
  void step(ParameterStore<Real>& store, const std::unordered_map<std::string, Tensor<Real>>& grads, double lr,
            int64_t step_index) {
    if (step_index < 1) throw std::invalid_argument("Adam step index is 1-based");
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_index));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_index));
    for (auto& p : store.all()) {
      if (!p.trainable) continue;
      auto it = grads.find(p.name);
      if (it == grads.end()) continue;
      const Tensor<Real>& g = it->second;
      Tensor<Real>& m = moment(moments_m_, p.name, p.value.shape);
      Tensor<Real>& v = moment(moments_v_, p.name, p.value.shape);
      for (int64_t i = 0; i < p.value.numel(); ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mi = cfg_.beta1 * static_cast<double>(m[i]) + (1.0 - cfg_.beta1) * gi;
        const double vi = cfg_.beta2 * static_cast<double>(v[i]) + (1.0 - cfg_.beta2) * gi * gi;
        m[i] = static_cast<Real>(mi);
        v[i] = static_cast<Real>(vi);
        const double update = (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps) +
                              cfg_.weight_decay * static_cast<double>(p.value[i]);
        p.value[i] = static_cast<Real>(static_cast<double>(p.value[i]) - lr * update);
      }
    }
  }

  std::unordered_map<std::string, Tensor<Real>>& first_moments() { return moments_m_; }
  std::unordered_map<std::string, Tensor<Real>>& second_moments() { return moments_v_; }
  const std::unordered_map<std::string, Tensor<Real>>& first_moments() const { return moments_m_; }
  const std::unordered_map<std::string, Tensor<Real>>& second_moments() const { return moments_v_; }

 private:
  Tensor<Real>& moment(std::unordered_map<std::string, Tensor<Real>>& map, const std::string& name,
                       const Shape& shape) {
    auto it = map.find(name);
    if (it == map.end()) it = map.emplace(name, Tensor<Real>::zeros(shape)).first;
    return it->second;
  }

  AdamConfig cfg_;
  std::unordered_map<std::string, Tensor<Real>> moments_m_;
  std::unordered_map<std::string, Tensor<Real>> moments_v_;
};

}  // namespace csiam
