// csiam/masking.hpp
//
// Contrastive span masking (zeroed contiguous regions) and SpecAugment for
// the supervised branch.

#pragma once

#include <algorithm>
#include <random>
#include <stdexcept>
#include <vector>

#include "csiam/features.hpp"

namespace csiam {

struct MaskPlan {
  std::vector<std::pair<int, int>> spans;  // (start, length), clipped to [0, T)
  int num_frames = 0;

  std::vector<bool> masked_frames() const {
    std::vector<bool> m(static_cast<size_t>(num_frames), false);
    for (auto [start, len] : spans) {
      for (int t = start; t < std::min(start + len, num_frames); ++t) m[static_cast<size_t>(t)] = true;
    }
    return m;
  }

  int masked_count() const {
    const auto m = masked_frames();
    return static_cast<int>(std::count(m.begin(), m.end(), true));
  }

  bool empty() const { return spans.empty(); }
};

// Each frame independently starts a span with probability p; the span covers
// the next `span` frames (clipped at T). Overlaps merge in the masked set.
inline MaskPlan sample_masks(std::mt19937_64& rng, int num_frames, double p = 0.016, int span = 28) {
  if (num_frames < 1) throw std::invalid_argument("sample_masks needs at least one frame");
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("mask probability must be in [0,1]");
  if (span < 0) throw std::invalid_argument("mask span must be >= 0");
  MaskPlan plan;
  plan.num_frames = num_frames;
  if (p == 0.0 || span == 0) return plan;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < num_frames; ++t) {
    if (u(rng) < p) plan.spans.emplace_back(t, std::min(span, num_frames - t));
  }
  return plan;
}

template <typename Real>
BasicFeatureSequence<Real> apply_masks(const BasicFeatureSequence<Real>& x, const MaskPlan& plan) {
  if (plan.num_frames != x.num_frames()) throw std::invalid_argument("mask plan built for a different length");
  BasicFeatureSequence<Real> out = x;
  const auto masked = plan.masked_frames();
  for (int t = 0; t < x.num_frames(); ++t) {
    if (!masked[static_cast<size_t>(t)]) continue;
    for (int d = 0; d < x.dim(); ++d) out.frames.at(t, d) = Real(0);
  }
  return out;
}

// ------------------------------------------------------------ SpecAugment
struct SpecAugmentConfig {
  int n_freq_masks = 2;
  int freq_mask_size = 27;
  int n_time_masks = 10;
  double time_mask_max_ratio = 0.05;

  void validate() const {
    if (n_freq_masks < 0 || freq_mask_size < 0 || n_time_masks < 0) {
      throw std::invalid_argument("specaugment sizes must be >= 0");
    }
    if (time_mask_max_ratio < 0.0 || time_mask_max_ratio > 1.0) {
      throw std::invalid_argument("specaugment time ratio must be in [0,1]");
    }
  }
};

template <typename Real>
BasicFeatureSequence<Real> spec_augment(const BasicFeatureSequence<Real>& x, const SpecAugmentConfig& cfg,
                                        std::mt19937_64& rng) {
  cfg.validate();
  BasicFeatureSequence<Real> out = x;
  const int T = x.num_frames(), D = x.dim();

  for (int m = 0; m < cfg.n_freq_masks; ++m) {
    const int width = std::uniform_int_distribution<int>(0, std::min(cfg.freq_mask_size, D))(rng);
    if (width == 0) continue;
    const int f0 = std::uniform_int_distribution<int>(0, D - width)(rng);
    for (int t = 0; t < T; ++t)
      for (int d = f0; d < f0 + width; ++d) out.frames.at(t, d) = Real(0);
  }

  const int max_t = static_cast<int>(cfg.time_mask_max_ratio * T);
  for (int m = 0; m < cfg.n_time_masks; ++m) {
    if (max_t == 0) break;
    const int width = std::uniform_int_distribution<int>(0, max_t)(rng);
    if (width == 0) continue;
    const int t0 = std::uniform_int_distribution<int>(0, T - width)(rng);
    for (int t = t0; t < t0 + width; ++t)
      for (int d = 0; d < D; ++d) out.frames.at(t, d) = Real(0);
  }
  return out;
}

}  // namespace csiam
