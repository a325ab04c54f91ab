// csiam/alignment.hpp
//
// Maps downsampled augmented-branch time indices to downsampled target-branch
// indices. Under a warp, augmented frame t carries the content of original
// time w(t); under a uniform tempo change by alpha, output time t carries
// original time alpha*t. Rounding is half-up and results are clamped, which
// keeps the map total and monotone non-decreasing.

#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "csiam/warp.hpp"

namespace csiam {

inline constexpr int kEncoderStride = 4;  // two stride-2 convolutions

inline int downsampled_len(int num_frames) {
  // ceil division per stride-2 layer, matching the conv length convention
  const int half = (num_frames + 1) / 2;
  return (half + 1) / 2;
}

struct AlignmentMap {
  std::vector<int> target_index;  // one entry per downsampled augmented index
  int target_len = 0;

  int operator()(int t_ds) const {
    if (t_ds < 0 || t_ds >= static_cast<int>(target_index.size())) {
      throw std::out_of_range("alignment index " + std::to_string(t_ds) + " out of range");
    }
    return target_index[static_cast<size_t>(t_ds)];
  }
  int size() const { return static_cast<int>(target_index.size()); }

  static AlignmentMap identity(int len) {
    AlignmentMap m;
    m.target_len = len;
    m.target_index.resize(static_cast<size_t>(len));
    for (int i = 0; i < len; ++i) m.target_index[static_cast<size_t>(i)] = i;
    return m;
  }
};

inline int clamp_round_half_up(double x, int hi) {
  const int r = static_cast<int>(std::floor(x + 0.5));
  return std::max(0, std::min(r, hi));
}

inline int align_index_warp(const WarpFunction& w, int t_ds, int target_len_ds, int stride = kEncoderStride) {
  const int t = stride * t_ds;
  return clamp_round_half_up(w.evaluate(t) / stride, target_len_ds - 1);
}

inline int align_index_alpha(double alpha, int t_ds, int target_len_ds, int stride = kEncoderStride) {
  return clamp_round_half_up(alpha * stride * t_ds / stride, target_len_ds - 1);
}

inline AlignmentMap build_alignment_from_warp(const WarpFunction& w, int aug_len_ds, int target_len_ds,
                                              int stride = kEncoderStride) {
  AlignmentMap m;
  m.target_len = target_len_ds;
  m.target_index.resize(static_cast<size_t>(aug_len_ds));
  for (int t = 0; t < aug_len_ds; ++t) {
    m.target_index[static_cast<size_t>(t)] = align_index_warp(w, t, target_len_ds, stride);
  }
  return m;
}

inline AlignmentMap build_alignment_from_alpha(double alpha, int aug_len_ds, int target_len_ds,
                                               int stride = kEncoderStride) {
  if (!(alpha > 0.0)) throw std::invalid_argument("alignment alpha must be positive");
  AlignmentMap m;
  m.target_len = target_len_ds;
  m.target_index.resize(static_cast<size_t>(aug_len_ds));
  for (int t = 0; t < aug_len_ds; ++t) {
    m.target_index[static_cast<size_t>(t)] = align_index_alpha(alpha, t, target_len_ds, stride);
  }
  return m;
}

}  // namespace csiam
