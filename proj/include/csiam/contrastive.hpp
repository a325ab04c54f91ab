// csiam/contrastive.hpp
//
// Time-aligned contrastive loss over masked regions. The anchor set is the
// downsampled image of the input-level mask; the positive for anchor t is
// the target frame at the alignment image of t; negatives are drawn from the
// masked target index set of the same utterance.

#pragma once

#include <algorithm>
#include <random>
#include <stdexcept>
#include <vector>

#include "csiam/alignment.hpp"
#include "csiam/graph.hpp"
#include "csiam/masking.hpp"

namespace csiam {

struct ContrastiveConfig {
  double tau = 0.1;
  int negatives = 32;  // clamped to the available masked target frames - 1

  void validate() const {
    if (!(tau > 0.0)) throw std::invalid_argument("contrastive tau must be positive");
    if (negatives < 0) throw std::invalid_argument("contrastive negatives must be >= 0");
  }
};

// A downsampled frame counts as masked when at least half of its stride-wide
// input window is masked.
inline std::vector<int> masked_downsampled_indices(const MaskPlan& plan, int t_ds, int stride = kEncoderStride) {
  const auto masked = plan.masked_frames();
  std::vector<int> out;
  for (int t = 0; t < t_ds; ++t) {
    const int lo = t * stride;
    const int hi = std::min(lo + stride, plan.num_frames);
    if (hi <= lo) continue;
    int count = 0;
    for (int i = lo; i < hi; ++i) {
      if (masked[static_cast<size_t>(i)]) ++count;
    }
    if (2 * count >= hi - lo) out.push_back(t);
  }
  return out;
}

struct ContrastivePlan {
  std::vector<int> anchors;                  // masked downsampled augmented indices
  std::vector<int> positives;                // target index per anchor (alignment image)
  std::vector<std::vector<int>> negatives;   // per anchor, masked target indices != positive
  std::vector<int> masked_target_set;        // unique aligned masked indices, sorted
};

inline ContrastivePlan build_contrastive_plan(const MaskPlan& input_mask, int aug_t_ds, const AlignmentMap& align,
                                              const ContrastiveConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  if (align.size() != aug_t_ds) throw std::invalid_argument("alignment map length mismatch");
  ContrastivePlan plan;
  plan.anchors = masked_downsampled_indices(input_mask, aug_t_ds);
  plan.positives.reserve(plan.anchors.size());
  for (int a : plan.anchors) plan.positives.push_back(align(a));

  plan.masked_target_set = plan.positives;
  std::sort(plan.masked_target_set.begin(), plan.masked_target_set.end());
  plan.masked_target_set.erase(std::unique(plan.masked_target_set.begin(), plan.masked_target_set.end()),
                               plan.masked_target_set.end());

  plan.negatives.resize(plan.anchors.size());
  for (size_t i = 0; i < plan.anchors.size(); ++i) {
    std::vector<int> pool;
    pool.reserve(plan.masked_target_set.size());
    for (int t : plan.masked_target_set) {
      if (t != plan.positives[i]) pool.push_back(t);
    }
    const int k = std::min<int>(cfg.negatives, static_cast<int>(pool.size()));
    // partial Fisher-Yates: uniform without replacement
    for (int j = 0; j < k; ++j) {
      const int swap_with = j + static_cast<int>(rng() % (pool.size() - static_cast<size_t>(j)));
      std::swap(pool[static_cast<size_t>(j)], pool[static_cast<size_t>(swap_with)]);
    }
    plan.negatives[i].assign(pool.begin(), pool.begin() + k);
  }
  return plan;
}

// Mean over anchors of -log softmax(sim/tau) at the positive. `aug_out` is
// the augmented-branch output [T_ds_aug, d]; `target_out` the target-branch
// output [T_ds_tgt, d], already wrapped in stop_gradient by the caller.
template <typename Real>
Var contrastive_loss(Graph<Real>& g, Var aug_out, Var target_out, const ContrastivePlan& plan, Real tau) {
  if (!(tau > Real(0))) throw std::invalid_argument("contrastive tau must be positive");
  if (plan.anchors.empty()) throw std::invalid_argument("contrastive loss needs a non-empty anchor set");
  std::vector<Var> per_anchor;
  per_anchor.reserve(plan.anchors.size());
  for (size_t i = 0; i < plan.anchors.size(); ++i) {
    Var a = g.row(aug_out, plan.anchors[i]);
    std::vector<Var> sims;
    sims.reserve(plan.negatives[i].size() + 1);
    sims.push_back(g.cosine_similarity(a, g.row(target_out, plan.positives[i])));
    for (int n : plan.negatives[i]) sims.push_back(g.cosine_similarity(a, g.row(target_out, n)));
    Var scaled = g.scale(g.stack_scalars(sims), Real(1) / tau);
    per_anchor.push_back(g.neg(g.index(g.log_softmax_rows(scaled), 0)));
  }
  return g.mean(g.stack_scalars(per_anchor));
}

}  // namespace csiam
