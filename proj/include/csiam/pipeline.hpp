// csiam/pipeline.hpp
//
// Wires the model pieces into the c-siam topology: the supervised RNN-T
// path, the augmented/target siamese pair with the time-aligned contrastive
// loss, greedy transducer decoding, and the masked-retrieval diagnostic.
// Everything is templated on the scalar so the f64 gradient suite drives the
// exact training wiring.

#pragma once

#include <optional>
#include <random>
#include <vector>

#include "csiam/config.hpp"
#include "csiam/losses.hpp"
#include "csiam/model.hpp"
#include "csiam/params.hpp"
#include "csiam/rng.hpp"
#include "csiam/synthetic.hpp"
#include "csiam/warp.hpp"

namespace csiam {

template <typename Real>
struct CsiamModel {
  AudioEncoder<Real> encoder;
  LabelEncoder<Real> label_encoder;
  PredictionNetwork<Real> predictor;
  JointNetwork<Real> joint;
  ParameterStore<Real> params;

  CsiamModel(const RunConfig& cfg, uint64_t init_seed)
      : encoder("enc", cfg.encoder),
        label_encoder("lab", cfg.label_encoder, cfg.encoder),
        predictor("pred", cfg.predictor, cfg.encoder),
        joint("joint", cfg.joint, cfg.encoder.d_model, cfg.label_encoder.vocab_size) {
    auto rng = make_engine(init_seed, Stream::kInit);
    encoder.create_params(params, rng);
    label_encoder.create_params(params, rng);
    predictor.create_params(params, rng);
    joint.create_params(params, rng);
  }

  int blank_id() const { return label_encoder.config().blank_id; }
  int vocab_size() const { return label_encoder.config().vocab_size; }
};

// ------------------------------------------------------- supervised branch
template <typename Real>
Var build_rnnt_loss(const CsiamModel<Real>& m, GraphBinding<Real>& bind, const Tensor<Real>& features,
                    const std::vector<int>& transcript, RunMode mode, std::mt19937_64* dropout_rng) {
  Graph<Real>& g = bind.graph();
  const auto acts = m.encoder.forward(bind, features, mode, dropout_rng);
  const Var labels_out = m.label_encoder.forward(bind, transcript, mode, dropout_rng);
  RnntLattice lat;
  lat.logits = m.joint.forward_grid(bind, acts.top(), labels_out);
  lat.t_len = acts.t_ds;
  lat.u_len = static_cast<int>(transcript.size());
  lat.vocab = m.vocab_size();
  lat.blank_id = m.blank_id();
  lat.labels = transcript;
  return rnnt_loss(g, lat);
}

// ------------------------------------------------------ unsupervised branch
template <typename Real>
struct UnsupInputs {
  Tensor<Real> clean;       // target-branch input
  Tensor<Real> aug_masked;  // tempo-augmented + masked augmented-branch input
  MaskPlan mask;            // input-resolution mask plan
  AlignmentMap alignment;   // augmented ds index -> target ds index
};

// Applies the tempo augmentation and samples a mask plan that yields at
// least one downsampled anchor (resampling a bounded number of times).
// Returns nothing when no usable plan exists (e.g. mask_prob = 0).
template <typename Real>
std::optional<UnsupInputs<Real>> prepare_unsup_inputs(const BasicFeatureSequence<Real>& features,
                                                      const AugmentRecipe& aug, std::mt19937_64& warp_rng,
                                                      std::mt19937_64& mask_rng, int max_mask_retries = 16) {
  const int T = features.num_frames();
  const int t_ds = downsampled_len(T);

  UnsupInputs<Real> out;
  out.clean = features.frames;
  BasicFeatureSequence<Real> augmented = features;
  switch (aug.tempo_mode) {
    case TempoMode::kNone:
      out.alignment = AlignmentMap::identity(t_ds);
      break;
    case TempoMode::kWarp: {
      const WarpFunction w = sample_warp(warp_rng, T, aug.warp_order, aug.warp_sigma);
      augmented = apply_warp(features, w);
      out.alignment = build_alignment_from_warp(w, t_ds, t_ds);
      break;
    }
    case TempoMode::kUniform:
      throw std::invalid_argument("uniform tempo augmentation needs a waveform corpus");
  }

  for (int attempt = 0; attempt < max_mask_retries; ++attempt) {
    MaskPlan plan = sample_masks(mask_rng, T, aug.mask_prob, aug.mask_span);
    // usable = at least one downsampled anchor and at least one unmasked frame
    if (masked_downsampled_indices(plan, t_ds).empty()) continue;
    if (plan.masked_count() >= T) continue;
    out.mask = std::move(plan);
    out.aug_masked = apply_masks(augmented, out.mask).frames;
    return out;
  }
  return std::nullopt;
}

// Target branch: clean forward, no dropout, gradient-stopped. Augmented
// branch: masked input through the shared encoder, then the prediction
// network. `bypass_stop_gradient` is the test-only toggle that proves the
// stop-gradient path is live.
template <typename Real>
Var build_contrastive_loss(const CsiamModel<Real>& m, GraphBinding<Real>& bind, const UnsupInputs<Real>& in,
                           const ContrastiveConfig& ccfg, std::mt19937_64& neg_rng, RunMode mode,
                           std::mt19937_64* dropout_rng, bool bypass_stop_gradient = false) {
  Graph<Real>& g = bind.graph();
  const auto target_acts = m.encoder.forward(bind, in.clean, RunMode::kEval, nullptr);
  if (bypass_stop_gradient) g.set_stop_gradient_bypass(true);
  const Var target = g.stop_gradient(target_acts.top());
  if (bypass_stop_gradient) g.set_stop_gradient_bypass(false);

  const auto aug_acts = m.encoder.forward(bind, in.aug_masked, mode, dropout_rng);
  const Var predicted = m.predictor.forward(bind, aug_acts.top(), mode, dropout_rng);

  const auto plan = build_contrastive_plan(in.mask, aug_acts.t_ds, in.alignment, ccfg, neg_rng);
  return contrastive_loss(g, predicted, target, plan, static_cast<Real>(ccfg.tau));
}

// --------------------------------------------------------- greedy decoding
// Standard transducer greedy search: emit while the joint argmax is a
// non-blank symbol, otherwise advance time. Emissions are capped.
template <typename Real>
std::vector<int> greedy_decode(const CsiamModel<Real>& m, const Tensor<Real>& features, int max_emissions = -1) {
  Graph<Real> g;
  GraphBinding<Real> bind(g, m.params);
  const auto acts = m.encoder.forward(bind, features, RunMode::kEval, nullptr);
  if (max_emissions < 0) max_emissions = 3 * acts.t_ds + 10;

  std::vector<int> emitted;
  Var label_out = m.label_encoder.forward(bind, emitted, RunMode::kEval, nullptr);
  for (int t = 0; t < acts.t_ds; ++t) {
    const Var a_row = g.row(acts.top(), t);
    for (;;) {
      const Var l_row = g.row(label_out, static_cast<int>(emitted.size()));
      const Var logits = m.joint.forward_single(bind, a_row, l_row);
      const auto& v = g.value(logits);
      int best = 0;
      for (int k = 1; k < v.cols(); ++k) {
        if (v.at(0, k) > v.at(0, best)) best = k;
      }
      if (best == m.blank_id() || static_cast<int>(emitted.size()) >= max_emissions) break;
      emitted.push_back(best);
      label_out = m.label_encoder.forward(bind, emitted, RunMode::kEval, nullptr);
    }
    if (static_cast<int>(emitted.size()) >= max_emissions) break;
  }
  return emitted;
}

// -------------------------------------------------- retrieval diagnostic
// Top-1 retrieval over the masked target pool: an anchor scores a hit when
// its positive index wins the cosine similarity ranking. Runs the eval-time
// unsupervised pipeline with derived seeds.
struct RetrievalStats {
  int correct = 0;
  int total = 0;
  double accuracy() const { return total > 0 ? static_cast<double>(correct) / total : 0.0; }
};

template <typename Real>
void accumulate_retrieval(const CsiamModel<Real>& m, const BasicFeatureSequence<Real>& features,
                          const AugmentRecipe& aug, uint64_t seed, uint64_t utt_id, RetrievalStats& stats) {
  auto warp_rng = make_engine(seed, Stream::kWarp, utt_id);
  auto mask_rng = make_engine(seed, Stream::kMask, utt_id);
  const auto inputs = prepare_unsup_inputs(features, aug, warp_rng, mask_rng);
  if (!inputs) return;

  Graph<Real> g;
  GraphBinding<Real> bind(g, m.params);
  const auto target_acts = m.encoder.forward(bind, inputs->clean, RunMode::kEval, nullptr);
  const auto aug_acts = m.encoder.forward(bind, inputs->aug_masked, RunMode::kEval, nullptr);
  const Var predicted = m.predictor.forward(bind, aug_acts.top(), RunMode::kEval, nullptr);

  ContrastiveConfig pool_cfg;
  pool_cfg.negatives = 0;  // candidates are the whole masked target pool
  auto unused_rng = make_engine(seed, Stream::kNegatives, utt_id);
  const auto plan = build_contrastive_plan(inputs->mask, aug_acts.t_ds, inputs->alignment, pool_cfg, unused_rng);
  if (plan.masked_target_set.size() < 2) return;

  const auto& pred_val = g.value(predicted);
  const auto& tgt_val = g.value(target_acts.top());
  auto cosine = [&](int a_row, int t_row) {
    double dot = 0, na = 0, nb = 0;
    for (int d = 0; d < pred_val.cols(); ++d) {
      const double x = pred_val.at(a_row, d);
      const double y = tgt_val.at(t_row, d);
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    return (na > 0 && nb > 0) ? dot / std::sqrt(na * nb) : -2.0;
  };

  for (size_t i = 0; i < plan.anchors.size(); ++i) {
    int best_idx = -1;
    double best = -3.0;
    for (int cand : plan.masked_target_set) {
      const double s = cosine(plan.anchors[i], cand);
      if (s > best) {
        best = s;
        best_idx = cand;
      }
    }
    stats.total += 1;
    if (best_idx == plan.positives[i]) stats.correct += 1;
  }
}

}  // namespace csiam
