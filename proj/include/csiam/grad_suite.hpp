// csiam/grad_suite.hpp
//
// The f64 verification suite: central-difference checks of the logit join,
// the time-aligned contrastive loss, the transducer loss and the full joint
// objective, each through the real model wiring at miniature size.

#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "csiam/grad_check.hpp"
#include "csiam/pipeline.hpp"

namespace csiam {

struct GradSuiteComponent {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error < tolerance; }
};

namespace grad_suite_detail {

inline RunConfig miniature_config() {
  return RunConfig::from_string(R"(
[data]
num_classes = 4
feature_dim = 4
min_symbols = 3
max_symbols = 4
min_frames_per_symbol = 3
max_frames_per_symbol = 4
noise_std = 0.1
seed = 2
[encoder]
n_blocks = 1
n_heads = 1
d_model = 8
d_ff = 16
d_qk = 4
d_value = 4
dropout_p = 0
rel_clip = 8
[label_encoder]
n_blocks = 1
[predictor]
n_blocks = 1
[loss]
joint_dim = 6
tau = 0.2
negatives = 3
[augment]
tempo_mode = warp
warp_sigma = 1.5
mask_prob = 0.10
mask_span = 6
)");
}

struct ParamRefs {
  std::vector<Tensor<double>*> tensors;
  std::vector<std::string> names;
};

// Moves every parameter to a generic point. The fresh init has exact zeros
// (biases, relative-bias tables) that, combined with exactly-zero masked
// frames, park conv pre-activations on the relu kink where central
// differences and subgradients legitimately disagree.
inline void jitter_params(ParameterStore<double>& store, uint64_t seed, double scale = 0.05) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (auto& p : store.all()) {
    for (auto& v : p.value.data) v += dist(rng);
  }
}

inline ParamRefs collect(ParameterStore<double>& store, const std::string& prefix = "") {
  ParamRefs refs;
  for (auto& p : store.all()) {
    if (!prefix.empty() && p.name.rfind(prefix, 0) != 0) continue;
    refs.tensors.push_back(&p.value);
    refs.names.push_back(p.name);
  }
  return refs;
}

inline std::vector<Tensor<double>> ordered_grads(const std::unordered_map<std::string, Tensor<double>>& grads,
                                                 ParameterStore<double>& store, const ParamRefs& refs) {
  std::vector<Tensor<double>> out;
  out.reserve(refs.names.size());
  for (const auto& name : refs.names) {
    auto it = grads.find(name);
    if (it != grads.end()) {
      out.push_back(it->second);
    } else {
      out.push_back(Tensor<double>::zeros(store.get(name).value.shape));
    }
  }
  return out;
}

}  // namespace grad_suite_detail

// Eq-style logit join: gradients of a weighted sum of grid logits wrt all
// six join tensors.
inline GradSuiteComponent check_joint_gradients(double eps = 1e-5) {
  using namespace grad_suite_detail;
  const RunConfig cfg = miniature_config();
  CsiamModel<double> model(cfg, 91);
  grad_suite_detail::jitter_params(model.params, 191);
  auto refs = collect(model.params, "joint.");

  std::mt19937_64 rng(17);
  const Tensor<double> a = Tensor<double>::randn({3, cfg.encoder.d_model}, rng);
  const Tensor<double> l = Tensor<double>::randn({2, cfg.encoder.d_model}, rng);
  const Tensor<double> c = Tensor<double>::randn({6, model.vocab_size()}, rng);

  auto loss_value = [&]() {
    Graph<double> g;
    GraphBinding<double> bind(g, model.params);
    const Var out = model.joint.forward_grid(bind, g.constant(a), g.constant(l));
    return g.value(g.sum(g.mul(out, g.constant(c))))[0];
  };
  auto grads = [&]() {
    Graph<double> g;
    GraphBinding<double> bind(g, model.params);
    const Var out = model.joint.forward_grid(bind, g.constant(a), g.constant(l));
    g.backward(g.sum(g.mul(out, g.constant(c))));
    std::unordered_map<std::string, Tensor<double>> gm;
    bind.accumulate_grads(gm);
    return ordered_grads(gm, model.params, refs);
  };
  const auto res = grad_check(refs.tensors, loss_value, grads, eps, refs.names);
  return {"eq1_joint", res.max_rel_error, 1e-5};
}

// Contrastive loss through target/augmented branches, stop gradient and the
// prediction network; checks every trainable parameter. Finite differences
// are taken with the stop branch frozen: the target outputs are fixed at
// their unperturbed values, which is exactly what the stop gradient asserts
// the loss surface looks like.
inline GradSuiteComponent check_contrastive_gradients(double eps = 1e-5) {
  using namespace grad_suite_detail;
  const RunConfig cfg = miniature_config();
  CsiamModel<double> model(cfg, 92);
  grad_suite_detail::jitter_params(model.params, 192);
  auto refs = collect(model.params);

  const auto corpus = gen_corpus(cfg.data, 1);
  BasicFeatureSequence<double> feats(corpus[0].features.frames.cast<double>());
  auto warp_rng = make_engine(5, Stream::kWarp, 0);
  auto mask_rng = make_engine(5, Stream::kMask, 0);
  const auto inputs = prepare_unsup_inputs(feats, cfg.augment, warp_rng, mask_rng);
  if (!inputs) throw std::logic_error("grad suite: no usable mask plan");

  // frozen targets + the (deterministic) contrastive plan
  Tensor<double> frozen_target;
  ContrastivePlan plan;
  {
    Graph<double> g;
    GraphBinding<double> bind(g, model.params);
    const auto tacts = model.encoder.forward(bind, inputs->clean, RunMode::kEval, nullptr);
    frozen_target = g.value(tacts.top());
    auto neg_rng = make_engine(5, Stream::kNegatives, 0);
    plan = build_contrastive_plan(inputs->mask, tacts.t_ds, inputs->alignment, cfg.contrastive, neg_rng);
  }

  auto loss_value = [&]() {
    Graph<double> g;
    GraphBinding<double> bind(g, model.params);
    const auto aug_acts = model.encoder.forward(bind, inputs->aug_masked, RunMode::kTrain, nullptr);
    const Var predicted = model.predictor.forward(bind, aug_acts.top(), RunMode::kTrain, nullptr);
    return g.value(contrastive_loss(g, predicted, g.constant(frozen_target), plan, cfg.contrastive.tau))[0];
  };
  auto grads = [&]() {
    Graph<double> g;
    GraphBinding<double> bind(g, model.params);
    auto neg_rng = make_engine(5, Stream::kNegatives, 0);
    const Var loss =
        build_contrastive_loss(model, bind, *inputs, cfg.contrastive, neg_rng, RunMode::kTrain, nullptr);
    g.backward(loss);
    std::unordered_map<std::string, Tensor<double>> gm;
    bind.accumulate_grads(gm);
    return ordered_grads(gm, model.params, refs);
  };
  const auto res = grad_check(refs.tensors, loss_value, grads, eps, refs.names);
  return {"eq2_contrastive", res.max_rel_error, 1e-5};
}

// Transducer loss through encoder, label encoder and join.
inline GradSuiteComponent check_rnnt_gradients(double eps = 1e-5) {
  using namespace grad_suite_detail;
  const RunConfig cfg = miniature_config();
  CsiamModel<double> model(cfg, 93);
  grad_suite_detail::jitter_params(model.params, 193);
  auto refs = collect(model.params);

  const auto corpus = gen_corpus(cfg.data, 1);
  const Tensor<double> feats = corpus[0].features.frames.cast<double>();
  const std::vector<int> transcript = corpus[0].transcript;

  auto loss_value = [&]() {
    Graph<double> g;
    GraphBinding<double> bind(g, model.params);
    return g.value(build_rnnt_loss(model, bind, feats, transcript, RunMode::kTrain, nullptr))[0];
  };
  auto grads = [&]() {
    Graph<double> g;
    GraphBinding<double> bind(g, model.params);
    const Var loss = build_rnnt_loss(model, bind, feats, transcript, RunMode::kTrain, nullptr);
    g.backward(loss);
    std::unordered_map<std::string, Tensor<double>> gm;
    bind.accumulate_grads(gm);
    return ordered_grads(gm, model.params, refs);
  };
  const auto res = grad_check(refs.tensors, loss_value, grads, eps, refs.names);
  return {"rnnt", res.max_rel_error, 1e-4};
}

// Full composite objective: supervised RNN-T plus weighted contrastive.
inline GradSuiteComponent check_composite_gradients(double eps = 1e-5) {
  using namespace grad_suite_detail;
  const RunConfig cfg = miniature_config();
  CsiamModel<double> model(cfg, 94);
  grad_suite_detail::jitter_params(model.params, 194);
  auto refs = collect(model.params);

  const auto corpus = gen_corpus(cfg.data, 2);
  const Tensor<double> sup_feats = corpus[0].features.frames.cast<double>();
  const std::vector<int> transcript = corpus[0].transcript;
  BasicFeatureSequence<double> unsup_feats(corpus[1].features.frames.cast<double>());
  auto warp_rng = make_engine(6, Stream::kWarp, 0);
  auto mask_rng = make_engine(6, Stream::kMask, 0);
  const auto inputs = prepare_unsup_inputs(unsup_feats, cfg.augment, warp_rng, mask_rng);
  if (!inputs) throw std::logic_error("grad suite: no usable mask plan");
  const LossWeights weights{0.7};

  // frozen targets for the finite-difference side (stop branch frozen)
  Tensor<double> frozen_target;
  ContrastivePlan plan;
  {
    Graph<double> g;
    GraphBinding<double> bind(g, model.params);
    const auto tacts = model.encoder.forward(bind, inputs->clean, RunMode::kEval, nullptr);
    frozen_target = g.value(tacts.top());
    auto neg_rng = make_engine(6, Stream::kNegatives, 0);
    plan = build_contrastive_plan(inputs->mask, tacts.t_ds, inputs->alignment, cfg.contrastive, neg_rng);
  }

  auto loss_value = [&]() {
    Graph<double> g;
    GraphBinding<double> bind(g, model.params);
    const Var sup = build_rnnt_loss(model, bind, sup_feats, transcript, RunMode::kTrain, nullptr);
    const auto aug_acts = model.encoder.forward(bind, inputs->aug_masked, RunMode::kTrain, nullptr);
    const Var predicted = model.predictor.forward(bind, aug_acts.top(), RunMode::kTrain, nullptr);
    const Var unsup = contrastive_loss(g, predicted, g.constant(frozen_target), plan, cfg.contrastive.tau);
    return g.value(total_loss(g, sup, unsup, weights))[0];
  };
  auto grads = [&]() {
    Graph<double> g;
    GraphBinding<double> bind(g, model.params);
    const Var sup = build_rnnt_loss(model, bind, sup_feats, transcript, RunMode::kTrain, nullptr);
    auto neg_rng = make_engine(6, Stream::kNegatives, 0);
    const Var unsup =
        build_contrastive_loss(model, bind, *inputs, cfg.contrastive, neg_rng, RunMode::kTrain, nullptr);
    g.backward(total_loss(g, sup, unsup, weights));
    std::unordered_map<std::string, Tensor<double>> gm;
    bind.accumulate_grads(gm);
    return ordered_grads(gm, model.params, refs);
  };
  const auto res = grad_check(refs.tensors, loss_value, grads, eps, refs.names);
  return {"composite", res.max_rel_error, 1e-4};
}

inline std::vector<GradSuiteComponent> run_grad_suite(const std::string& only = "") {
  std::vector<GradSuiteComponent> out;
  auto want = [&](const std::string& name) { return only.empty() || only == name || only == "all"; };
  if (want("eq1")) out.push_back(check_joint_gradients());
  if (want("eq2")) out.push_back(check_contrastive_gradients());
  if (want("rnnt")) out.push_back(check_rnnt_gradients());
  if (want("composite")) out.push_back(check_composite_gradients());
  if (out.empty()) throw std::invalid_argument("unknown grad-check component: " + only);
  return out;
}

}  // namespace csiam
