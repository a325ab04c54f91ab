// csiam/trainer.hpp
//
// Joint optimization loop: independent supervised and unsupervised batches
// each step, one Adam update over the combined objective, global norm
// limiting, variational weight noise, JSONL metrics and CSCK checkpoints.
//
// Every random draw is keyed by (config seed, step, utterance slot), never
// by thread arrival order, so runs are bitwise reproducible and checkpoint
// resume replays the uninterrupted trajectory.

#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "csiam/checkpoint.hpp"
#include "csiam/config.hpp"
#include "csiam/optimizer.hpp"
#include "csiam/pipeline.hpp"

namespace csiam {

struct MetricsRecord {
  int64_t step = 0;
  double rnnt_loss = 0.0;
  double contrastive_loss = 0.0;
  double total_loss = 0.0;
  double grad_norm_pre_clip = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;

  nlohmann::json to_json() const {
    return nlohmann::json{{"step", step},
                          {"rnnt_loss", rnnt_loss},
                          {"contrastive_loss", contrastive_loss},
                          {"total_loss", total_loss},
                          {"grad_norm_pre_clip", grad_norm_pre_clip},
                          {"lr", lr},
                          {"wall_ms", wall_ms}};
  }
};

class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path, bool append = false)
      : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot open metrics path: " + path);
  }

  void write(const MetricsRecord& rec) {
    out_ << rec.to_json().dump() << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

inline int worker_thread_cap() {
  if (const char* env = std::getenv("CSIAM_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return std::min(v, 16);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::min(hw == 0 ? 1u : hw, 4u));
}

// Runs tasks[i] for all i, results stored by index; numerics downstream are
// independent of the thread count because consumers merge by index.
template <typename Result>
std::vector<Result> parallel_map(const std::vector<std::function<Result()>>& tasks) {
  std::vector<Result> results(tasks.size());
  const int threads = std::min<int>(worker_thread_cap(), static_cast<int>(tasks.size()));
  if (threads <= 1) {
    for (size_t i = 0; i < tasks.size(); ++i) results[i] = tasks[i]();
    return results;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&]() {
      for (;;) {
        const size_t i = next.fetch_add(1);
        if (i >= tasks.size()) return;
        results[i] = tasks[i]();
      }
    });
  }
  for (auto& th : pool) th.join();
  return results;
}

class Trainer {
 public:
  explicit Trainer(RunConfig cfg)
      : cfg_(std::move(cfg)),
        model_(cfg_, cfg_.train.seed),
        opt_(AdamConfig{0.9, 0.98, 1e-9, cfg_.train.l2_weight}),
        corpus_(gen_corpus(cfg_.data, cfg_.num_utterances)) {
    if (corpus_.empty() && (cfg_.train.batch_size_sup > 0 || cfg_.train.batch_size_unsup > 0)) {
      throw ConfigError("training needs a non-empty corpus");
    }
  }

  const RunConfig& config() const { return cfg_; }
  CsiamModel<float>& model() { return model_; }
  const CsiamModel<float>& model() const { return model_; }
  const std::vector<Utterance>& corpus() const { return corpus_; }
  int64_t current_step() const { return step_; }
  int64_t skipped_steps() const { return skipped_; }

  void set_corpus(std::vector<Utterance> corpus) { corpus_ = std::move(corpus); }

  // Test-only: route gradients through the stop-gradient barrier.
  void set_stop_gradient_bypass(bool on) { bypass_stop_gradient_ = on; }

  std::vector<int> draw_batch(int size, uint64_t salt) const {
    auto rng = make_engine(cfg_.train.seed, Stream::kBatch, static_cast<uint64_t>(step_ + 1), salt);
    std::vector<int> idx(static_cast<size_t>(size));
    for (auto& i : idx) i = static_cast<int>(rng() % corpus_.size());
    return idx;
  }

  // One optimization step over freshly drawn batches. Returns nothing when
  // the step was skipped because the loss or gradients went non-finite.
  std::optional<MetricsRecord> step() {
    return step_with_batches(draw_batch(cfg_.train.batch_size_sup, 0), draw_batch(cfg_.train.batch_size_unsup, 1));
  }

  std::optional<MetricsRecord> step_with_batches(const std::vector<int>& sup_batch,
                                                 const std::vector<int>& unsup_batch) {
    const auto t0 = std::chrono::steady_clock::now();
    const int64_t s = step_ + 1;
    const double lr = lr_at(s, cfg_.train.lr);

    // One noise draw per step, shared by every pass that touches a weight.
    auto noise_rng = make_engine(cfg_.train.seed, Stream::kNoise, static_cast<uint64_t>(s));
    const auto overrides = variational_noise_overrides(model_.params, cfg_.train.variational_noise_std, s,
                                                       cfg_.train.variational_noise_start_step, noise_rng);

    std::vector<std::function<UttResult()>> tasks;
    const bool use_unsup = cfg_.weights.lambda_unsup > 0.0 && !unsup_batch.empty();
    for (size_t slot = 0; slot < sup_batch.size(); ++slot) {
      const int utt_idx = sup_batch[slot];
      tasks.push_back([this, slot, utt_idx, s, &overrides]() { return run_sup(utt_idx, slot, s, overrides); });
    }
    if (use_unsup) {
      for (size_t slot = 0; slot < unsup_batch.size(); ++slot) {
        const int utt_idx = unsup_batch[slot];
        tasks.push_back([this, slot, utt_idx, s, &overrides]() { return run_unsup(utt_idx, slot, s, overrides); });
      }
    }
    const auto results = parallel_map(tasks);

    // Merge in slot order: deterministic regardless of thread count.
    std::unordered_map<std::string, Tensor<float>> grads;
    double sup_sum = 0.0, unsup_sum = 0.0;
    bool all_finite = true;
    const size_t n_sup = sup_batch.size();
    for (size_t i = 0; i < results.size(); ++i) {
      const auto& r = results[i];
      if (!r.finite) all_finite = false;
      if (!r.contributed) continue;
      const bool is_sup = i < n_sup;
      const float weight = is_sup ? (1.0f / static_cast<float>(n_sup))
                                  : static_cast<float>(cfg_.weights.lambda_unsup / unsup_batch.size());
      if (is_sup) {
        sup_sum += r.loss;
      } else {
        unsup_sum += r.loss;
      }
      for (const auto& [name, g] : r.grads) {
        auto it = grads.find(name);
        if (it == grads.end()) {
          Tensor<float> scaled = g;
          for (auto& v : scaled.data) v *= weight;
          grads.emplace(name, std::move(scaled));
        } else {
          for (int64_t k = 0; k < g.numel(); ++k) it->second[k] += weight * g[k];
        }
      }
    }

    MetricsRecord rec;
    rec.step = s;
    rec.rnnt_loss = n_sup > 0 ? sup_sum / static_cast<double>(n_sup) : 0.0;
    rec.contrastive_loss = use_unsup ? unsup_sum / static_cast<double>(unsup_batch.size()) : 0.0;
    rec.total_loss = rec.rnnt_loss + cfg_.weights.lambda_unsup * rec.contrastive_loss;
    rec.lr = lr;

    if (!all_finite || !std::isfinite(rec.total_loss)) {
      ++step_;
      ++skipped_;
      return std::nullopt;
    }
    try {
      rec.grad_norm_pre_clip = clip_global_norm(grads, cfg_.train.grad_norm_limit);
    } catch (const std::domain_error&) {
      ++step_;
      ++skipped_;
      return std::nullopt;
    }

    opt_.step(model_.params, grads, lr, s);
    ++step_;
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rec;
  }

  // Runs `steps` additional steps, streaming metrics and checkpoints.
  void run(int64_t steps, MetricsWriter* metrics, int64_t ckpt_every = 0, const std::string& ckpt_dir = "") {
    for (int64_t i = 0; i < steps; ++i) {
      const auto rec = step();
      if (rec && metrics) metrics->write(*rec);
      if (ckpt_every > 0 && !ckpt_dir.empty() && step_ % ckpt_every == 0) {
        save(ckpt_dir + "/ckpt_" + std::to_string(step_) + ".csck");
      }
    }
  }

  void save(const std::string& path) const { save_checkpoint(path, model_.params, opt_, step_); }

  void load(const std::string& path) { step_ = load_checkpoint(path, model_.params, opt_); }

 private:
  struct UttResult {
    double loss = 0.0;
    bool contributed = false;
    bool finite = true;
    std::unordered_map<std::string, Tensor<float>> grads;
  };

  UttResult run_sup(int utt_idx, size_t slot, int64_t s,
                    const std::unordered_map<std::string, Tensor<float>>& overrides) {
    UttResult res;
    const Utterance& utt = corpus_[static_cast<size_t>(utt_idx)];
    FeatureSequence feats = utt.features;
    if (cfg_.augment.use_specaugment) {
      auto sa_rng = make_engine(cfg_.train.seed, Stream::kSpecAugment, static_cast<uint64_t>(s), slot);
      feats = spec_augment(feats, cfg_.augment.specaugment, sa_rng);
    }
    auto dropout_rng = make_engine(cfg_.train.seed, Stream::kDropout, static_cast<uint64_t>(s), slot * 4 + 0);
    Graph<float> g;
    GraphBinding<float> bind(g, model_.params, overrides.empty() ? nullptr : &overrides);
    try {
      const Var loss = build_rnnt_loss(model_, bind, feats.frames, utt.transcript, RunMode::kTrain, &dropout_rng);
      res.loss = static_cast<double>(g.value(loss)[0]);
      g.backward(loss);
    } catch (const std::domain_error&) {
      res.finite = false;
      return res;
    }
    bind.accumulate_grads(res.grads);
    res.contributed = true;
    return res;
  }

  UttResult run_unsup(int utt_idx, size_t slot, int64_t s,
                      const std::unordered_map<std::string, Tensor<float>>& overrides) {
    UttResult res;
    const Utterance& utt = corpus_[static_cast<size_t>(utt_idx)];
    auto warp_rng = make_engine(cfg_.train.seed, Stream::kWarp, static_cast<uint64_t>(s), slot);
    auto mask_rng = make_engine(cfg_.train.seed, Stream::kMask, static_cast<uint64_t>(s), slot);
    const auto inputs = prepare_unsup_inputs(utt.features, cfg_.augment, warp_rng, mask_rng);
    if (!inputs) return res;  // no usable mask; contributes zero

    auto neg_rng = make_engine(cfg_.train.seed, Stream::kNegatives, static_cast<uint64_t>(s), slot);
    auto dropout_rng = make_engine(cfg_.train.seed, Stream::kDropout, static_cast<uint64_t>(s), slot * 4 + 1);
    Graph<float> g;
    GraphBinding<float> bind(g, model_.params, overrides.empty() ? nullptr : &overrides);
    try {
      const Var loss = build_contrastive_loss(model_, bind, *inputs, cfg_.contrastive, neg_rng, RunMode::kTrain,
                                              &dropout_rng, bypass_stop_gradient_);
      res.loss = static_cast<double>(g.value(loss)[0]);
      g.backward(loss);
    } catch (const std::domain_error&) {
      res.finite = false;
      return res;
    }
    bind.accumulate_grads(res.grads);
    res.contributed = true;
    return res;
  }

  RunConfig cfg_;
  CsiamModel<float> model_;
  Adam<float> opt_;
  std::vector<Utterance> corpus_;
  int64_t step_ = 0;
  int64_t skipped_ = 0;
  bool bypass_stop_gradient_ = false;
};

// Edit distance on label sequences; the `eval` command reports it.
inline int edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= b.size(); ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace csiam
