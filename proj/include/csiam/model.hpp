// csiam/model.hpp
//
// The shared audio encoder (strided conv subsampler + pre-LN transformer
// blocks with learned relative-position bias), the causal label encoder, the
// augmented-branch prediction network and the Eq-style logit join.
//
// No absolute positional embedding exists anywhere: position enters attention
// only through a per-head bias table indexed by clipped relative distance.

#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "csiam/alignment.hpp"
#include "csiam/features.hpp"
#include "csiam/graph.hpp"
#include "csiam/params.hpp"

namespace csiam {

struct EncoderConfig {
  int input_dim = 16;
  int n_conv = 2;
  int conv_kernel = 3;
  int conv_stride = 2;
  int n_blocks = 4;     // paper small model: 20
  int n_heads = 4;      // paper small model: 8
  int d_model = 64;     // paper small model: 512
  int d_ff = 128;       // paper small model: 2048
  int d_qk = 16;        // paper small model: 16
  int d_value = 16;     // paper small model: 48
  double dropout_p = 0.1;
  int rel_clip = 64;    // relative-distance clipping for the bias table

  void validate() const {
    if (input_dim < 1 || n_blocks < 1 || n_heads < 1 || d_model < 1 || d_ff < 1 || d_qk < 1 || d_value < 1) {
      throw std::invalid_argument("encoder dims must be positive");
    }
    if (n_conv != 2 || conv_stride != 2) {
      throw std::invalid_argument("encoder subsampler is fixed at two stride-2 convolutions (total factor 4)");
    }
    if (dropout_p < 0.0 || dropout_p >= 1.0) throw std::invalid_argument("dropout_p must be in [0,1)");
    if (rel_clip < 1) throw std::invalid_argument("rel_clip must be >= 1");
  }
};

struct LabelEncoderConfig {
  int n_blocks = 2;
  int vocab_size = 7;  // classes + blank
  int blank_id = 6;

  void validate() const {
    if (n_blocks < 1) throw std::invalid_argument("label encoder needs at least one block");
    if (vocab_size < 2 || blank_id < 0 || blank_id >= vocab_size) {
      throw std::invalid_argument("label encoder vocab/blank invalid");
    }
  }
};

struct PredictionNetworkConfig {
  int n_blocks = 2;  // paper: 5

  void validate() const {
    if (n_blocks < 1) throw std::invalid_argument("prediction network needs at least one block");
  }
};

struct JointConfig {
  int hidden_dim = 64;

  void validate() const {
    if (hidden_dim < 1) throw std::invalid_argument("joint hidden_dim must be positive");
  }
};

enum class RunMode { kTrain, kEval };

template <typename Real>
struct EncoderActivations {
  std::vector<Var> layers;  // layer 0 = post-conv input, layer i = block i output (top after final norm)
  int t_ds = 0;
  Var top() const { return layers.back(); }
};

namespace detail {

// One pre-LN transformer block with relative-position-bias attention.
// Parameters live under `prefix` in the store.
template <typename Real>
struct TransformerBlock {
  std::string prefix;
  int n_heads, d_model, d_ff, d_qk, d_value, rel_clip;
  bool causal = false;
  double dropout_p = 0.0;

  void create_params(ParameterStore<Real>& store, std::mt19937_64& rng) const {
    auto& ln1g = store.create(prefix + ".ln1.g", {d_model});
    std::fill(ln1g.value.data.begin(), ln1g.value.data.end(), Real(1));
    store.create(prefix + ".ln1.b", {d_model});
    init_glorot(store.create(prefix + ".wq", {d_model, n_heads * d_qk}).value, rng, d_model, n_heads * d_qk);
    init_glorot(store.create(prefix + ".wk", {d_model, n_heads * d_qk}).value, rng, d_model, n_heads * d_qk);
    init_glorot(store.create(prefix + ".wv", {d_model, n_heads * d_value}).value, rng, d_model, n_heads * d_value);
    store.create(prefix + ".rel", {n_heads, 2 * rel_clip + 1});  // zero-init: no positional prior
    init_glorot(store.create(prefix + ".wo", {n_heads * d_value, d_model}).value, rng, n_heads * d_value, d_model);
    store.create(prefix + ".bo", {d_model});
    auto& ln2g = store.create(prefix + ".ln2.g", {d_model});
    std::fill(ln2g.value.data.begin(), ln2g.value.data.end(), Real(1));
    store.create(prefix + ".ln2.b", {d_model});
    init_glorot(store.create(prefix + ".ff1.w", {d_model, d_ff}).value, rng, d_model, d_ff);
    store.create(prefix + ".ff1.b", {d_ff});
    init_glorot(store.create(prefix + ".ff2.w", {d_ff, d_model}).value, rng, d_ff, d_model);
    store.create(prefix + ".ff2.b", {d_model});
  }

  Var forward(GraphBinding<Real>& bind, Var x, RunMode mode, std::mt19937_64* dropout_rng) const {
    Graph<Real>& g = bind.graph();
    const int T = g.value(x).rows();

    Var xa = g.layer_norm(x, bind(prefix + ".ln1.g"), bind(prefix + ".ln1.b"));
    Var q = g.matmul(xa, bind(prefix + ".wq"));
    Var k = g.matmul(xa, bind(prefix + ".wk"));
    Var v = g.matmul(xa, bind(prefix + ".wv"));

    // Relative offsets, clipped; shared across heads, biased per head.
    std::vector<int> offsets(static_cast<size_t>(T) * T);
    for (int i = 0; i < T; ++i) {
      for (int j = 0; j < T; ++j) {
        const int d = std::max(-rel_clip, std::min(j - i, rel_clip)) + rel_clip;
        offsets[static_cast<size_t>(i) * T + j] = d;
      }
    }

    Var causal_mask;
    if (causal) {
      Tensor<Real> m({T, T});
      for (int i = 0; i < T; ++i)
        for (int j = i + 1; j < T; ++j) m.at(i, j) = Real(-1e9);
      causal_mask = g.constant(std::move(m));
    }

    Var rel = bind(prefix + ".rel");
    const Real inv_sqrt = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(d_qk)));
    std::vector<Var> head_outputs;
    head_outputs.reserve(static_cast<size_t>(n_heads));
    for (int h = 0; h < n_heads; ++h) {
      Var qh = g.slice_cols(q, h * d_qk, d_qk);
      Var kh = g.slice_cols(k, h * d_qk, d_qk);
      Var vh = g.slice_cols(v, h * d_value, d_value);
      Var scores = g.scale(g.matmul_nt(qh, kh), inv_sqrt);
      Var table_h = g.reshape(g.row(rel, h), {2 * rel_clip + 1, 1});
      Var bias = g.reshape(g.gather_rows(table_h, offsets), {T, T});
      scores = g.add(scores, bias);
      if (causal) scores = g.add(scores, causal_mask);
      Var attn = g.softmax_rows(scores);
      if (mode == RunMode::kTrain && dropout_p > 0.0 && dropout_rng) {
        attn = g.dropout(attn, static_cast<Real>(dropout_p), *dropout_rng);
      }
      head_outputs.push_back(g.matmul(attn, vh));
    }
    Var concat = n_heads == 1 ? head_outputs[0] : g.concat_cols(head_outputs);
    Var attn_out = g.add_rowwise(g.matmul(concat, bind(prefix + ".wo")), bind(prefix + ".bo"));
    if (mode == RunMode::kTrain && dropout_p > 0.0 && dropout_rng) {
      attn_out = g.dropout(attn_out, static_cast<Real>(dropout_p), *dropout_rng);
    }
    Var h1 = g.add(x, attn_out);

    Var ha = g.layer_norm(h1, bind(prefix + ".ln2.g"), bind(prefix + ".ln2.b"));
    Var ff = g.add_rowwise(g.matmul(ha, bind(prefix + ".ff1.w")), bind(prefix + ".ff1.b"));
    ff = g.relu(ff);
    ff = g.add_rowwise(g.matmul(ff, bind(prefix + ".ff2.w")), bind(prefix + ".ff2.b"));
    if (mode == RunMode::kTrain && dropout_p > 0.0 && dropout_rng) {
      ff = g.dropout(ff, static_cast<Real>(dropout_p), *dropout_rng);
    }
    return g.add(h1, ff);
  }
};

template <typename Real>
void create_final_norm(ParameterStore<Real>& store, const std::string& prefix, int d_model) {
  auto& gain = store.create(prefix + ".final_ln.g", {d_model});
  std::fill(gain.value.data.begin(), gain.value.data.end(), Real(1));
  store.create(prefix + ".final_ln.b", {d_model});
}

template <typename Real>
Var apply_final_norm(GraphBinding<Real>& bind, const std::string& prefix, Var x) {
  return bind.graph().layer_norm(x, bind(prefix + ".final_ln.g"), bind(prefix + ".final_ln.b"));
}

}  // namespace detail

// ------------------------------------------------------------ audio encoder
template <typename Real>
class AudioEncoder {
 public:
  AudioEncoder(std::string prefix, EncoderConfig cfg) : prefix_(std::move(prefix)), cfg_(cfg) {
    cfg_.validate();
    for (int i = 0; i < cfg_.n_blocks; ++i) {
      blocks_.push_back(detail::TransformerBlock<Real>{
          prefix_ + ".block" + std::to_string(i), cfg_.n_heads, cfg_.d_model, cfg_.d_ff, cfg_.d_qk, cfg_.d_value,
          cfg_.rel_clip, /*causal=*/false, cfg_.dropout_p});
    }
  }

  const EncoderConfig& config() const { return cfg_; }

  void create_params(ParameterStore<Real>& store, std::mt19937_64& rng) const {
    const int k = cfg_.conv_kernel;
    init_glorot(store.create(prefix_ + ".conv0.w", {k, cfg_.input_dim, cfg_.d_model}).value, rng,
                k * cfg_.input_dim, cfg_.d_model);
    store.create(prefix_ + ".conv0.b", {cfg_.d_model});
    init_glorot(store.create(prefix_ + ".conv1.w", {k, cfg_.d_model, cfg_.d_model}).value, rng, k * cfg_.d_model,
                cfg_.d_model);
    store.create(prefix_ + ".conv1.b", {cfg_.d_model});
    for (const auto& b : blocks_) b.create_params(store, rng);
    detail::create_final_norm(store, prefix_, cfg_.d_model);
  }

  EncoderActivations<Real> forward(GraphBinding<Real>& bind, const Tensor<Real>& features, RunMode mode,
                                   std::mt19937_64* dropout_rng = nullptr) const {
    Graph<Real>& g = bind.graph();
    if (features.rank() != 2 || features.cols() != cfg_.input_dim) {
      throw std::invalid_argument("encoder expects [T," + std::to_string(cfg_.input_dim) + "] features, got " +
                                  shape_str(features.shape));
    }
    Var x = g.constant(features);
    x = g.relu(g.conv1d(x, bind(prefix_ + ".conv0.w"), bind(prefix_ + ".conv0.b"), cfg_.conv_stride));
    x = g.relu(g.conv1d(x, bind(prefix_ + ".conv1.w"), bind(prefix_ + ".conv1.b"), cfg_.conv_stride));

    EncoderActivations<Real> acts;
    acts.t_ds = g.value(x).rows();
    acts.layers.reserve(static_cast<size_t>(cfg_.n_blocks) + 1);
    acts.layers.push_back(x);
    for (int i = 0; i < cfg_.n_blocks; ++i) {
      x = blocks_[static_cast<size_t>(i)].forward(bind, x, mode, dropout_rng);
      if (i + 1 == cfg_.n_blocks) x = detail::apply_final_norm(bind, prefix_, x);
      acts.layers.push_back(x);
    }
    return acts;
  }

 private:
  std::string prefix_;
  EncoderConfig cfg_;
  std::vector<detail::TransformerBlock<Real>> blocks_;
};

// ------------------------------------------------------------ label encoder
// Streaming transformer over the label prefix; strictly causal. Position 0
// consumes the blank embedding as start-of-sequence.
template <typename Real>
class LabelEncoder {
 public:
  LabelEncoder(std::string prefix, LabelEncoderConfig cfg, const EncoderConfig& shared)
      : prefix_(std::move(prefix)), cfg_(cfg), d_model_(shared.d_model) {
    cfg_.validate();
    for (int i = 0; i < cfg_.n_blocks; ++i) {
      blocks_.push_back(detail::TransformerBlock<Real>{
          prefix_ + ".block" + std::to_string(i), shared.n_heads, shared.d_model, shared.d_ff, shared.d_qk,
          shared.d_value, shared.rel_clip, /*causal=*/true, shared.dropout_p});
    }
  }

  const LabelEncoderConfig& config() const { return cfg_; }

  void create_params(ParameterStore<Real>& store, std::mt19937_64& rng) const {
    init_glorot(store.create(prefix_ + ".embed", {cfg_.vocab_size, d_model_}).value, rng, cfg_.vocab_size, d_model_);
    for (const auto& b : blocks_) b.create_params(store, rng);
    detail::create_final_norm(store, prefix_, d_model_);
  }

  // prefix ids (excluding the implicit start token) -> [U+1, d_model]
  Var forward(GraphBinding<Real>& bind, const std::vector<int>& labels, RunMode mode,
              std::mt19937_64* dropout_rng = nullptr) const {
    Graph<Real>& g = bind.graph();
    std::vector<int> ids;
    ids.reserve(labels.size() + 1);
    ids.push_back(cfg_.blank_id);
    for (int l : labels) {
      if (l < 0 || l >= cfg_.vocab_size) {
        throw std::out_of_range("label id " + std::to_string(l) + " outside vocabulary of " +
                                std::to_string(cfg_.vocab_size));
      }
      ids.push_back(l);
    }
    Var x = g.embedding_lookup(bind(prefix_ + ".embed"), ids);
    for (const auto& b : blocks_) x = b.forward(bind, x, mode, dropout_rng);
    return detail::apply_final_norm(bind, prefix_, x);
  }

 private:
  std::string prefix_;
  LabelEncoderConfig cfg_;
  int d_model_;
  std::vector<detail::TransformerBlock<Real>> blocks_;
};

// ------------------------------------------------------- prediction network
// Extra transformer stack applied only on the augmented branch.
template <typename Real>
class PredictionNetwork {
 public:
  PredictionNetwork(std::string prefix, PredictionNetworkConfig cfg, const EncoderConfig& shared)
      : prefix_(std::move(prefix)), cfg_(cfg), d_model_(shared.d_model) {
    cfg_.validate();
    for (int i = 0; i < cfg_.n_blocks; ++i) {
      blocks_.push_back(detail::TransformerBlock<Real>{
          prefix_ + ".block" + std::to_string(i), shared.n_heads, shared.d_model, shared.d_ff, shared.d_qk,
          shared.d_value, shared.rel_clip, /*causal=*/false, shared.dropout_p});
    }
  }

  void create_params(ParameterStore<Real>& store, std::mt19937_64& rng) const {
    for (const auto& b : blocks_) b.create_params(store, rng);
    detail::create_final_norm(store, prefix_, d_model_);
  }

  Var forward(GraphBinding<Real>& bind, Var x, RunMode mode, std::mt19937_64* dropout_rng = nullptr) const {
    for (const auto& b : blocks_) x = b.forward(bind, x, mode, dropout_rng);
    return detail::apply_final_norm(bind, prefix_, x);
  }

 private:
  std::string prefix_;
  PredictionNetworkConfig cfg_;
  int d_model_;
  std::vector<detail::TransformerBlock<Real>> blocks_;
};

// ------------------------------------------------------------- logit join
// r = Linear3(Tanh(Linear1(a) + Linear2(l))), broadcast over the
// (T_ds x U+1) grid. Six independent trainable tensors.
template <typename Real>
class JointNetwork {
 public:
  JointNetwork(std::string prefix, JointConfig cfg, int d_model, int vocab_size)
      : prefix_(std::move(prefix)), cfg_(cfg), d_model_(d_model), vocab_(vocab_size) {
    cfg_.validate();
  }

  int vocab_size() const { return vocab_; }

  void create_params(ParameterStore<Real>& store, std::mt19937_64& rng) const {
    init_glorot(store.create(prefix_ + ".wa", {d_model_, cfg_.hidden_dim}).value, rng, d_model_, cfg_.hidden_dim);
    store.create(prefix_ + ".ba", {cfg_.hidden_dim});
    init_glorot(store.create(prefix_ + ".wl", {d_model_, cfg_.hidden_dim}).value, rng, d_model_, cfg_.hidden_dim);
    store.create(prefix_ + ".bl", {cfg_.hidden_dim});
    init_glorot(store.create(prefix_ + ".wo", {cfg_.hidden_dim, vocab_}).value, rng, cfg_.hidden_dim, vocab_);
    store.create(prefix_ + ".bo", {vocab_});
  }

  // acoustic [T, d_model], label [U+1, d_model] -> logits [T*(U+1), V]
  Var forward_grid(GraphBinding<Real>& bind, Var acoustic, Var label) const {
    Graph<Real>& g = bind.graph();
    Var a2 = g.add_rowwise(g.matmul(acoustic, bind(prefix_ + ".wa")), bind(prefix_ + ".ba"));
    Var l2 = g.add_rowwise(g.matmul(label, bind(prefix_ + ".wl")), bind(prefix_ + ".bl"));
    Var grid = g.tanh_(g.outer_add(a2, l2));
    return g.add_rowwise(g.matmul(grid, bind(prefix_ + ".wo")), bind(prefix_ + ".bo"));
  }

  // single (a, l) pair -> V logits; used by the greedy decoder
  Var forward_single(GraphBinding<Real>& bind, Var a_row, Var l_row) const {
    Graph<Real>& g = bind.graph();
    Var a2 = g.add_rowwise(g.matmul(g.reshape(a_row, {1, d_model_}), bind(prefix_ + ".wa")), bind(prefix_ + ".ba"));
    Var l2 = g.add_rowwise(g.matmul(g.reshape(l_row, {1, d_model_}), bind(prefix_ + ".wl")), bind(prefix_ + ".bl"));
    Var h = g.tanh_(g.add(a2, l2));
    return g.add_rowwise(g.matmul(h, bind(prefix_ + ".wo")), bind(prefix_ + ".bo"));
  }

 private:
  std::string prefix_;
  JointConfig cfg_;
  int d_model_;
  int vocab_;
};

}  // namespace csiam
