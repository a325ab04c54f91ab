// csiam/probe.hpp
//
// Layer diagnostic: freeze the encoder, attach an independent two-dense-layer
// softmax classifier to each activation layer, train with cross-entropy on
// frame labels and report accuracy per layer. Frame labels are
// majority-pooled over each stride-4 window before probing.

#pragma once

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "csiam/alignment.hpp"
#include "csiam/graph.hpp"
#include "csiam/optimizer.hpp"
#include "csiam/params.hpp"
#include "csiam/pipeline.hpp"

namespace csiam {

struct ProbeConfig {
  int hidden_dim = 256;
  int train_steps = 2000;
  double lr = 1e-3;
  int batch_size = 128;
  double val_fraction = 0.2;
  uint64_t seed = 1;
  std::vector<int> layer_indices;  // empty = all layers

  void validate() const {
    if (hidden_dim < 1 || train_steps < 1 || batch_size < 1) throw std::invalid_argument("probe config invalid");
    if (!(lr > 0.0)) throw std::invalid_argument("probe lr must be positive");
    if (val_fraction < 0.0 || val_fraction >= 1.0) throw std::invalid_argument("probe val_fraction in [0,1)");
  }
};

struct LayerAccuracy {
  int layer = 0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

using LayerAccuracyTable = std::vector<LayerAccuracy>;

// Majority vote over the stride-wide input window; ties break toward the
// label that appears earliest in the window.
inline std::vector<int> pool_labels_majority(const std::vector<int>& frame_labels, int t_ds,
                                             int stride = kEncoderStride) {
  std::vector<int> pooled(static_cast<size_t>(t_ds));
  const int T = static_cast<int>(frame_labels.size());
  for (int t = 0; t < t_ds; ++t) {
    const int lo = t * stride;
    const int hi = std::min(lo + stride, T);
    if (lo >= T) throw std::invalid_argument("pool_labels_majority: window beyond label length");
    int best_label = -1, best_count = 0;
    for (int i = lo; i < hi; ++i) {
      const int cand = frame_labels[static_cast<size_t>(i)];
      int count = 0;
      for (int j = lo; j < hi; ++j) {
        if (frame_labels[static_cast<size_t>(j)] == cand) ++count;
      }
      if (count > best_count) {  // strictly greater: first (earlier) label wins ties
        best_count = count;
        best_label = cand;
      }
    }
    pooled[static_cast<size_t>(t)] = best_label;
  }
  return pooled;
}

// One probe dataset: per-utterance feature matrices with aligned labels.
struct ProbeDataset {
  std::vector<Tensor<float>> utterances;      // [T_i, d] each
  std::vector<std::vector<int>> labels;       // len T_i each
  int feature_dim() const { return utterances.empty() ? 0 : utterances.front().cols(); }
};

namespace probe_detail {

struct FlatData {
  Tensor<float> x;  // [N, d]
  std::vector<int> y;
};

inline FlatData flatten(const ProbeDataset& data, const std::vector<int>& utt_ids) {
  int total = 0, d = data.feature_dim();
  for (int u : utt_ids) total += data.utterances[static_cast<size_t>(u)].rows();
  FlatData out;
  out.x = Tensor<float>({total, d});
  out.y.reserve(static_cast<size_t>(total));
  int row = 0;
  for (int u : utt_ids) {
    const auto& m = data.utterances[static_cast<size_t>(u)];
    for (int t = 0; t < m.rows(); ++t, ++row) {
      for (int c = 0; c < d; ++c) out.x.at(row, c) = m.at(t, c);
      out.y.push_back(data.labels[static_cast<size_t>(u)][static_cast<size_t>(t)]);
    }
  }
  return out;
}

inline double accuracy(const ParameterStore<float>& store, const FlatData& data) {
  if (data.y.empty()) return 0.0;
  Graph<float> g;
  GraphBinding<float> bind(g, store);
  Var h = g.add_rowwise(g.matmul(g.constant(data.x), bind("probe.w1")), bind("probe.b1"));
  h = g.relu(h);
  const Var logits = g.add_rowwise(g.matmul(h, bind("probe.w2")), bind("probe.b2"));
  const auto& v = g.value(logits);
  int correct = 0;
  for (int n = 0; n < v.rows(); ++n) {
    int best = 0;
    for (int c = 1; c < v.cols(); ++c) {
      if (v.at(n, c) > v.at(n, best)) best = c;
    }
    if (best == data.y[static_cast<size_t>(n)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.y.size());
}

}  // namespace probe_detail

// Trains one classifier on one layer's data. Exposed separately so raw
// input-level features can be probed with the same machinery.
inline LayerAccuracy train_single_probe(const ProbeDataset& data, int num_classes, const ProbeConfig& cfg,
                                        int layer_tag) {
  cfg.validate();
  if (data.utterances.empty()) throw std::invalid_argument("probe needs a non-empty dataset");
  for (size_t u = 0; u < data.utterances.size(); ++u) {
    if (static_cast<size_t>(data.utterances[u].rows()) != data.labels[u].size()) {
      throw std::invalid_argument("probe activation/label length mismatch in utterance " + std::to_string(u));
    }
  }

  // utterance-level train/val split
  auto split_rng = make_engine(cfg.seed, Stream::kProbe, static_cast<uint64_t>(layer_tag), 0);
  std::vector<int> order(data.utterances.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::shuffle(order.begin(), order.end(), split_rng);
  const int n_val = std::min<int>(static_cast<int>(order.size()) - 1,
                                  static_cast<int>(cfg.val_fraction * static_cast<double>(order.size()) + 0.5));
  std::vector<int> val_ids(order.begin(), order.begin() + n_val);
  std::vector<int> train_ids(order.begin() + n_val, order.end());

  const auto train_data = probe_detail::flatten(data, train_ids);
  const auto val_data = probe_detail::flatten(data, val_ids);
  const int d = data.feature_dim();

  ParameterStore<float> store;
  auto init_rng = make_engine(cfg.seed, Stream::kProbe, static_cast<uint64_t>(layer_tag), 1);
  init_glorot(store.create("probe.w1", {d, cfg.hidden_dim}).value, init_rng, d, cfg.hidden_dim);
  store.create("probe.b1", {cfg.hidden_dim});
  init_glorot(store.create("probe.w2", {cfg.hidden_dim, num_classes}).value, init_rng, cfg.hidden_dim, num_classes);
  store.create("probe.b2", {num_classes});

  Adam<float> opt;
  auto batch_rng = make_engine(cfg.seed, Stream::kProbe, static_cast<uint64_t>(layer_tag), 2);
  const int n_train = train_data.x.rows();
  for (int step = 1; step <= cfg.train_steps; ++step) {
    const int bs = std::min(cfg.batch_size, n_train);
    Tensor<float> xb({bs, d});
    std::vector<int> yb(static_cast<size_t>(bs));
    for (int b = 0; b < bs; ++b) {
      const int n = static_cast<int>(batch_rng() % static_cast<uint64_t>(n_train));
      for (int c = 0; c < d; ++c) xb.at(b, c) = train_data.x.at(n, c);
      yb[static_cast<size_t>(b)] = train_data.y[static_cast<size_t>(n)];
    }
    Graph<float> g;
    GraphBinding<float> bind(g, store);
    Var h = g.add_rowwise(g.matmul(g.constant(xb), bind("probe.w1")), bind("probe.b1"));
    h = g.relu(h);
    const Var logits = g.add_rowwise(g.matmul(h, bind("probe.w2")), bind("probe.b2"));
    const Var loss = g.neg(g.mean(g.pick_rows(g.log_softmax_rows(logits), yb)));
    g.backward(loss);
    std::unordered_map<std::string, Tensor<float>> grads;
    bind.accumulate_grads(grads);
    opt.step(store, grads, cfg.lr, step);
  }

  LayerAccuracy acc;
  acc.layer = layer_tag;
  acc.train_acc = probe_detail::accuracy(store, train_data);
  acc.val_acc = val_data.y.empty() ? acc.train_acc : probe_detail::accuracy(store, val_data);
  return acc;
}

// Encodes the corpus once in eval mode, then trains an independent probe per
// requested layer. Encoder parameters are read-only throughout.
inline LayerAccuracyTable train_probe(const CsiamModel<float>& model, const std::vector<Utterance>& corpus,
                                      const ProbeConfig& cfg) {
  cfg.validate();
  if (corpus.empty()) throw std::invalid_argument("probe needs a non-empty corpus");
  const int n_layers = model.encoder.config().n_blocks + 1;
  std::vector<int> layers = cfg.layer_indices;
  if (layers.empty()) {
    for (int i = 0; i < n_layers; ++i) layers.push_back(i);
  }
  for (int l : layers) {
    if (l < 0 || l >= n_layers) throw std::invalid_argument("probe layer index out of range: " + std::to_string(l));
  }

  // activations per layer, plus pooled labels
  std::vector<ProbeDataset> per_layer(static_cast<size_t>(n_layers));
  for (const auto& utt : corpus) {
    Graph<float> g;
    GraphBinding<float> bind(g, model.params);
    const auto acts = model.encoder.forward(bind, utt.features.frames, RunMode::kEval, nullptr);
    const auto pooled = pool_labels_majority(utt.frame_labels.labels, acts.t_ds);
    for (int l = 0; l < n_layers; ++l) {
      per_layer[static_cast<size_t>(l)].utterances.push_back(g.value(acts.layers[static_cast<size_t>(l)]));
      per_layer[static_cast<size_t>(l)].labels.push_back(pooled);
    }
  }

  const int num_classes = model.label_encoder.config().vocab_size - 1;
  LayerAccuracyTable table;
  for (int l : layers) table.push_back(train_single_probe(per_layer[static_cast<size_t>(l)], num_classes, cfg, l));
  std::sort(table.begin(), table.end(), [](const LayerAccuracy& a, const LayerAccuracy& b) { return a.layer < b.layer; });
  return table;
}

// CSV: "layer,train_acc,val_acc", accuracies at 4 decimal places.
inline void emit_curve(const LayerAccuracyTable& table, const std::string& path) {
  if (table.empty()) throw std::invalid_argument("emit_curve: empty table");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write curve to " + path);
  out << "layer,train_acc,val_acc\n";
  for (const auto& row : table) {
    out << row.layer << "," << std::fixed << std::setprecision(4) << row.train_acc << "," << row.val_acc << "\n";
  }
  if (!out) throw std::runtime_error("short write to " + path);
}

}  // namespace csiam
