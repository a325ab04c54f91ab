// csiam/synthetic.hpp
//
// Synthetic symbol-stream corpora: piecewise-constant class prototypes held
// for a random number of frames plus optional Gaussian noise. Stands in for
// frame-labelled speech so the whole pipeline trains in seconds.

#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "csiam/features.hpp"
#include "csiam/rng.hpp"
#include "csiam/tensor.hpp"

namespace csiam {

struct SyntheticCorpusSpec {
  int num_classes = 6;
  int feature_dim = 16;
  int min_symbols = 8;   // utterance length range, in symbols
  int max_symbols = 12;
  int min_frames_per_symbol = 3;
  int max_frames_per_symbol = 6;
  double noise_std = 0.0;
  uint64_t seed = 1;

  void validate() const {
    if (num_classes < 2) throw std::invalid_argument("synthetic corpus needs num_classes >= 2");
    if (feature_dim < 1) throw std::invalid_argument("synthetic corpus needs feature_dim >= 1");
    if (min_symbols < 1 || max_symbols < min_symbols) {
      throw std::invalid_argument("synthetic corpus symbol range invalid");
    }
    if (min_frames_per_symbol < 1 || max_frames_per_symbol < min_frames_per_symbol) {
      throw std::invalid_argument("synthetic corpus frames-per-symbol range invalid");
    }
    if (noise_std < 0.0) throw std::invalid_argument("synthetic corpus noise_std must be >= 0");
  }
};

struct Utterance {
  FeatureSequence features;
  FrameLabels frame_labels;
  std::vector<int> transcript;  // run-length collapsed frame labels
  uint64_t id = 0;
};

// Class prototypes are a pure function of the corpus seed.
inline Tensor<float> synthetic_prototypes(const SyntheticCorpusSpec& spec) {
  auto rng = make_engine(spec.seed, Stream::kData, 0);
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor<float> protos({spec.num_classes, spec.feature_dim});
  for (auto& v : protos.data) v = static_cast<float>(dist(rng));
  return protos;
}

inline Utterance gen_synthetic(const SyntheticCorpusSpec& spec, uint64_t utterance_id) {
  spec.validate();
  const Tensor<float> protos = synthetic_prototypes(spec);
  auto rng = make_engine(spec.seed, Stream::kData, utterance_id + 1);

  std::uniform_int_distribution<int> n_sym_dist(spec.min_symbols, spec.max_symbols);
  std::uniform_int_distribution<int> dur_dist(spec.min_frames_per_symbol, spec.max_frames_per_symbol);
  std::uniform_int_distribution<int> cls_dist(0, spec.num_classes - 1);

  const int n_symbols = n_sym_dist(rng);
  std::vector<int> classes(static_cast<size_t>(n_symbols));
  std::vector<int> durations(static_cast<size_t>(n_symbols));
  int total = 0;
  for (int s = 0; s < n_symbols; ++s) {
    classes[static_cast<size_t>(s)] = cls_dist(rng);
    durations[static_cast<size_t>(s)] = dur_dist(rng);
    total += durations[static_cast<size_t>(s)];
  }

  Utterance utt;
  utt.id = utterance_id;
  Tensor<float> frames({total, spec.feature_dim});
  utt.frame_labels.labels.resize(static_cast<size_t>(total));
  std::normal_distribution<double> noise(0.0, 1.0);
  int t = 0;
  for (int s = 0; s < n_symbols; ++s) {
    const int cls = classes[static_cast<size_t>(s)];
    for (int k = 0; k < durations[static_cast<size_t>(s)]; ++k, ++t) {
      utt.frame_labels.labels[static_cast<size_t>(t)] = cls;
      for (int d = 0; d < spec.feature_dim; ++d) {
        double v = protos.at(cls, d);
        if (spec.noise_std > 0.0) v += spec.noise_std * noise(rng);
        frames.at(t, d) = static_cast<float>(v);
      }
    }
  }
  utt.features = FeatureSequence(std::move(frames));
  // transcript: collapse runs; consecutive repeats of a class stay one token
  for (int s = 0; s < n_symbols; ++s) {
    if (utt.transcript.empty() || utt.transcript.back() != classes[static_cast<size_t>(s)]) {
      utt.transcript.push_back(classes[static_cast<size_t>(s)]);
    }
  }
  return utt;
}

inline std::vector<Utterance> gen_corpus(const SyntheticCorpusSpec& spec, int num_utterances) {
  if (num_utterances < 0) throw std::invalid_argument("num_utterances must be >= 0");
  std::vector<Utterance> out;
  out.reserve(static_cast<size_t>(num_utterances));
  for (int i = 0; i < num_utterances; ++i) out.push_back(gen_synthetic(spec, static_cast<uint64_t>(i)));
  return out;
}

}  // namespace csiam
