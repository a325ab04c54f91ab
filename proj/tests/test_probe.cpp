// tests/test_probe.cpp

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "csiam/probe.hpp"

using namespace csiam;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

RunConfig probe_config() {
  return RunConfig::from_string(R"(
[data]
num_utterances = 24
num_classes = 4
feature_dim = 8
min_symbols = 6
max_symbols = 8
min_frames_per_symbol = 4
max_frames_per_symbol = 6
noise_std = 0
seed = 21
[encoder]
n_blocks = 2
n_heads = 2
d_model = 16
d_ff = 32
d_qk = 8
d_value = 8
dropout_p = 0
[label_encoder]
n_blocks = 1
[predictor]
n_blocks = 1
)");
}

}  // namespace

TEST_CASE("label pooling majority vote with earlier-label ties") {
  // windows of 4: {0,0,1,1} -> tie, earlier label 0 wins; {2,1,1,1} -> 1
  const std::vector<int> labels = {0, 0, 1, 1, 2, 1, 1, 1, 3, 3};
  const auto pooled = pool_labels_majority(labels, 3);
  REQUIRE(pooled.size() == 3);
  CHECK(pooled[0] == 0);
  CHECK(pooled[1] == 1);
  CHECK(pooled[2] == 3);  // truncated window {3,3}
}

TEST_CASE("probe reaches 100% on noise-free separable raw frames") {
  // The synthetic corpus at noise 0 is exactly linearly separable per frame;
  // probing the raw input features must saturate.
  SyntheticCorpusSpec spec;
  spec.num_classes = 4;
  spec.feature_dim = 8;
  spec.noise_std = 0.0;
  spec.seed = 5;
  const auto corpus = gen_corpus(spec, 16);

  ProbeDataset data;
  for (const auto& utt : corpus) {
    data.utterances.push_back(utt.features.frames);
    data.labels.push_back(utt.frame_labels.labels);
  }
  ProbeConfig cfg;
  cfg.hidden_dim = 32;
  cfg.train_steps = 600;
  cfg.seed = 9;
  const auto acc = train_single_probe(data, spec.num_classes, cfg, 0);
  CHECK(acc.train_acc == 1.0);
  CHECK(acc.val_acc == 1.0);
}

TEST_CASE("probe on shuffled labels sits at chance") {
  SyntheticCorpusSpec spec;
  spec.num_classes = 4;
  spec.feature_dim = 8;
  spec.noise_std = 0.0;
  spec.seed = 6;
  const auto corpus = gen_corpus(spec, 24);

  ProbeDataset data;
  std::mt19937_64 shuffle_rng(13);
  for (const auto& utt : corpus) {
    data.utterances.push_back(utt.features.frames);
    std::vector<int> shuffled(utt.frame_labels.labels.size());
    for (auto& l : shuffled) l = static_cast<int>(shuffle_rng() % 4);
    data.labels.push_back(shuffled);
  }
  ProbeConfig cfg;
  cfg.hidden_dim = 32;
  cfg.train_steps = 400;
  cfg.seed = 10;
  const auto acc = train_single_probe(data, spec.num_classes, cfg, 0);
  CHECK(acc.val_acc == Catch::Approx(0.25).margin(0.05));
}

TEST_CASE("probe is deterministic and leaves the encoder untouched") {
  const RunConfig cfg = probe_config();
  CsiamModel<float> model(cfg, 3);
  const auto corpus = gen_corpus(cfg.data, 10);

  ProbeConfig pcfg;
  pcfg.hidden_dim = 16;
  pcfg.train_steps = 120;
  pcfg.seed = 4;
  pcfg.layer_indices = {0, 2};

  const uint64_t before = model.params.checksum();
  const auto t1 = train_probe(model, corpus, pcfg);
  const auto t2 = train_probe(model, corpus, pcfg);
  CHECK(model.params.checksum() == before);

  REQUIRE(t1.size() == 2);
  CHECK(t1[0].layer == 0);
  CHECK(t1[1].layer == 2);
  for (size_t i = 0; i < t1.size(); ++i) {
    CHECK(t1[i].train_acc == t2[i].train_acc);
    CHECK(t1[i].val_acc == t2[i].val_acc);
    CHECK(t1[i].train_acc >= 0.0);
    CHECK(t1[i].train_acc <= 1.0);
  }
}

TEST_CASE("emit_curve format") {
  LayerAccuracyTable table;
  for (int l = 0; l < 5; ++l) table.push_back({l, 0.5 + 0.1 * l, 0.4 + 0.1 * l});
  const std::string path = temp_path("curve.csv");
  emit_curve(table, path);

  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "layer,train_acc,val_acc");
  int rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) ++rows;
    if (rows == 1) CHECK(line == "0,0.5000,0.4000");
  }
  CHECK(rows == 5);

  SECTION("empty table is an error") {
    CHECK_THROWS_AS(emit_curve({}, temp_path("nope.csv")), std::invalid_argument);
  }
}

TEST_CASE("probe errors on mismatched lengths") {
  ProbeDataset data;
  data.utterances.push_back(Tensor<float>({4, 3}));
  data.labels.push_back({0, 1});
  ProbeConfig cfg;
  CHECK_THROWS_AS(train_single_probe(data, 2, cfg, 0), std::invalid_argument);
}
