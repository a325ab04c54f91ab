// tests/test_encoder.cpp

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "csiam/model.hpp"

using namespace csiam;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.input_dim = 6;
  cfg.n_blocks = 2;
  cfg.n_heads = 2;
  cfg.d_model = 16;
  cfg.d_ff = 32;
  cfg.d_qk = 8;
  cfg.d_value = 8;
  cfg.dropout_p = 0.0;
  return cfg;
}

template <typename Real>
struct TinyModel {
  EncoderConfig cfg = tiny_config();
  AudioEncoder<Real> enc{"enc", tiny_config()};
  ParameterStore<Real> store;

  explicit TinyModel(uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    enc.create_params(store, rng);
  }
};

}  // namespace

TEST_CASE("conv subsampling length convention") {
  TinyModel<double> m;
  Graph<double> g;
  GraphBinding<double> bind(g, m.store);
  const auto acts = m.enc.forward(bind, Tensor<double>::zeros({16, 6}), RunMode::kEval);
  CHECK(acts.t_ds == 4);
  CHECK(downsampled_len(16) == 4);
  CHECK(downsampled_len(17) == 5);
  CHECK(downsampled_len(1) == 1);
  CHECK(acts.layers.size() == static_cast<size_t>(m.cfg.n_blocks) + 1);
}

TEST_CASE("encoder rejects wrong feature dimension") {
  TinyModel<double> m;
  Graph<double> g;
  GraphBinding<double> bind(g, m.store);
  CHECK_THROWS_AS(m.enc.forward(bind, Tensor<double>::zeros({16, 5}), RunMode::kEval), std::invalid_argument);
}

TEST_CASE("zero input with zeroed weights gives constant rows everywhere") {
  TinyModel<double> m;
  for (auto& p : m.store.all()) {
    const bool is_gain = p.name.find("ln1.g") != std::string::npos || p.name.find("ln2.g") != std::string::npos ||
                         p.name.find("final_ln.g") != std::string::npos;
    if (!is_gain) std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
  }
  Graph<double> g;
  GraphBinding<double> bind(g, m.store);
  const auto acts = m.enc.forward(bind, Tensor<double>::zeros({20, 6}), RunMode::kEval);
  for (const Var layer : acts.layers) {
    const auto& x = g.value(layer);
    for (int t = 1; t < x.rows(); ++t) {
      for (int d = 0; d < x.cols(); ++d) CHECK(x.at(t, d) == x.at(0, d));
    }
  }
}

TEST_CASE("eval mode forward is deterministic") {
  TinyModel<double> m;
  std::mt19937_64 rng(5);
  const Tensor<double> feats = Tensor<double>::randn({19, 6}, rng);
  Graph<double> g1, g2;
  GraphBinding<double> b1(g1, m.store), b2(g2, m.store);
  const auto a1 = m.enc.forward(b1, feats, RunMode::kEval);
  const auto a2 = m.enc.forward(b2, feats, RunMode::kEval);
  CHECK(g1.value(a1.top()).data == g2.value(a2.top()).data);
}

TEST_CASE("relative attention carries no absolute positional signal at init") {
  // Content embedded at two offsets in a zero-padded buffer; interior
  // downsampled outputs must match under the shift.
  TinyModel<double> m(7);
  std::mt19937_64 rng(9);
  const int content_len = 24, buffer_len = 64;
  const Tensor<double> content = Tensor<double>::randn({content_len, 6}, rng);

  auto embed_and_encode = [&](int offset) {
    Tensor<double> buf = Tensor<double>::zeros({buffer_len, 6});
    for (int t = 0; t < content_len; ++t)
      for (int d = 0; d < 6; ++d) buf.at(offset + t, d) = content.at(t, d);
    Graph<double> g;
    GraphBinding<double> bind(g, m.store);
    const auto acts = m.enc.forward(bind, buf, RunMode::kEval);
    return g.value(acts.top());
  };

  const int o1 = 8, o2 = 16;  // both multiples of the total stride
  const auto y1 = embed_and_encode(o1);
  const auto y2 = embed_and_encode(o2);
  const int ds1 = o1 / 4, ds2 = o2 / 4, ds_len = content_len / 4;
  double max_dev = 0.0;
  for (int t = 1; t < ds_len - 1; ++t) {  // interior frames only
    for (int d = 0; d < y1.cols(); ++d) {
      max_dev = std::max(max_dev, std::abs(y1.at(ds1 + t, d) - y2.at(ds2 + t, d)));
    }
  }
  CHECK(max_dev < 1e-4);
}

TEST_CASE("label encoder causality") {
  LabelEncoderConfig lcfg;
  lcfg.n_blocks = 2;
  lcfg.vocab_size = 5;
  lcfg.blank_id = 4;
  const EncoderConfig shared = tiny_config();
  LabelEncoder<double> lab("lab", lcfg, shared);
  ParameterStore<double> store;
  std::mt19937_64 rng(3);
  lab.create_params(store, rng);

  auto run = [&](const std::vector<int>& labels) {
    Graph<double> g;
    GraphBinding<double> bind(g, store);
    return g.value(lab.forward(bind, labels, RunMode::kEval));
  };

  SECTION("empty prefix gives a single start-token row") {
    const auto y = run({});
    CHECK(y.rows() == 1);
    CHECK(y.cols() == shared.d_model);
  }

  SECTION("changing a later label leaves earlier outputs bitwise unchanged") {
    const auto y1 = run({0, 1, 2, 3});
    const auto y2 = run({0, 1, 2, 0});
    for (int u = 0; u <= 3; ++u) {  // rows 0..3 cover the shared prefix 0,1,2
      for (int d = 0; d < y1.cols(); ++d) CHECK(y1.at(u, d) == y2.at(u, d));
    }
  }

  SECTION("prefixes sharing k labels share k+1 output rows bitwise") {
    const auto y1 = run({2, 1});
    const auto y2 = run({2, 1, 3, 0});
    for (int u = 0; u < 3; ++u) {
      for (int d = 0; d < y1.cols(); ++d) CHECK(y1.at(u, d) == y2.at(u, d));
    }
  }

  SECTION("out-of-range ids rejected") { CHECK_THROWS_AS(run({0, 7}), std::out_of_range); }
}

TEST_CASE("prediction network shape preservation and wiring") {
  const EncoderConfig shared = tiny_config();
  PredictionNetworkConfig pcfg;
  pcfg.n_blocks = 1;
  PredictionNetwork<double> pred("pred", pcfg, shared);
  TinyModel<double> m(11);
  std::mt19937_64 rng(13);
  pred.create_params(m.store, rng);

  std::mt19937_64 frng(17);
  const Tensor<double> feats = Tensor<double>::randn({28, 6}, frng);

  SECTION("shapes preserved") {
    Graph<double> g;
    GraphBinding<double> bind(g, m.store);
    const auto acts = m.enc.forward(bind, feats, RunMode::kEval);
    const Var out = pred.forward(bind, acts.top(), RunMode::kEval);
    CHECK(g.value(out).rows() == acts.t_ds);
    CHECK(g.value(out).cols() == shared.d_model);
  }

  SECTION("gradient flows into prediction parameters") {
    Graph<double> g;
    GraphBinding<double> bind(g, m.store);
    const auto acts = m.enc.forward(bind, feats, RunMode::kTrain, nullptr);
    const Var out = pred.forward(bind, acts.top(), RunMode::kTrain, nullptr);
    g.backward(g.mean(g.mul(out, out)));
    std::unordered_map<std::string, Tensor<double>> grads;
    bind.accumulate_grads(grads);
    double pred_grad = 0.0;
    for (const auto& [name, t] : grads) {
      if (name.rfind("pred.", 0) == 0) pred_grad = std::max(pred_grad, static_cast<double>(t.max_abs()));
    }
    CHECK(pred_grad > 0.0);
  }

  SECTION("a target-branch forward never touches prediction parameters") {
    Graph<double> g;
    GraphBinding<double> bind(g, m.store);
    const auto acts = m.enc.forward(bind, feats, RunMode::kEval);
    const Tensor<double> target = g.value(acts.top());
    // Randomize predictor weights; the target output cannot change.
    std::mt19937_64 noise(23);
    for (auto& p : m.store.all()) {
      if (p.name.rfind("pred.", 0) == 0) p.value = Tensor<double>::randn(p.value.shape, noise);
    }
    Graph<double> g2;
    GraphBinding<double> bind2(g2, m.store);
    const auto acts2 = m.enc.forward(bind2, feats, RunMode::kEval);
    CHECK(g2.value(acts2.top()).data == target.data);
  }
}
