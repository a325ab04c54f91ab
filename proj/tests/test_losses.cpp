// tests/test_losses.cpp
//
// Oracles: explicit path enumeration for the transducer loss, closed-form
// points for the contrastive loss, finite differences for Eq-style joins.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <random>

#include "csiam/grad_check.hpp"
#include "csiam/losses.hpp"
#include "csiam/model.hpp"

using namespace csiam;

namespace {

// Explicit enumeration of every monotonic alignment path; probabilities in
// linear space, independent of the log-space DP under test.
double brute_force_path_sum(const Tensor<double>& logits, int T, int U, int V, int blank,
                            const std::vector<int>& labels) {
  // per-cell softmax
  Tensor<double> probs = logits;
  for (int row = 0; row < T * (U + 1); ++row) {
    double mx = -1e300;
    for (int v = 0; v < V; ++v) mx = std::max(mx, probs.at(row, v));
    double s = 0;
    for (int v = 0; v < V; ++v) s += std::exp(probs.at(row, v) - mx);
    for (int v = 0; v < V; ++v) probs.at(row, v) = std::exp(probs.at(row, v) - mx) / s;
  }
  auto prob = [&](int t, int u, int v) { return probs.at(t * (U + 1) + u, v); };
  double total = 0.0;
  std::function<void(int, int, double)> walk = [&](int t, int u, double acc) {
    if (t == T - 1 && u == U) {
      total += acc * prob(t, u, blank);
      return;
    }
    if (t < T - 1) walk(t + 1, u, acc * prob(t, u, blank));
    if (u < U) walk(t, u + 1, acc * prob(t, u, labels[static_cast<size_t>(u)]));
  };
  walk(0, 0, 1.0);
  return total;
}

RnntLattice make_lattice(Graph<double>& g, const Tensor<double>& logits, int T, int U, int V, int blank,
                         std::vector<int> labels, bool needs_grad = true) {
  RnntLattice lat;
  lat.logits = g.leaf(logits, needs_grad);
  lat.t_len = T;
  lat.u_len = U;
  lat.vocab = V;
  lat.blank_id = blank;
  lat.labels = std::move(labels);
  return lat;
}

}  // namespace

TEST_CASE("rnnt loss single forced path") {
  // U=0, T=1: the only path is the final blank.
  Graph<double> g;
  Tensor<double> logits({1, 3}, {0.3, -0.7, 1.2});
  const auto lat = make_lattice(g, logits, 1, 0, 3, 2, {});
  const double loss = g.value(rnnt_loss(g, lat))[0];
  double mx = 1.2;
  double denom = 0;
  for (double v : logits.data) denom += std::exp(v - mx);
  const double expect = -(logits[2] - mx - std::log(denom));
  CHECK(loss == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("rnnt loss closed-form uniform case") {
  // Uniform logits, T=2, U=1, V=2: two paths, each (1/2)^3 -> loss = log 4.
  Graph<double> g;
  Tensor<double> logits = Tensor<double>::full({2 * 2, 2}, 0.0);
  const auto lat = make_lattice(g, logits, 2, 1, 2, 1, {0});
  CHECK(g.value(rnnt_loss(g, lat))[0] == Catch::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("rnnt loss equals brute-force enumeration on random small lattices") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 120; ++trial) {
    const int T = 1 + static_cast<int>(rng() % 4);
    const int V = 2 + static_cast<int>(rng() % 4);
    const int blank = static_cast<int>(rng() % static_cast<uint64_t>(V));
    int U = static_cast<int>(rng() % 4);
    std::vector<int> labels;
    if (V < 2) U = 0;
    for (int u = 0; u < U; ++u) {
      int l = static_cast<int>(rng() % static_cast<uint64_t>(V));
      if (l == blank) l = (l + 1) % V;
      labels.push_back(l);
    }
    Tensor<double> logits = Tensor<double>::randn({T * (U + 1), V}, rng, 2.0);

    Graph<double> g;
    const auto lat = make_lattice(g, logits, T, U, V, blank, labels);
    const Var loss = rnnt_loss(g, lat);
    const double expect = -std::log(brute_force_path_sum(logits, T, U, V, blank, labels));
    CHECK(g.value(loss)[0] >= 0.0);
    CHECK(g.value(loss)[0] == Catch::Approx(expect).epsilon(1e-8));

    // gradient sums to zero over the vocabulary axis at every (t,u)
    g.backward(loss);
    const auto grad = g.grad(lat.logits);
    for (int row = 0; row < T * (U + 1); ++row) {
      double s = 0;
      for (int v = 0; v < V; ++v) s += grad.at(row, v);
      CHECK(std::abs(s) < 1e-8);
    }
  }
}

TEST_CASE("rnnt loss error paths") {
  Graph<double> g;
  SECTION("empty time axis") {
    Tensor<double> logits({0, 2});
    CHECK_THROWS_AS(rnnt_loss(g, make_lattice(g, Tensor<double>({1, 2}), 0, 1, 2, 1, {0})), std::invalid_argument);
    (void)logits;
  }
  SECTION("NaN logits") {
    Tensor<double> logits = Tensor<double>::full({2, 2}, std::nan(""));
    CHECK_THROWS_AS(rnnt_loss(g, make_lattice(g, logits, 2, 0, 2, 1, {})), std::domain_error);
  }
  SECTION("blank in labels") {
    Tensor<double> logits({4, 2});
    CHECK_THROWS_AS(rnnt_loss(g, make_lattice(g, logits, 2, 1, 2, 1, {1})), std::invalid_argument);
  }
}

TEST_CASE("rnnt gradient matches finite differences") {
  std::mt19937_64 rng(77);
  const int T = 3, U = 2, V = 4, blank = 0;
  const std::vector<int> labels = {2, 1};
  Tensor<double> logits = Tensor<double>::randn({T * (U + 1), V}, rng);

  auto loss_value = [&]() {
    Graph<double> g;
    return g.value(rnnt_loss(g, make_lattice(g, logits, T, U, V, blank, labels)))[0];
  };
  auto grads = [&]() {
    Graph<double> g;
    const auto lat = make_lattice(g, logits, T, U, V, blank, labels);
    const Var loss = rnnt_loss(g, lat);
    g.backward(loss);
    return std::vector<Tensor<double>>{g.grad(lat.logits)};
  };
  const auto res = grad_check({&logits}, loss_value, grads, 1e-5);
  CHECK(res.max_rel_error < 1e-6);
}

TEST_CASE("contrastive loss closed-form point") {
  // Unit positive and one orthogonal negative at tau=1: log(1 + e^-1).
  Graph<double> g;
  Tensor<double> aug({1, 2}, {1.0, 0.0});
  Tensor<double> tgt({2, 2}, {1.0, 0.0, 0.0, 1.0});
  ContrastivePlan plan;
  plan.anchors = {0};
  plan.positives = {0};
  plan.negatives = {{1}};
  const Var loss = contrastive_loss(g, g.leaf(aug, true), g.constant(tgt), plan, 1.0);
  CHECK(g.value(loss)[0] == Catch::Approx(std::log(1.0 + std::exp(-1.0))).margin(1e-6));
  CHECK(g.value(loss)[0] == Catch::Approx(0.313262).margin(1e-6));
}

TEST_CASE("contrastive loss with no negatives is exactly zero") {
  Graph<double> g;
  std::mt19937_64 rng(5);
  Tensor<double> aug = Tensor<double>::randn({3, 4}, rng);
  Tensor<double> tgt = Tensor<double>::randn({3, 4}, rng);
  ContrastivePlan plan;
  plan.anchors = {0, 1, 2};
  plan.positives = {0, 1, 2};
  plan.negatives = {{}, {}, {}};
  CHECK(g.value(contrastive_loss(g, g.constant(aug), g.constant(tgt), plan, 0.1))[0] == 0.0);
}

TEST_CASE("contrastive loss bounds and symmetry properties") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    const int d = 6, m = 8;
    Tensor<double> tgt = Tensor<double>::randn({m, d}, rng);
    Tensor<double> aug = Tensor<double>::randn({m, d}, rng);
    const int K = 4;
    ContrastivePlan plan;
    plan.anchors = {1, 3};
    plan.positives = {2, 5};
    plan.negatives = {{0, 4, 6, 7}, {0, 1, 6, 7}};

    Graph<double> g;
    const double base = g.value(contrastive_loss(g, g.constant(aug), g.constant(tgt), plan, 0.5))[0];
    CHECK(base >= 0.0);

    // anchor equal to positive and >= all negative sims => loss <= log(K+1)
    Tensor<double> matched = aug;
    for (size_t i = 0; i < plan.anchors.size(); ++i) {
      for (int dd = 0; dd < d; ++dd) matched.at(plan.anchors[i], dd) = tgt.at(plan.positives[i], dd);
    }
    Graph<double> g2;
    const double best = g2.value(contrastive_loss(g2, g2.constant(matched), g2.constant(tgt), plan, 0.5))[0];
    CHECK(best <= std::log(static_cast<double>(K + 1)) + 1e-12);

    // invariance to positive rescaling of a single vector
    Tensor<double> scaled = aug;
    for (int dd = 0; dd < d; ++dd) scaled.at(plan.anchors[0], dd) *= 7.5;
    Graph<double> g3;
    const double rescaled = g3.value(contrastive_loss(g3, g3.constant(scaled), g3.constant(tgt), plan, 0.5))[0];
    CHECK(std::abs(rescaled - base) < 1e-6);

    // shuffling the negative order leaves the loss unchanged
    ContrastivePlan shuffled = plan;
    std::reverse(shuffled.negatives[0].begin(), shuffled.negatives[0].end());
    std::swap(shuffled.negatives[1][0], shuffled.negatives[1][3]);
    Graph<double> g4;
    const double reordered = g4.value(contrastive_loss(g4, g4.constant(aug), g4.constant(tgt), plan, 0.5))[0];
    CHECK(std::abs(reordered - base) < 1e-9);
  }
}

TEST_CASE("contrastive loss error paths") {
  Graph<double> g;
  Tensor<double> aug = Tensor<double>::full({2, 3}, 1.0);
  Tensor<double> tgt = Tensor<double>::full({2, 3}, 1.0);

  SECTION("empty anchors") {
    ContrastivePlan plan;
    CHECK_THROWS_AS(contrastive_loss(g, g.constant(aug), g.constant(tgt), plan, 0.1), std::invalid_argument);
  }

  SECTION("zero-norm vector") {
    Tensor<double> zero_tgt = Tensor<double>::zeros({2, 3});
    ContrastivePlan plan;
    plan.anchors = {0};
    plan.positives = {1};
    plan.negatives = {{}};
    CHECK_THROWS_AS(contrastive_loss(g, g.constant(aug), g.constant(zero_tgt), plan, 0.1), std::domain_error);
  }
}

TEST_CASE("contrastive plan: anchor rule, alignment and negative sampling") {
  MaskPlan mask;
  mask.num_frames = 32;
  mask.spans = {{4, 8}, {20, 6}};  // frames 4..11 and 20..25
  const int t_ds = downsampled_len(32);  // 8

  const auto anchors = masked_downsampled_indices(mask, t_ds);
  // ds windows: [0,4) none; [4,8) all masked; [8,12) all; [12,16) none;
  // [16,20) none; [20,24) all; [24,28) half (24,25); [28,32) none
  CHECK(anchors == std::vector<int>{1, 2, 5, 6});

  ContrastiveConfig cfg;
  cfg.negatives = 2;
  std::mt19937_64 rng(3);
  const auto plan = build_contrastive_plan(mask, t_ds, AlignmentMap::identity(t_ds), cfg, rng);
  REQUIRE(plan.anchors == anchors);
  REQUIRE(plan.positives == anchors);  // identity alignment
  for (size_t i = 0; i < plan.anchors.size(); ++i) {
    CHECK(plan.negatives[i].size() == 2);
    for (int n : plan.negatives[i]) {
      CHECK(n != plan.positives[i]);
      CHECK(std::count(plan.masked_target_set.begin(), plan.masked_target_set.end(), n) == 1);
    }
    // no duplicates within one anchor's negatives
    CHECK(plan.negatives[i][0] != plan.negatives[i][1]);
  }

  SECTION("negatives clamp to the available pool") {
    ContrastiveConfig big;
    big.negatives = 50;
    std::mt19937_64 r2(4);
    const auto p2 = build_contrastive_plan(mask, t_ds, AlignmentMap::identity(t_ds), big, r2);
    for (size_t i = 0; i < p2.anchors.size(); ++i) {
      CHECK(p2.negatives[i].size() == p2.masked_target_set.size() - 1);
    }
  }
}

TEST_CASE("joint logits Eq-form") {
  SECTION("all-zero weights and biases give the zero vector") {
    JointConfig jcfg;
    jcfg.hidden_dim = 5;
    JointNetwork<double> joint("joint", jcfg, 4, 3);
    ParameterStore<double> store;
    std::mt19937_64 rng(1);
    joint.create_params(store, rng);
    for (auto& p : store.all()) std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
    Graph<double> g;
    GraphBinding<double> bind(g, store);
    const Var out = joint.forward_grid(bind, g.constant(Tensor<double>::randn({2, 4}, rng)),
                                       g.constant(Tensor<double>::randn({3, 4}, rng)));
    CHECK(g.value(out).max_abs() == 0.0);
  }

  SECTION("identity linears with a = -l give tanh(0) = 0") {
    JointConfig jcfg;
    jcfg.hidden_dim = 4;
    JointNetwork<double> joint("joint", jcfg, 4, 4);
    ParameterStore<double> store;
    std::mt19937_64 rng(2);
    joint.create_params(store, rng);
    for (auto& p : store.all()) {
      std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
      if (p.value.rank() == 2 && p.value.rows() == 4 && p.value.cols() == 4) {
        for (int i = 0; i < 4; ++i) p.value.at(i, i) = 1.0;
      }
    }
    Graph<double> g;
    GraphBinding<double> bind(g, store);
    Tensor<double> a = Tensor<double>::randn({2, 4}, rng);
    Tensor<double> l = a;
    for (auto& v : l.data) v = -v;
    const Var out = joint.forward_grid(bind, g.constant(a), g.constant(l));
    // rows where the label row is the negation of the acoustic row: t == u
    const auto& o = g.value(out);
    for (int t = 0; t < 2; ++t) {
      for (int v = 0; v < 4; ++v) CHECK(std::abs(o.at(t * 2 + t, v)) < 1e-15);
    }
  }

  SECTION("gradients wrt all six tensors pass finite differences") {
    JointConfig jcfg;
    jcfg.hidden_dim = 6;
    JointNetwork<double> joint("joint", jcfg, 5, 4);
    ParameterStore<double> store;
    std::mt19937_64 rng(3);
    joint.create_params(store, rng);
    std::mt19937_64 drng(4);
    const Tensor<double> a = Tensor<double>::randn({3, 5}, drng);
    const Tensor<double> l = Tensor<double>::randn({2, 5}, drng);
    const Tensor<double> c = Tensor<double>::randn({3 * 2, 4}, drng);

    std::vector<Tensor<double>*> params;
    std::vector<std::string> names;
    for (auto& p : store.all()) {
      params.push_back(&p.value);
      names.push_back(p.name);
    }
    REQUIRE(params.size() == 6);

    auto loss_value = [&]() {
      Graph<double> g;
      GraphBinding<double> bind(g, store);
      const Var out = joint.forward_grid(bind, g.constant(a), g.constant(l));
      return g.value(g.sum(g.mul(out, g.constant(c))))[0];
    };
    auto grads = [&]() {
      Graph<double> g;
      GraphBinding<double> bind(g, store);
      const Var out = joint.forward_grid(bind, g.constant(a), g.constant(l));
      g.backward(g.sum(g.mul(out, g.constant(c))));
      std::unordered_map<std::string, Tensor<double>> gm;
      bind.accumulate_grads(gm);
      std::vector<Tensor<double>> ordered;
      for (const auto& n : names) ordered.push_back(gm.at(n));
      return ordered;
    };
    const auto res = grad_check(params, loss_value, grads, 1e-5, names);
    CHECK(res.max_rel_error < 1e-5);
  }
}

TEST_CASE("total loss combination") {
  Graph<double> g;
  const Var rnnt = g.leaf(Tensor<double>::scalar(2.0), true);
  const Var contrastive = g.leaf(Tensor<double>::scalar(0.5), true);

  LossWeights w;
  w.lambda_unsup = 1.0;
  CHECK(g.value(total_loss(g, rnnt, contrastive, w))[0] == Catch::Approx(2.5));

  w.lambda_unsup = 0.0;
  Graph<double> g2;
  const Var r2 = g2.leaf(Tensor<double>::scalar(2.0), true);
  const Var c2 = g2.leaf(Tensor<double>::scalar(0.5), true);
  CHECK(g2.value(total_loss(g2, r2, c2, w))[0] == Catch::Approx(2.0));

  // gradient is the sum of component gradients
  w.lambda_unsup = 3.0;
  Graph<double> g3;
  const Var r3 = g3.leaf(Tensor<double>::scalar(2.0), true);
  const Var c3 = g3.leaf(Tensor<double>::scalar(0.5), true);
  g3.backward(total_loss(g3, r3, c3, w));
  CHECK(g3.grad(r3)[0] == Catch::Approx(1.0));
  CHECK(g3.grad(c3)[0] == Catch::Approx(3.0));
}
