// tests/test_grad_suite.cpp
//
// Per-op finite-difference checks plus the four-component f64 suite.

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "csiam/grad_suite.hpp"

using namespace csiam;

namespace {

// Checks d(sum(weights * op(inputs)))/d inputs against central differences.
double check_op(const std::function<Var(Graph<double>&, const std::vector<Var>&)>& op,
                std::vector<Tensor<double>> inputs, uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor<double> weights;  // filled lazily once the output shape is known

  auto build = [&](Graph<double>& g, std::vector<Var>& vars) {
    vars.clear();
    for (const auto& t : inputs) vars.push_back(g.leaf(t, true));
    Var out = op(g, vars);
    if (weights.numel() == 0) weights = Tensor<double>::randn(g.value(out).shape, rng);
    return g.sum(g.mul(out, g.constant(weights)));
  };

  auto loss_value = [&]() {
    Graph<double> g;
    std::vector<Var> vars;
    return g.value(build(g, vars))[0];
  };
  auto grads = [&]() {
    Graph<double> g;
    std::vector<Var> vars;
    g.backward(build(g, vars));
    std::vector<Tensor<double>> out;
    for (Var v : vars) out.push_back(g.grad(v));
    return out;
  };

  std::vector<Tensor<double>*> ptrs;
  for (auto& t : inputs) ptrs.push_back(&t);
  return grad_check(ptrs, loss_value, grads, 1e-5).max_rel_error;
}

Tensor<double> randn(Shape s, uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  return Tensor<double>::randn(std::move(s), rng, scale);
}

}  // namespace

TEST_CASE("every differentiable op passes finite differences at 1e-5") {
  const double tol = 1e-5;

  CHECK(check_op([](auto& g, const auto& v) { return g.add(v[0], v[1]); }, {randn({3, 4}, 1), randn({3, 4}, 2)}, 50) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.sub(v[0], v[1]); }, {randn({3, 4}, 3), randn({3, 4}, 4)}, 51) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.mul(v[0], v[1]); }, {randn({3, 4}, 5), randn({3, 4}, 6)}, 52) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.add_rowwise(v[0], v[1]); }, {randn({3, 4}, 7), randn({4}, 8)}, 53) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.scale(v[0], 2.5); }, {randn({5}, 9)}, 54) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.matmul(v[0], v[1]); }, {randn({3, 4}, 10), randn({4, 2}, 11)}, 55) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.matmul_nt(v[0], v[1]); }, {randn({3, 4}, 12), randn({5, 4}, 13)}, 56) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.tanh_(v[0]); }, {randn({6}, 14)}, 57) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.relu(v[0]); }, {randn({12}, 15)}, 58) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.gelu(v[0]); }, {randn({12}, 16)}, 59) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.exp_(v[0]); }, {randn({6}, 17)}, 60) < tol);

  Tensor<double> positive = randn({6}, 18);
  for (auto& x : positive.data) x = std::abs(x) + 0.5;
  CHECK(check_op([](auto& g, const auto& v) { return g.log_(v[0]); }, {positive}, 61) < tol);

  CHECK(check_op([](auto& g, const auto& v) { return g.softmax_rows(v[0]); }, {randn({3, 5}, 19)}, 62) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.log_softmax_rows(v[0]); }, {randn({3, 5}, 20)}, 63) < tol);

  Tensor<double> gain = randn({4}, 21, 0.3);
  for (auto& x : gain.data) x += 1.0;
  CHECK(check_op([](auto& g, const auto& v) { return g.layer_norm(v[0], v[1], v[2]); },
                 {randn({3, 4}, 22), gain, randn({4}, 23, 0.2)}, 64) < tol);

  CHECK(check_op([](auto& g, const auto& v) { return g.conv1d(v[0], v[1], v[2], 2); },
                 {randn({9, 3}, 24), randn({3, 3, 5}, 25), randn({5}, 26)}, 65) < tol);

  CHECK(check_op([](auto& g, const auto& v) { return g.gather_rows(v[0], {2, 0, 2, 1}); }, {randn({4, 3}, 27)}, 66) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.pick_rows(v[0], {1, 0, 2}); }, {randn({3, 4}, 28)}, 67) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.slice_rows(v[0], 1, 2); }, {randn({5, 3}, 29)}, 68) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.slice_cols(v[0], 1, 2); }, {randn({3, 5}, 30)}, 69) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.concat_rows({v[0], v[1]}); },
                 {randn({2, 3}, 31), randn({4, 3}, 32)}, 70) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.concat_cols({v[0], v[1]}); },
                 {randn({3, 2}, 33), randn({3, 4}, 34)}, 71) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.reshape(v[0], {6, 2}); }, {randn({3, 4}, 35)}, 72) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.outer_add(v[0], v[1]); },
                 {randn({3, 4}, 36), randn({2, 4}, 37)}, 73) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.row(v[0], 1); }, {randn({3, 4}, 38)}, 74) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.index(v[0], 2); }, {randn({5}, 39)}, 75) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.sum(v[0]); }, {randn({7}, 40)}, 76) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.mean(v[0]); }, {randn({7}, 41)}, 77) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.cosine_similarity(v[0], v[1]); },
                 {randn({6}, 42), randn({6}, 43)}, 78) < tol);
  CHECK(check_op(
            [](auto& g, const auto& v) {
              std::mt19937_64 rng(123);  // same mask on every evaluation
              return g.dropout(v[0], 0.3, rng);
            },
            {randn({8, 4}, 44)}, 79) < tol);
  CHECK(check_op([](auto& g, const auto& v) { return g.stack_scalars({g.index(v[0], 0), g.index(v[0], 3)}); },
                 {randn({5}, 45)}, 80) < tol);
}

TEST_CASE("three-layer MLP gradients vs central differences") {
  std::mt19937_64 rng(101);
  Tensor<double> w1 = Tensor<double>::randn({6, 8}, rng, 0.5);
  Tensor<double> b1 = Tensor<double>::randn({8}, rng, 0.1);
  Tensor<double> w2 = Tensor<double>::randn({8, 8}, rng, 0.5);
  Tensor<double> b2 = Tensor<double>::randn({8}, rng, 0.1);
  Tensor<double> w3 = Tensor<double>::randn({8, 3}, rng, 0.5);
  Tensor<double> b3 = Tensor<double>::randn({3}, rng, 0.1);
  const Tensor<double> x = Tensor<double>::randn({4, 6}, rng);

  auto forward = [&](Graph<double>& g, std::vector<Var>& vars) {
    vars = {g.leaf(w1, true), g.leaf(b1, true), g.leaf(w2, true),
            g.leaf(b2, true), g.leaf(w3, true), g.leaf(b3, true)};
    Var h = g.tanh_(g.add_rowwise(g.matmul(g.constant(x), vars[0]), vars[1]));
    h = g.gelu(g.add_rowwise(g.matmul(h, vars[2]), vars[3]));
    h = g.add_rowwise(g.matmul(h, vars[4]), vars[5]);
    return g.mean(g.mul(h, h));
  };

  auto loss_value = [&]() {
    Graph<double> g;
    std::vector<Var> vars;
    return g.value(forward(g, vars))[0];
  };
  auto grads = [&]() {
    Graph<double> g;
    std::vector<Var> vars;
    g.backward(forward(g, vars));
    std::vector<Tensor<double>> out;
    for (Var v : vars) out.push_back(g.grad(v));
    return out;
  };
  const auto res = grad_check({&w1, &b1, &w2, &b2, &w3, &b3}, loss_value, grads, 1e-5);
  CHECK(res.max_rel_error < 1e-6);
}

TEST_CASE("full gradient suite passes its tolerances") {
  const auto report = run_grad_suite();
  REQUIRE(report.size() == 4);
  for (const auto& c : report) {
    INFO(c.name << " max rel error " << c.max_rel_error << " vs tolerance " << c.tolerance);
    CHECK(c.passed());
  }
}

TEST_CASE("grad suite component filter") {
  const auto only_rnnt = run_grad_suite("rnnt");
  REQUIRE(only_rnnt.size() == 1);
  CHECK(only_rnnt[0].name == "rnnt");
  CHECK_THROWS_AS(run_grad_suite("bogus"), std::invalid_argument);
}
