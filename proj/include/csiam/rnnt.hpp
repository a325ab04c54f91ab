// csiam/rnnt.hpp
//
// Transducer loss: -log P(labels | acoustics) marginalized over all monotonic
// blank/label alignment paths. The forward (alpha) recursion in log space
// gives the loss; the backward (beta) recursion gives the analytic gradient
// wrt the joint logits, installed as a fused op on the tape.
//
// The DP always runs in f64 regardless of the tape scalar; the transducer
// lattice underflows in linear space and loses digits in f32.

#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "csiam/graph.hpp"
#include "csiam/tensor.hpp"

namespace csiam {

// Lattice of joint logits. `logits` is the [T*(U+1), V] grid node (row
// t*(U+1)+u) produced by JointNetwork::forward_grid.
struct RnntLattice {
  Var logits;
  int t_len = 0;  // downsampled acoustic length T
  int u_len = 0;  // number of labels U
  int vocab = 0;
  int blank_id = 0;
  std::vector<int> labels;  // length U, blank excluded
};

namespace rnnt_detail {

inline double logaddexp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

struct Dp {
  int T, U, V, blank;
  std::vector<int> labels;
  std::vector<double> logp;  // [T*(U+1), V] log-softmax of the joint logits

  double lp(int t, int u, int v) const { return logp[(static_cast<size_t>(t) * (U + 1) + u) * V + v]; }

  // alpha(t,u): log prob of consuming t blanks' worth of time and u labels
  std::vector<double> alphas() const {
    const double ninf = -std::numeric_limits<double>::infinity();
    std::vector<double> a(static_cast<size_t>(T) * (U + 1), ninf);
    auto at = [&](int t, int u) -> double& { return a[static_cast<size_t>(t) * (U + 1) + u]; };
    at(0, 0) = 0.0;
    for (int t = 0; t < T; ++t) {
      for (int u = 0; u <= U; ++u) {
        if (t == 0 && u == 0) continue;
        double acc = ninf;
        if (t > 0) acc = logaddexp(acc, at(t - 1, u) + lp(t - 1, u, blank));
        if (u > 0) acc = logaddexp(acc, at(t, u - 1) + lp(t, u - 1, labels[static_cast<size_t>(u) - 1]));
        at(t, u) = acc;
      }
    }
    return a;
  }

  // beta(t,u): log prob of completing the transcript from state (t,u)
  std::vector<double> betas() const {
    const double ninf = -std::numeric_limits<double>::infinity();
    std::vector<double> b(static_cast<size_t>(T) * (U + 1), ninf);
    auto at = [&](int t, int u) -> double& { return b[static_cast<size_t>(t) * (U + 1) + u]; };
    for (int t = T - 1; t >= 0; --t) {
      for (int u = U; u >= 0; --u) {
        double acc = ninf;
        const double blank_next = (t + 1 < T) ? at(t + 1, u) : (u == U ? 0.0 : ninf);
        if (blank_next != ninf) acc = logaddexp(acc, lp(t, u, blank) + blank_next);
        if (u < U) acc = logaddexp(acc, lp(t, u, labels[static_cast<size_t>(u)]) + at(t, u + 1));
        at(t, u) = acc;
      }
    }
    return b;
  }

  double log_prob() const {
    const auto a = alphas();
    return a[static_cast<size_t>(T - 1) * (U + 1) + U] + lp(T - 1, U, blank);
  }

  // d(-logP)/d logits, via occupation probabilities and the softmax chain.
  Tensor<double> grad_logits() const {
    const double ninf = -std::numeric_limits<double>::infinity();
    const auto a = alphas();
    const auto b = betas();
    const double logp_total = b[0];
    Tensor<double> grad({T * (U + 1), V});
    for (int t = 0; t < T; ++t) {
      for (int u = 0; u <= U; ++u) {
        const size_t cell = static_cast<size_t>(t) * (U + 1) + u;
        const double alpha = a[cell];
        if (alpha == ninf) continue;
        const double beta_blank = (t + 1 < T) ? b[cell + static_cast<size_t>(U) + 1] : (u == U ? 0.0 : ninf);
        double g_blank = 0.0, g_label = 0.0;
        if (beta_blank != ninf) g_blank = -std::exp(alpha + lp(t, u, blank) + beta_blank - logp_total);
        int label_v = -1;
        if (u < U) {
          label_v = labels[static_cast<size_t>(u)];
          const double beta_label = b[cell + 1];
          if (beta_label != ninf) g_label = -std::exp(alpha + lp(t, u, label_v) + beta_label - logp_total);
        }
        const double gsum = g_blank + g_label;
        const int64_t off = static_cast<int64_t>(cell) * V;
        for (int v = 0; v < V; ++v) {
          double gv = -std::exp(lp(t, u, v)) * gsum;  // softmax chain term
          if (v == blank) gv += g_blank;
          if (v == label_v) gv += g_label;
          grad[off + v] = gv;
        }
      }
    }
    return grad;
  }
};

template <typename Real>
Dp make_dp(const Tensor<Real>& logits, int T, int U, int V, int blank, const std::vector<int>& labels) {
  Dp dp{T, U, V, blank, labels, {}};
  dp.logp.resize(static_cast<size_t>(T) * (U + 1) * V);
  for (int64_t row = 0; row < static_cast<int64_t>(T) * (U + 1); ++row) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int v = 0; v < V; ++v) mx = std::max(mx, static_cast<double>(logits[row * V + v]));
    double s = 0.0;
    for (int v = 0; v < V; ++v) s += std::exp(static_cast<double>(logits[row * V + v]) - mx);
    const double lse = mx + std::log(s);
    for (int v = 0; v < V; ++v) dp.logp[static_cast<size_t>(row) * V + v] = static_cast<double>(logits[row * V + v]) - lse;
  }
  return dp;
}

}  // namespace rnnt_detail

template <typename Real>
Var rnnt_loss(Graph<Real>& g, const RnntLattice& lattice) {
  const Tensor<Real>& logits = g.value(lattice.logits);
  const int T = lattice.t_len, U = lattice.u_len, V = lattice.vocab;
  if (T < 1) throw std::invalid_argument("rnnt_loss needs at least one acoustic frame");
  if (V < 2) throw std::invalid_argument("rnnt_loss needs vocab > 1");
  if (static_cast<int>(lattice.labels.size()) != U) throw std::invalid_argument("rnnt_loss label length mismatch");
  if (lattice.blank_id < 0 || lattice.blank_id >= V) throw std::invalid_argument("rnnt_loss blank id out of range");
  for (int l : lattice.labels) {
    if (l < 0 || l >= V || l == lattice.blank_id) {
      throw std::invalid_argument("rnnt_loss labels must be non-blank vocabulary ids");
    }
  }
  if (logits.rank() != 2 || logits.rows() != T * (U + 1) || logits.cols() != V) {
    throw std::invalid_argument("rnnt_loss lattice shape mismatch: " + shape_str(logits.shape));
  }
  if (!logits.all_finite()) throw std::domain_error("rnnt_loss: non-finite logits");

  const auto dp = rnnt_detail::make_dp(logits, T, U, V, lattice.blank_id, lattice.labels);
  const double loss = -dp.log_prob();
  const int blank = lattice.blank_id;
  const std::vector<int> labels = lattice.labels;
  return g.custom(Tensor<Real>::scalar(static_cast<Real>(loss)), {lattice.logits.id},
                  [T, U, V, blank, labels](Graph<Real>& gg, int id) {
                    const Real upstream = gg.nodes_[static_cast<size_t>(id)].grad[0];
                    const int parent = gg.nodes_[static_cast<size_t>(id)].parents[0];
                    if (auto* gl = gg.grad_buf(parent)) {
                      const auto dp2 = rnnt_detail::make_dp(gg.nodes_[static_cast<size_t>(parent)].value, T, U, V,
                                                            blank, labels);
                      const Tensor<double> grad = dp2.grad_logits();
                      for (int64_t i = 0; i < grad.numel(); ++i) {
                        (*gl)[i] += upstream * static_cast<Real>(grad[i]);
                      }
                    }
                  });
}

// Loss value for a raw logits tensor without tape mechanics; handy for
// decoding diagnostics and test oracles built on the same DP.
template <typename Real>
double rnnt_loss_value(const Tensor<Real>& logits, int T, int U, int V, int blank, const std::vector<int>& labels) {
  return -rnnt_detail::make_dp(logits, T, U, V, blank, labels).log_prob();
}

}  // namespace csiam
