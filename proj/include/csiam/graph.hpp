// csiam/graph.hpp
//
// Reverse-mode automatic differentiation on a dynamic tape. A Graph is built
// per forward pass; backward() walks the tape once in reverse creation order
// (parents are always created before children, so creation order is a
// topological order). One backward per tape; a second call is an error.
//
// stop_gradient() is first class: the result node has no parents, so no
// gradient can ever reach the ancestors of its argument.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "csiam/tensor.hpp"

namespace csiam {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename Real>
class Graph {
 public:
  using Pullback = std::function<void(Graph&, int)>;

  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;  // allocated on first gradient write
    std::vector<int> parents;
    Pullback pullback;
    bool requires_grad = false;
  };

  Graph() { nodes_.reserve(256); }

  // Test-only: when set, stop_gradient behaves as identity (used to prove the
  // stop-gradient path is live in the siamese loss).
  void set_stop_gradient_bypass(bool on) { stop_gradient_bypass_ = on; }

  int size() const { return static_cast<int>(nodes_.size()); }
  const Tensor<Real>& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  // Gradient of the last backward() wrt node v; zeros if no gradient reached v.
  Tensor<Real> grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.numel() == 0) return Tensor<Real>::zeros(n.value.shape);
    return n.grad;
  }

  Var leaf(Tensor<Real> value, bool needs_grad) {
    return push(std::move(value), {}, nullptr, needs_grad);
  }

  Var constant(Tensor<Real> value) { return leaf(std::move(value), false); }

  Var scalar_const(Real v) { return constant(Tensor<Real>::scalar(v)); }

  // ---------------------------------------------------------------- add/sub
  Var add(Var a, Var b) {
    const auto& x = val(a);
    const auto& y = val(b);
    check_same_shape("add", x, y);
    Tensor<Real> out = x;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += y[i];
    return push(std::move(out), {a.id, b.id}, [](Graph& g, int id) {
      const auto& gy = g.nodes_[id].grad;
      g.accum_same(g.nodes_[id].parents[0], gy);
      g.accum_same(g.nodes_[id].parents[1], gy);
    });
  }

  Var sub(Var a, Var b) {
    const auto& x = val(a);
    const auto& y = val(b);
    check_same_shape("sub", x, y);
    Tensor<Real> out = x;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= y[i];
    return push(std::move(out), {a.id, b.id}, [](Graph& g, int id) {
      const auto& gy = g.nodes_[id].grad;
      g.accum_same(g.nodes_[id].parents[0], gy);
      if (auto* gb = g.grad_buf(g.nodes_[id].parents[1])) {
        for (int64_t i = 0; i < gy.numel(); ++i) (*gb)[i] -= gy[i];
      }
    });
  }

  // x: [T,D], b: [D]; adds b to every row.
  Var add_rowwise(Var a, Var b) {
    const auto& x = val(a);
    const auto& bias = val(b);
    if (x.rank() != 2 || bias.rank() != 1 || x.cols() != bias.dim(0)) {
      fail("add_rowwise", x, bias);
    }
    Tensor<Real> out = x;
    const int T = x.rows(), D = x.cols();
    for (int t = 0; t < T; ++t)
      for (int d = 0; d < D; ++d) out.at(t, d) += bias[d];
    return push(std::move(out), {a.id, b.id}, [T, D](Graph& g, int id) {
      const auto& gy = g.nodes_[id].grad;
      g.accum_same(g.nodes_[id].parents[0], gy);
      if (auto* gb = g.grad_buf(g.nodes_[id].parents[1])) {
        for (int t = 0; t < T; ++t)
          for (int d = 0; d < D; ++d) (*gb)[d] += gy[static_cast<int64_t>(t) * D + d];
      }
    });
  }

  Var mul(Var a, Var b) {
    const auto& x = val(a);
    const auto& y = val(b);
    check_same_shape("mul", x, y);
    Tensor<Real> out = x;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= y[i];
    return push(std::move(out), {a.id, b.id}, [](Graph& g, int id) {
      const auto& gy = g.nodes_[id].grad;
      const auto& xa = g.nodes_[g.nodes_[id].parents[0]].value;
      const auto& xb = g.nodes_[g.nodes_[id].parents[1]].value;
      if (auto* ga = g.grad_buf(g.nodes_[id].parents[0])) {
        for (int64_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i] * xb[i];
      }
      if (auto* gb = g.grad_buf(g.nodes_[id].parents[1])) {
        for (int64_t i = 0; i < gy.numel(); ++i) (*gb)[i] += gy[i] * xa[i];
      }
    });
  }

  Var scale(Var a, Real c) {
    Tensor<Real> out = val(a);
    for (auto& v : out.data) v *= c;
    return push(std::move(out), {a.id}, [c](Graph& g, int id) {
      const auto& gy = g.nodes_[id].grad;
      if (auto* ga = g.grad_buf(g.nodes_[id].parents[0])) {
        for (int64_t i = 0; i < gy.numel(); ++i) (*ga)[i] += c * gy[i];
      }
    });
  }

  Var neg(Var a) { return scale(a, Real(-1)); }

  Var add_scalar(Var a, Real c) {
    Tensor<Real> out = val(a);
    for (auto& v : out.data) v += c;
    return push(std::move(out), {a.id}, [](Graph& g, int id) {
      g.accum_same(g.nodes_[id].parents[0], g.nodes_[id].grad);
    });
  }

  // ---------------------------------------------------------------- matmul
  // C = A([m,k]) * B([k,n])
  Var matmul(Var a, Var b) {
    const auto& x = val(a);
    const auto& y = val(b);
    if (x.rank() != 2 || y.rank() != 2 || x.cols() != y.rows()) fail("matmul", x, y);
    const int m = x.rows(), k = x.cols(), n = y.cols();
    Tensor<Real> out({m, n});
    gemm(x.data.data(), y.data.data(), out.data.data(), m, k, n);
    return push(std::move(out), {a.id, b.id}, [m, k, n](Graph& g, int id) {
      const auto& gc = g.nodes_[id].grad;
      const auto& xa = g.nodes_[g.nodes_[id].parents[0]].value;
      const auto& xb = g.nodes_[g.nodes_[id].parents[1]].value;
      if (auto* ga = g.grad_buf(g.nodes_[id].parents[0])) {
        // gA += gC * B^T
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const Real gij = gc[static_cast<int64_t>(i) * n + j];
            if (gij == Real(0)) continue;
            for (int p = 0; p < k; ++p)
              (*ga)[static_cast<int64_t>(i) * k + p] += gij * xb[static_cast<int64_t>(p) * n + j];
          }
      }
      if (auto* gb = g.grad_buf(g.nodes_[id].parents[1])) {
        // gB += A^T * gC
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            const Real aip = xa[static_cast<int64_t>(i) * k + p];
            if (aip == Real(0)) continue;
            for (int j = 0; j < n; ++j)
              (*gb)[static_cast<int64_t>(p) * n + j] += aip * gc[static_cast<int64_t>(i) * n + j];
          }
      }
    });
  }

  // C = A([m,k]) * B([n,k])^T
  Var matmul_nt(Var a, Var b) {
    const auto& x = val(a);
    const auto& y = val(b);
    if (x.rank() != 2 || y.rank() != 2 || x.cols() != y.cols()) fail("matmul_nt", x, y);
    const int m = x.rows(), k = x.cols(), n = y.rows();
    Tensor<Real> out({m, n});
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        Real s = 0;
        const Real* xi = x.data.data() + static_cast<int64_t>(i) * k;
        const Real* yj = y.data.data() + static_cast<int64_t>(j) * k;
        for (int p = 0; p < k; ++p) s += xi[p] * yj[p];
        out.at(i, j) = s;
      }
    return push(std::move(out), {a.id, b.id}, [m, k, n](Graph& g, int id) {
      const auto& gc = g.nodes_[id].grad;
      const auto& xa = g.nodes_[g.nodes_[id].parents[0]].value;
      const auto& xb = g.nodes_[g.nodes_[id].parents[1]].value;
      if (auto* ga = g.grad_buf(g.nodes_[id].parents[0])) {
        // gA += gC * B
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const Real gij = gc[static_cast<int64_t>(i) * n + j];
            if (gij == Real(0)) continue;
            for (int p = 0; p < k; ++p)
              (*ga)[static_cast<int64_t>(i) * k + p] += gij * xb[static_cast<int64_t>(j) * k + p];
          }
      }
      if (auto* gb = g.grad_buf(g.nodes_[id].parents[1])) {
        // gB += gC^T * A
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const Real gij = gc[static_cast<int64_t>(i) * n + j];
            if (gij == Real(0)) continue;
            for (int p = 0; p < k; ++p)
              (*gb)[static_cast<int64_t>(j) * k + p] += gij * xa[static_cast<int64_t>(i) * k + p];
          }
      }
    });
  }

  // ---------------------------------------------------------- elementwise
  Var tanh_(Var a) {
    Tensor<Real> out = val(a);
    for (auto& v : out.data) v = std::tanh(v);
    return push(std::move(out), {a.id}, [](Graph& g, int id) {
      const auto& gy = g.nodes_[id].grad;
      const auto& y = g.nodes_[id].value;
      if (auto* ga = g.grad_buf(g.nodes_[id].parents[0])) {
        for (int64_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i] * (Real(1) - y[i] * y[i]);
      }
    });
  }

  Var relu(Var a) {
    Tensor<Real> out = val(a);
    for (auto& v : out.data) v = v > Real(0) ? v : Real(0);
    return push(std::move(out), {a.id}, [](Graph& g, int id) {
      const auto& gy = g.nodes_[id].grad;
      const auto& x = g.nodes_[g.nodes_[id].parents[0]].value;
      if (auto* ga = g.grad_buf(g.nodes_[id].parents[0])) {
        for (int64_t i = 0; i < gy.numel(); ++i) (*ga)[i] += x[i] > Real(0) ? gy[i] : Real(0);
      }
    });
  }

  Var gelu(Var a) {
    Tensor<Real> out = val(a);
    for (auto& v : out.data) {
      const double x = static_cast<double>(v);
      v = static_cast<Real>(0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))));
    }
    return push(std::move(out), {a.id}, [](Graph& g, int id) {
      const auto& gy = g.nodes_[id].grad;
      const auto& xin = g.nodes_[g.nodes_[id].parents[0]].value;
      if (auto* ga = g.grad_buf(g.nodes_[id].parents[0])) {
        for (int64_t i = 0; i < gy.numel(); ++i) {
          const double x = static_cast<double>(xin[i]);
          const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
          const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
          (*ga)[i] += gy[i] * static_cast<Real>(cdf + x * pdf);
        }
      }
    });
  }

  Var exp_(Var a) {
    Tensor<Real> out = val(a);
    for (auto& v : out.data) v = std::exp(v);
    return push(std::move(out), {a.id}, [](Graph& g, int id) {
      const auto& gy = g.nodes_[id].grad;
      const auto& y = g.nodes_[id].value;
      if (auto* ga = g.grad_buf(g.nodes_[id].parents[0])) {
        for (int64_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i] * y[i];
      }
    });
  }

  Var log_(Var a) {
    Tensor<Real> out = val(a);
    for (auto& v : out.data) {
      if (!(v > Real(0))) throw std::domain_error("log of non-positive value");
      v = std::log(v);
    }
    return push(std::move(out), {a.id}, [](Graph& g, int id) {
      const auto& gy = g.nodes_[id].grad;
      const auto& x = g.nodes_[g.nodes_[id].parents[0]].value;
      if (auto* ga = g.grad_buf(g.nodes_[id].parents[0])) {
        for (int64_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i] / x[i];
      }
    });
  }

  // ------------------------------------------------------------- softmax
  // Row softmax; rank-1 input is treated as a single row. Max-subtracted.
  Var softmax_rows(Var a) {
    const auto rc = rows_cols(val(a));
    const int rows = rc.first, cols = rc.second;
    Tensor<Real> out = val(a);
    for (int r = 0; r < rows; ++r) softmax_row(out.data.data() + static_cast<int64_t>(r) * cols, cols);
    return push(std::move(out), {a.id}, [rows, cols](Graph& g, int id) {
      const auto& gy = g.nodes_[id].grad;
      const auto& y = g.nodes_[id].value;
      if (auto* ga = g.grad_buf(g.nodes_[id].parents[0])) {
        for (int r = 0; r < rows; ++r) {
          const int64_t off = static_cast<int64_t>(r) * cols;
          Real dot = 0;
          for (int c = 0; c < cols; ++c) dot += gy[off + c] * y[off + c];
          for (int c = 0; c < cols; ++c) (*ga)[off + c] += y[off + c] * (gy[off + c] - dot);
        }
      }
    });
  }

  Var log_softmax_rows(Var a) {
    const auto rc = rows_cols(val(a));
    const int rows = rc.first, cols = rc.second;
    Tensor<Real> out = val(a);
    for (int r = 0; r < rows; ++r) {
      Real* p = out.data.data() + static_cast<int64_t>(r) * cols;
      log_softmax_row(p, cols);
    }
    return push(std::move(out), {a.id}, [rows, cols](Graph& g, int id) {
      const auto& gy = g.nodes_[id].grad;
      const auto& y = g.nodes_[id].value;  // log-probabilities
      if (auto* ga = g.grad_buf(g.nodes_[id].parents[0])) {
        for (int r = 0; r < rows; ++r) {
          const int64_t off = static_cast<int64_t>(r) * cols;
          Real gsum = 0;
          for (int c = 0; c < cols; ++c) gsum += gy[off + c];
          for (int c = 0; c < cols; ++c) (*ga)[off + c] += gy[off + c] - std::exp(y[off + c]) * gsum;
        }
      }
    });
  }

  // ------------------------------------------------------------ layer norm
  // Normalizes each row of x [T,D]; gain/bias are [D].
  Var layer_norm(Var a, Var gain, Var bias, Real eps = Real(1e-5)) {
    const auto& x = val(a);
    const auto& gv = val(gain);
    const auto& bv = val(bias);
    if (x.rank() != 2 || gv.rank() != 1 || bv.rank() != 1 || gv.dim(0) != x.cols() || bv.dim(0) != x.cols()) {
      fail("layer_norm", x, gv);
    }
    const int T = x.rows(), D = x.cols();
    Tensor<Real> out({T, D});
    Tensor<Real> xhat({T, D});
    std::vector<Real> inv_sigma(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) {
      Real mu = 0;
      for (int d = 0; d < D; ++d) mu += x.at(t, d);
      mu /= Real(D);
      Real var = 0;
      for (int d = 0; d < D; ++d) {
        const Real c = x.at(t, d) - mu;
        var += c * c;
      }
      var /= Real(D);
      const Real is = Real(1) / std::sqrt(var + eps);
      inv_sigma[static_cast<size_t>(t)] = is;
      for (int d = 0; d < D; ++d) {
        const Real xh = (x.at(t, d) - mu) * is;
        xhat.at(t, d) = xh;
        out.at(t, d) = xh * gv[d] + bv[d];
      }
    }
    return push(std::move(out), {a.id, gain.id, bias.id},
                [T, D, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](Graph& g, int id) {
                  const auto& gy = g.nodes_[id].grad;
                  const auto& gv = g.nodes_[g.nodes_[id].parents[1]].value;
                  if (auto* ga = g.grad_buf(g.nodes_[id].parents[0])) {
                    for (int t = 0; t < T; ++t) {
                      const int64_t off = static_cast<int64_t>(t) * D;
                      Real m1 = 0, m2 = 0;  // mean(g*dy), mean(g*dy*xhat)
                      for (int d = 0; d < D; ++d) {
                        const Real gd = gy[off + d] * gv[d];
                        m1 += gd;
                        m2 += gd * xhat[off + d];
                      }
                      m1 /= Real(D);
                      m2 /= Real(D);
                      const Real is = inv_sigma[static_cast<size_t>(t)];
                      for (int d = 0; d < D; ++d) {
                        const Real gd = gy[off + d] * gv[d];
                        (*ga)[off + d] += (gd - m1 - xhat[off + d] * m2) * is;
                      }
                    }
                  }
                  if (auto* gg = g.grad_buf(g.nodes_[id].parents[1])) {
                    for (int t = 0; t < T; ++t)
                      for (int d = 0; d < D; ++d)
                        (*gg)[d] += gy[static_cast<int64_t>(t) * D + d] * xhat[static_cast<int64_t>(t) * D + d];
                  }
                  if (auto* gb = g.grad_buf(g.nodes_[id].parents[2])) {
                    for (int t = 0; t < T; ++t)
                      for (int d = 0; d < D; ++d) (*gb)[d] += gy[static_cast<int64_t>(t) * D + d];
                  }
                });
  }

  // ---------------------------------------------------------------- conv1d
  // x: [T, Din], w: [K, Din, Dout], b: [Dout]. "Same" padding with ceil
  // length convention: out length = ceil(T / stride).
  Var conv1d(Var a, Var w, Var b, int stride) {
    const auto& x = val(a);
    const auto& wv = val(w);
    const auto& bv = val(b);
    if (x.rank() != 2 || wv.rank() != 3 || x.cols() != wv.dim(1)) fail("conv1d", x, wv);
    if (stride < 1) throw std::invalid_argument("conv1d stride must be >= 1");
    const int T = x.rows(), din = x.cols(), K = wv.dim(0), dout = wv.dim(2);
    if (bv.rank() != 1 || bv.dim(0) != dout) fail("conv1d bias", bv, wv);
    const int out_t = (T + stride - 1) / stride;
    const int pad_total = std::max((out_t - 1) * stride + K - T, 0);
    const int pad_left = pad_total / 2;
    Tensor<Real> out({out_t, dout});
    for (int t = 0; t < out_t; ++t) {
      for (int o = 0; o < dout; ++o) out.at(t, o) = bv[o];
      for (int j = 0; j < K; ++j) {
        const int src = t * stride + j - pad_left;
        if (src < 0 || src >= T) continue;
        for (int i = 0; i < din; ++i) {
          const Real xv = x.at(src, i);
          if (xv == Real(0)) continue;
          const int64_t woff = (static_cast<int64_t>(j) * din + i) * dout;
          for (int o = 0; o < dout; ++o) out.at(t, o) += xv * wv[woff + o];
        }
      }
    }
    return push(std::move(out), {a.id, w.id, b.id},
                [T, din, K, dout, out_t, pad_left, stride](Graph& g, int id) {
                  const auto& gy = g.nodes_[id].grad;
                  const auto& x = g.nodes_[g.nodes_[id].parents[0]].value;
                  const auto& wv = g.nodes_[g.nodes_[id].parents[1]].value;
                  auto* gx = g.grad_buf(g.nodes_[id].parents[0]);
                  auto* gw = g.grad_buf(g.nodes_[id].parents[1]);
                  auto* gb = g.grad_buf(g.nodes_[id].parents[2]);
                  for (int t = 0; t < out_t; ++t) {
                    const int64_t yoff = static_cast<int64_t>(t) * dout;
                    if (gb) {
                      for (int o = 0; o < dout; ++o) (*gb)[o] += gy[yoff + o];
                    }
                    for (int j = 0; j < K; ++j) {
                      const int src = t * stride + j - pad_left;
                      if (src < 0 || src >= T) continue;
                      for (int i = 0; i < din; ++i) {
                        const int64_t woff = (static_cast<int64_t>(j) * din + i) * dout;
                        if (gx) {
                          Real s = 0;
                          for (int o = 0; o < dout; ++o) s += wv[woff + o] * gy[yoff + o];
                          (*gx)[static_cast<int64_t>(src) * din + i] += s;
                        }
                        if (gw) {
                          const Real xv = x[static_cast<int64_t>(src) * din + i];
                          if (xv != Real(0)) {
                            for (int o = 0; o < dout; ++o) (*gw)[woff + o] += xv * gy[yoff + o];
                          }
                        }
                      }
                    }
                  }
                });
  }

  // ------------------------------------------------------- gather / views
  Var gather_rows(Var a, std::vector<int> idx) {
    const auto& x = val(a);
    if (x.rank() != 2) throw std::invalid_argument("gather_rows needs rank-2 input, got " + shape_str(x.shape));
    const int D = x.cols();
    for (int i : idx) {
      if (i < 0 || i >= x.rows()) {
        throw std::out_of_range("gather_rows index " + std::to_string(i) + " out of range for " + shape_str(x.shape));
      }
    }
    Tensor<Real> out({static_cast<int>(idx.size()), D});
    for (size_t r = 0; r < idx.size(); ++r)
      for (int d = 0; d < D; ++d) out.at(static_cast<int>(r), d) = x.at(idx[r], d);
    return push(std::move(out), {a.id}, [idx = std::move(idx), D](Graph& g, int id) {
      const auto& gy = g.nodes_[id].grad;
      if (auto* ga = g.grad_buf(g.nodes_[id].parents[0])) {
        for (size_t r = 0; r < idx.size(); ++r)
          for (int d = 0; d < D; ++d)
            (*ga)[static_cast<int64_t>(idx[r]) * D + d] += gy[static_cast<int64_t>(r) * D + d];
      }
    });
  }

  // table: [V, D]; ids are token ids.
  Var embedding_lookup(Var table, const std::vector<int>& ids) { return gather_rows(table, ids); }

  // x: [N, C], ids[N]; out[n] = x[n, ids[n]].
  Var pick_rows(Var a, std::vector<int> ids) {
    const auto& x = val(a);
    if (x.rank() != 2 || static_cast<int>(ids.size()) != x.rows()) {
      throw std::invalid_argument("pick_rows needs [N,C] and N ids, got " + shape_str(x.shape));
    }
    const int C = x.cols();
    for (int i : ids) {
      if (i < 0 || i >= C) throw std::out_of_range("pick_rows id out of range");
    }
    Tensor<Real> out({static_cast<int>(ids.size())});
    for (size_t n = 0; n < ids.size(); ++n) out[static_cast<int64_t>(n)] = x.at(static_cast<int>(n), ids[n]);
    return push(std::move(out), {a.id}, [ids = std::move(ids), C](Graph& g, int id) {
      const auto& gy = g.nodes_[id].grad;
      if (auto* ga = g.grad_buf(g.nodes_[id].parents[0])) {
        for (size_t n = 0; n < ids.size(); ++n) (*ga)[static_cast<int64_t>(n) * C + ids[n]] += gy[static_cast<int64_t>(n)];
      }
    });
  }

  Var slice_rows(Var a, int start, int len) {
    const auto& x = val(a);
    if (x.rank() != 2 || start < 0 || len < 0 || start + len > x.rows()) {
      throw std::out_of_range("slice_rows [" + std::to_string(start) + "," + std::to_string(start + len) +
                              ") out of range for " + shape_str(x.shape));
    }
    const int D = x.cols();
    Tensor<Real> out({len, D});
    std::copy_n(x.data.begin() + static_cast<int64_t>(start) * D, static_cast<int64_t>(len) * D, out.data.begin());
    return push(std::move(out), {a.id}, [start, len, D](Graph& g, int id) {
      const auto& gy = g.nodes_[id].grad;
      if (auto* ga = g.grad_buf(g.nodes_[id].parents[0])) {
        for (int64_t i = 0; i < static_cast<int64_t>(len) * D; ++i) (*ga)[static_cast<int64_t>(start) * D + i] += gy[i];
      }
    });
  }

  Var slice_cols(Var a, int start, int len) {
    const auto& x = val(a);
    if (x.rank() != 2 || start < 0 || len < 0 || start + len > x.cols()) {
      throw std::out_of_range("slice_cols out of range for " + shape_str(x.shape));
    }
    const int T = x.rows(), D = x.cols();
    Tensor<Real> out({T, len});
    for (int t = 0; t < T; ++t)
      for (int c = 0; c < len; ++c) out.at(t, c) = x.at(t, start + c);
    return push(std::move(out), {a.id}, [T, D, start, len](Graph& g, int id) {
      const auto& gy = g.nodes_[id].grad;
      if (auto* ga = g.grad_buf(g.nodes_[id].parents[0])) {
        for (int t = 0; t < T; ++t)
          for (int c = 0; c < len; ++c)
            (*ga)[static_cast<int64_t>(t) * D + start + c] += gy[static_cast<int64_t>(t) * len + c];
      }
    });
  }

  // Row i of a matrix as a rank-1 vector.
  Var row(Var a, int i) {
    const auto& x = val(a);
    if (x.rank() != 2 || i < 0 || i >= x.rows()) {
      throw std::out_of_range("row " + std::to_string(i) + " out of range for " + shape_str(x.shape));
    }
    const int D = x.cols();
    Tensor<Real> out({D});
    std::copy_n(x.data.begin() + static_cast<int64_t>(i) * D, D, out.data.begin());
    return push(std::move(out), {a.id}, [i, D](Graph& g, int id) {
      const auto& gy = g.nodes_[id].grad;
      if (auto* ga = g.grad_buf(g.nodes_[id].parents[0])) {
        for (int d = 0; d < D; ++d) (*ga)[static_cast<int64_t>(i) * D + d] += gy[d];
      }
    });
  }

  // Element i of a rank-1 vector as a scalar.
  Var index(Var a, int i) {
    const auto& x = val(a);
    if (x.rank() != 1 || i < 0 || i >= x.dim(0)) {
      throw std::out_of_range("index " + std::to_string(i) + " out of range for " + shape_str(x.shape));
    }
    Tensor<Real> out = Tensor<Real>::scalar(x[i]);
    return push(std::move(out), {a.id}, [i](Graph& g, int id) {
      if (auto* ga = g.grad_buf(g.nodes_[id].parents[0])) (*ga)[i] += g.nodes_[id].grad[0];
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows of zero tensors");
    const int D = val(parts[0]).cols();
    int total = 0;
    std::vector<int> ids;
    for (Var p : parts) {
      const auto& x = val(p);
      if (x.rank() != 2 || x.cols() != D) fail("concat_rows", val(parts[0]), x);
      total += x.rows();
      ids.push_back(p.id);
    }
    Tensor<Real> out({total, D});
    int64_t off = 0;
    for (Var p : parts) {
      const auto& x = val(p);
      std::copy(x.data.begin(), x.data.end(), out.data.begin() + off);
      off += x.numel();
    }
    return push(std::move(out), std::move(ids), [](Graph& g, int id) {
      const auto& gy = g.nodes_[id].grad;
      int64_t off = 0;
      for (int pid : g.nodes_[id].parents) {
        const int64_t n = g.nodes_[pid].value.numel();
        if (auto* gp = g.grad_buf(pid)) {
          for (int64_t i = 0; i < n; ++i) (*gp)[i] += gy[off + i];
        }
        off += n;
      }
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols of zero tensors");
    const int T = val(parts[0]).rows();
    int total = 0;
    std::vector<int> ids;
    std::vector<int> widths;
    for (Var p : parts) {
      const auto& x = val(p);
      if (x.rank() != 2 || x.rows() != T) fail("concat_cols", val(parts[0]), x);
      total += x.cols();
      widths.push_back(x.cols());
      ids.push_back(p.id);
    }
    Tensor<Real> out({T, total});
    int col = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
      const auto& x = val(parts[pi]);
      for (int t = 0; t < T; ++t)
        for (int c = 0; c < widths[pi]; ++c) out.at(t, col + c) = x.at(t, c);
      col += widths[pi];
    }
    return push(std::move(out), std::move(ids), [T, total, widths = std::move(widths)](Graph& g, int id) {
      const auto& gy = g.nodes_[id].grad;
      int col = 0;
      for (size_t pi = 0; pi < g.nodes_[id].parents.size(); ++pi) {
        const int pid = g.nodes_[id].parents[pi];
        const int w = widths[pi];
        if (auto* gp = g.grad_buf(pid)) {
          for (int t = 0; t < T; ++t)
            for (int c = 0; c < w; ++c)
              (*gp)[static_cast<int64_t>(t) * w + c] += gy[static_cast<int64_t>(t) * total + col + c];
        }
        col += w;
      }
    });
  }

  // Scalars -> rank-1 vector.
  Var stack_scalars(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("stack_scalars of zero tensors");
    std::vector<int> ids;
    Tensor<Real> out({static_cast<int>(parts.size())});
    for (size_t i = 0; i < parts.size(); ++i) {
      const auto& x = val(parts[i]);
      if (x.numel() != 1) throw std::invalid_argument("stack_scalars needs scalars, got " + shape_str(x.shape));
      out[static_cast<int64_t>(i)] = x[0];
      ids.push_back(parts[i].id);
    }
    return push(std::move(out), std::move(ids), [](Graph& g, int id) {
      const auto& gy = g.nodes_[id].grad;
      for (size_t i = 0; i < g.nodes_[id].parents.size(); ++i) {
        if (auto* gp = g.grad_buf(g.nodes_[id].parents[i])) (*gp)[0] += gy[static_cast<int64_t>(i)];
      }
    });
  }

  Var reshape(Var a, Shape s) {
    const auto& x = val(a);
    if (shape_numel(s) != x.numel()) {
      throw std::invalid_argument("reshape " + shape_str(x.shape) + " -> " + shape_str(s) + " changes element count");
    }
    Tensor<Real> out(std::move(s), x.data);
    return push(std::move(out), {a.id}, [](Graph& g, int id) {
      const auto& gy = g.nodes_[id].grad;
      if (auto* ga = g.grad_buf(g.nodes_[id].parents[0])) {
        for (int64_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i];
      }
    });
  }

  // outer_add(A [T,H], L [U,H]) -> [T*U, H], row t*U+u = A[t] + L[u].
  Var outer_add(Var a, Var b) {
    const auto& x = val(a);
    const auto& y = val(b);
    if (x.rank() != 2 || y.rank() != 2 || x.cols() != y.cols()) fail("outer_add", x, y);
    const int T = x.rows(), U = y.rows(), H = x.cols();
    Tensor<Real> out({T * U, H});
    for (int t = 0; t < T; ++t)
      for (int u = 0; u < U; ++u) {
        const int64_t off = (static_cast<int64_t>(t) * U + u) * H;
        for (int h = 0; h < H; ++h) out[off + h] = x.at(t, h) + y.at(u, h);
      }
    return push(std::move(out), {a.id, b.id}, [T, U, H](Graph& g, int id) {
      const auto& gy = g.nodes_[id].grad;
      auto* ga = g.grad_buf(g.nodes_[id].parents[0]);
      auto* gb = g.grad_buf(g.nodes_[id].parents[1]);
      for (int t = 0; t < T; ++t)
        for (int u = 0; u < U; ++u) {
          const int64_t off = (static_cast<int64_t>(t) * U + u) * H;
          for (int h = 0; h < H; ++h) {
            if (ga) (*ga)[static_cast<int64_t>(t) * H + h] += gy[off + h];
            if (gb) (*gb)[static_cast<int64_t>(u) * H + h] += gy[off + h];
          }
        }
    });
  }

  // ----------------------------------------------------------- reductions
  Var sum(Var a) {
    const auto& x = val(a);
    Real s = 0;
    for (Real v : x.data) s += v;
    return push(Tensor<Real>::scalar(s), {a.id}, [](Graph& g, int id) {
      const Real gy = g.nodes_[id].grad[0];
      if (auto* ga = g.grad_buf(g.nodes_[id].parents[0])) {
        for (int64_t i = 0; i < ga->numel(); ++i) (*ga)[i] += gy;
      }
    });
  }

  Var mean(Var a) {
    const auto& x = val(a);
    const Real inv = Real(1) / Real(x.numel());
    Real s = 0;
    for (Real v : x.data) s += v;
    return push(Tensor<Real>::scalar(s * inv), {a.id}, [inv](Graph& g, int id) {
      const Real gy = g.nodes_[id].grad[0] * inv;
      if (auto* ga = g.grad_buf(g.nodes_[id].parents[0])) {
        for (int64_t i = 0; i < ga->numel(); ++i) (*ga)[i] += gy;
      }
    });
  }

  // ------------------------------------------------- cosine similarity
  // u, v rank-1 of equal length; errors on a zero-norm operand.
  Var cosine_similarity(Var a, Var b) {
    const auto& u = val(a);
    const auto& v = val(b);
    if (u.rank() != 1 || v.rank() != 1 || u.dim(0) != v.dim(0)) fail("cosine_similarity", u, v);
    const int n = u.dim(0);
    Real dot = 0, nu2 = 0, nv2 = 0;
    for (int i = 0; i < n; ++i) {
      dot += u[i] * v[i];
      nu2 += u[i] * u[i];
      nv2 += v[i] * v[i];
    }
    if (nu2 == Real(0) || nv2 == Real(0)) {
      throw std::domain_error("cosine_similarity of zero-norm vector");
    }
    const Real nu = std::sqrt(nu2), nv = std::sqrt(nv2);
    const Real s = dot / (nu * nv);
    return push(Tensor<Real>::scalar(s), {a.id, b.id}, [n, nu, nv, s](Graph& g, int id) {
      const Real gy = g.nodes_[id].grad[0];
      const auto& u = g.nodes_[g.nodes_[id].parents[0]].value;
      const auto& v = g.nodes_[g.nodes_[id].parents[1]].value;
      if (auto* ga = g.grad_buf(g.nodes_[id].parents[0])) {
        for (int i = 0; i < n; ++i) (*ga)[i] += gy * (v[i] / (nu * nv) - s * u[i] / (nu * nu));
      }
      if (auto* gb = g.grad_buf(g.nodes_[id].parents[1])) {
        for (int i = 0; i < n; ++i) (*gb)[i] += gy * (u[i] / (nu * nv) - s * v[i] / (nv * nv));
      }
    });
  }

  // ---------------------------------------------------------------- dropout
  // Inverted dropout: kept entries scaled by 1/(1-p). p = 0 is the identity.
  Var dropout(Var a, Real p, std::mt19937_64& rng) {
    if (p < Real(0) || p >= Real(1)) throw std::invalid_argument("dropout p must be in [0,1)");
    if (p == Real(0)) return a;
    const auto& x = val(a);
    Tensor<Real> mask(x.shape);
    std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
    const Real inv = Real(1) / (Real(1) - p);
    for (auto& m : mask.data) m = keep(rng) ? inv : Real(0);
    Tensor<Real> out = x;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
    return push(std::move(out), {a.id}, [mask = std::move(mask)](Graph& g, int id) {
      const auto& gy = g.nodes_[id].grad;
      if (auto* ga = g.grad_buf(g.nodes_[id].parents[0])) {
        for (int64_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i] * mask[i];
      }
    });
  }

  // ----------------------------------------------------------- stop grad
  // Identity forward; the node has no recorded parents, so backward
  // contributes exactly zero to every ancestor of x.
  Var stop_gradient(Var a) {
    if (stop_gradient_bypass_) {
      Tensor<Real> out = val(a);
      return push(std::move(out), {a.id}, [](Graph& g, int id) {
        g.accum_same(g.nodes_[id].parents[0], g.nodes_[id].grad);
      });
    }
    return push(Tensor<Real>(val(a)), {}, nullptr, false);
  }

  // Escape hatch for fused ops (the transducer loss) that compute their own
  // analytic gradient.
  Var custom(Tensor<Real> value, std::vector<int> parents, Pullback pb) {
    return push(std::move(value), std::move(parents), std::move(pb));
  }

  // ----------------------------------------------------------- backward
  void backward(Var loss) {
    if (backward_ran_) throw std::logic_error("backward already ran on this tape");
    const Node& ln = node(loss);
    if (ln.value.numel() != 1) {
      throw std::invalid_argument("backward requires a scalar loss, got " + shape_str(ln.value.shape));
    }
    if (!std::isfinite(static_cast<double>(ln.value[0]))) {
      throw std::domain_error("backward on non-finite loss");
    }
    backward_ran_ = true;
    auto* seed = grad_buf(loss.id);
    if (!seed) return;  // loss does not depend on anything trainable
    (*seed)[0] = Real(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (n.requires_grad && n.grad.numel() != 0 && n.pullback) n.pullback(*this, id);
    }
  }

  // Gradient buffer of node id, or nullptr if the node does not require grad.
  Tensor<Real>* grad_buf(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) return nullptr;
    if (n.grad.numel() == 0) n.grad = Tensor<Real>::zeros(n.value.shape);
    return &n.grad;
  }

  std::vector<Node> nodes_;  // public-by-convention for pullbacks

 private:
  bool backward_ran_ = false;
  bool stop_gradient_bypass_ = false;

  const Node& node(Var v) const {
    if (!v.valid() || v.id >= size()) throw std::out_of_range("invalid Var");
    return nodes_[static_cast<size_t>(v.id)];
  }
  const Tensor<Real>& val(Var v) const { return node(v).value; }

  void accum_same(int id, const Tensor<Real>& gy) {
    if (auto* gp = grad_buf(id)) {
      for (int64_t i = 0; i < gy.numel(); ++i) (*gp)[i] += gy[i];
    }
  }

  Var push(Tensor<Real> value, std::vector<int> parents, Pullback pb, bool force_requires = false) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = force_requires;
    for (int p : parents) {
      if (nodes_[static_cast<size_t>(p)].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad && pb) {
      n.parents = std::move(parents);
      n.pullback = std::move(pb);
    }
    nodes_.push_back(std::move(n));
    return Var{size() - 1};
  }

  static void check_same_shape(const char* op, const Tensor<Real>& a, const Tensor<Real>& b) {
    if (!a.same_shape(b)) fail(op, a, b);
  }

  [[noreturn]] static void fail(const char* op, const Tensor<Real>& a, const Tensor<Real>& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a.shape) + " and " +
                                shape_str(b.shape));
  }

  static std::pair<int, int> rows_cols(const Tensor<Real>& x) {
    if (x.rank() == 1) return {1, x.dim(0)};
    if (x.rank() == 2) return {x.rows(), x.cols()};
    throw std::invalid_argument("expected rank-1 or rank-2 tensor, got " + shape_str(x.shape));
  }

  static void gemm(const Real* a, const Real* b, Real* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
      Real* ci = c + static_cast<int64_t>(i) * n;
      std::fill(ci, ci + n, Real(0));
      const Real* ai = a + static_cast<int64_t>(i) * k;
      for (int p = 0; p < k; ++p) {
        const Real aip = ai[p];
        if (aip == Real(0)) continue;
        const Real* bp = b + static_cast<int64_t>(p) * n;
        for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
      }
    }
  }

  static void softmax_row(Real* p, int n) {
    Real mx = p[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, p[i]);
    Real s = 0;
    for (int i = 0; i < n; ++i) {
      p[i] = std::exp(p[i] - mx);
      s += p[i];
    }
    const Real inv = Real(1) / s;
    for (int i = 0; i < n; ++i) p[i] *= inv;
  }

  static void log_softmax_row(Real* p, int n) {
    Real mx = p[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, p[i]);
    Real s = 0;
    for (int i = 0; i < n; ++i) s += std::exp(p[i] - mx);
    const Real lse = mx + std::log(s);
    for (int i = 0; i < n; ++i) p[i] -= lse;
  }
};

}  // namespace csiam
