// csiam/tensor.hpp
//
// Dense row-major n-dimensional array. Templated on the scalar type so the
// same code runs in f32 for training and f64 for gradient verification.

#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace csiam {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

template <typename Real>
struct Tensor {
  Shape shape;
  std::vector<Real> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), Real(0)) {}
  Tensor(Shape s, std::vector<Real> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape)) {
      throw std::invalid_argument("tensor data size does not match shape " + shape_str(shape));
    }
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  static Tensor full(Shape s, Real v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(Real v) { return Tensor({1}, {v}); }

  template <typename Rng>
  static Tensor randn(Shape s, Rng& rng, Real stddev = Real(1)) {
    Tensor t(std::move(s));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& x : t.data) x = static_cast<Real>(dist(rng) * static_cast<double>(stddev));
    return t;
  }

  template <typename Rng>
  static Tensor uniform(Shape s, Rng& rng, Real lo, Real hi) {
    Tensor t(std::move(s));
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    for (auto& x : t.data) x = static_cast<Real>(dist(rng));
    return t;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  // 2-d accessors; callers guarantee rank()==2.
  int rows() const { return shape[0]; }
  int cols() const { return shape[1]; }
  Real& at(int i, int j) { return data[static_cast<size_t>(i) * cols() + j]; }
  Real at(int i, int j) const { return data[static_cast<size_t>(i) * cols() + j]; }

  Real& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  Real operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (Real v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  Real max_abs() const {
    Real m = 0;
    for (Real v : data) m = std::max(m, std::abs(v));
    return m;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> t;
    t.shape = shape;
    t.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) t.data[i] = static_cast<Other>(data[i]);
    return t;
  }

  Tensor& operator+=(const Tensor& o) {
    if (!same_shape(o)) {
      throw std::invalid_argument("tensor += shape mismatch: " + shape_str(shape) + " vs " + shape_str(o.shape));
    }
    for (size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace csiam
