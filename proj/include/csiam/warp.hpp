// csiam/warp.hpp
//
// Non-uniform temporal warp: w(t) = t + sum_r a_r sin(pi r t / (T-1)).
// The sine basis vanishes at both endpoints, so w(0)=0 and w(T-1)=T-1 hold
// by construction; strict monotonicity on the integer grid is enforced when
// a WarpFunction is built.

#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "csiam/features.hpp"
#include "csiam/tensor.hpp"

namespace csiam {

// Raw warp formula; no monotonicity requirement. WarpFunction::evaluate
// delegates here after construction-time validation.
inline double eval_warp_formula(int num_frames, const std::vector<double>& amplitudes, int t) {
  if (num_frames < 2) throw std::invalid_argument("warp needs at least 2 frames");
  if (t < 0 || t >= num_frames) {
    throw std::out_of_range("warp evaluated at t=" + std::to_string(t) + " outside [0," +
                            std::to_string(num_frames - 1) + "]");
  }
  double w = t;
  const double denom = num_frames - 1;
  for (size_t r = 0; r < amplitudes.size(); ++r) {
    w += amplitudes[r] * std::sin(M_PI * static_cast<double>(r + 1) * t / denom);
  }
  return w;
}

class WarpFunction {
 public:
  WarpFunction(int num_frames, std::vector<double> amplitudes)
      : num_frames_(num_frames), amplitudes_(std::move(amplitudes)) {
    if (num_frames_ < 2) throw std::invalid_argument("warp needs at least 2 frames");
    double prev = evaluate(0);
    for (int t = 1; t < num_frames_; ++t) {
      const double cur = evaluate(t);
      if (!(cur > prev)) {
        throw std::invalid_argument("warp is not strictly increasing at t=" + std::to_string(t));
      }
      prev = cur;
    }
  }

  static WarpFunction identity(int num_frames) { return WarpFunction(num_frames, {}); }

  int num_frames() const { return num_frames_; }
  int order() const { return static_cast<int>(amplitudes_.size()); }
  const std::vector<double>& amplitudes() const { return amplitudes_; }
  bool is_identity() const {
    for (double a : amplitudes_) {
      if (a != 0.0) return false;
    }
    return true;
  }

  double evaluate(int t) const { return eval_warp_formula(num_frames_, amplitudes_, t); }

 private:
  int num_frames_;
  std::vector<double> amplitudes_;
};

// Draws amplitudes from Normal(0, sigma); redraws on a monotonicity
// violation, and after max_retries failed draws halves the amplitudes of the
// last draw until the warp is valid (halving terminates: the identity warp
// is strictly monotone).
inline WarpFunction sample_warp(std::mt19937_64& rng, int num_frames, int order = 5, double sigma = 0.2,
                                int max_retries = 100) {
  if (num_frames < 2) throw std::invalid_argument("sample_warp needs at least 2 frames");
  if (order < 0) throw std::invalid_argument("sample_warp order must be >= 0");
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> amps(static_cast<size_t>(order));
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    for (auto& a : amps) a = sigma * dist(rng);
    try {
      return WarpFunction(num_frames, amps);
    } catch (const std::invalid_argument&) {
      // redraw
    }
  }
  for (;;) {
    for (auto& a : amps) a *= 0.5;
    try {
      return WarpFunction(num_frames, amps);
    } catch (const std::invalid_argument&) {
    }
  }
}

// x(w) via linear interpolation between floor/ceil samples; exactly
// x(floor(w)) when w is integral, so an identity warp round-trips bitwise.
template <typename Real>
BasicFeatureSequence<Real> apply_warp(const BasicFeatureSequence<Real>& x, const WarpFunction& w) {
  if (w.num_frames() != x.num_frames()) {
    throw std::invalid_argument("warp length " + std::to_string(w.num_frames()) + " != feature length " +
                                std::to_string(x.num_frames()));
  }
  const int T = x.num_frames(), D = x.dim();
  Tensor<Real> out({T, D});
  for (int t = 0; t < T; ++t) {
    const double wt = std::min(std::max(w.evaluate(t), 0.0), static_cast<double>(T - 1));
    const double lo = std::floor(wt);
    const double hi = std::ceil(wt);
    const int ilo = static_cast<int>(lo);
    if (lo == hi) {
      for (int d = 0; d < D; ++d) out.at(t, d) = x.frames.at(ilo, d);
    } else {
      const int ihi = static_cast<int>(hi);
      const Real frac = static_cast<Real>(wt - lo);
      const Real rem = static_cast<Real>(hi - wt);
      for (int d = 0; d < D; ++d) out.at(t, d) = frac * x.frames.at(ihi, d) + rem * x.frames.at(ilo, d);
    }
  }
  return BasicFeatureSequence<Real>(std::move(out), x.frame_shift_ms);
}

}  // namespace csiam
