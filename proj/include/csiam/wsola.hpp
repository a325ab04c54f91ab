// csiam/wsola.hpp
//
// Waveform-similarity overlap-add time stretching. Changes tempo by ratio
// alpha (alpha > 1 speeds up / shortens) without shifting pitch: output is
// assembled from Hann-windowed input segments whose positions are refined by
// cross-correlation against the natural continuation of the previous
// segment.

#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "csiam/wav.hpp"

namespace csiam {

struct WsolaConfig {
  double window_ms = 25.0;
  double tolerance_ms = 7.5;
};

inline Waveform wsola_stretch(const Waveform& wave, double alpha, const WsolaConfig& cfg = {}) {
  if (!(alpha > 0.0)) throw std::invalid_argument("wsola alpha must be positive");
  if (wave.sample_rate <= 0) throw std::invalid_argument("wsola needs a sample rate");
  const int win = static_cast<int>(std::lround(cfg.window_ms * wave.sample_rate / 1000.0));
  const int hop = win / 2;  // 50% overlap; Hann OLA sums to a constant
  const int tol = static_cast<int>(std::lround(cfg.tolerance_ms * wave.sample_rate / 1000.0));
  const auto n = static_cast<int64_t>(wave.samples.size());
  if (n < 2 * win) throw std::invalid_argument("wsola input shorter than two windows");

  const auto out_len = static_cast<int64_t>(std::llround(static_cast<double>(n) / alpha));
  std::vector<double> acc(static_cast<size_t>(out_len) + win, 0.0);
  std::vector<double> norm(acc.size(), 0.0);

  std::vector<double> hann(static_cast<size_t>(win));
  for (int i = 0; i < win; ++i) hann[static_cast<size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / win));

  auto sample = [&](int64_t i) -> double {
    return (i >= 0 && i < n) ? static_cast<double>(wave.samples[static_cast<size_t>(i)]) : 0.0;
  };

  // Natural continuation of the previously pasted segment.
  int64_t prev_src = 0;
  for (int64_t out_pos = 0; out_pos < out_len; out_pos += hop) {
    const auto nominal = static_cast<int64_t>(std::llround(static_cast<double>(out_pos) * alpha));
    int64_t best = nominal;
    if (out_pos > 0 && tol > 0) {
      const int64_t target = prev_src + hop;  // where seamless continuation would read from
      double best_score = -1e300;
      const int64_t lo = nominal - tol;
      const int64_t hi = nominal + tol;
      for (int64_t cand = lo; cand <= hi; ++cand) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (int i = 0; i < win; i += 2) {  // stride 2: halves the search cost, plenty for speech
          const double a = sample(cand + i);
          const double b = sample(target + i);
          dot += a * b;
          na += a * a;
          nb += b * b;
        }
        const double score = (na > 0.0 && nb > 0.0) ? dot / std::sqrt(na * nb) : 0.0;
        if (score > best_score) {
          best_score = score;
          best = cand;
        }
      }
    }
    for (int i = 0; i < win; ++i) {
      const auto o = static_cast<size_t>(out_pos + i);
      acc[o] += hann[static_cast<size_t>(i)] * sample(best + i);
      norm[o] += hann[static_cast<size_t>(i)];
    }
    prev_src = best;
  }

  Waveform out;
  out.sample_rate = wave.sample_rate;
  out.samples.resize(static_cast<size_t>(out_len));
  for (int64_t i = 0; i < out_len; ++i) {
    const double d = norm[static_cast<size_t>(i)];
    out.samples[static_cast<size_t>(i)] = static_cast<float>(d > 1e-9 ? acc[static_cast<size_t>(i)] / d : 0.0);
  }
  return out;
}

}  // namespace csiam
