// csiam/features.hpp
//
// Frame-level features: the FeatureSequence container, the log-mel frontend
// (HTK mel scale, Hann window, magnitude-squared spectrum) and the "CSFT"
// binary dump format.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "csiam/fft.hpp"
#include "csiam/tensor.hpp"
#include "csiam/wav.hpp"

namespace csiam {

template <typename Real>
struct BasicFeatureSequence {
  Tensor<Real> frames;  // [T, D]
  double frame_shift_ms = 10.0;

  BasicFeatureSequence() = default;
  BasicFeatureSequence(Tensor<Real> f, double shift_ms = 10.0) : frames(std::move(f)), frame_shift_ms(shift_ms) {
    if (frames.rank() != 2 || frames.rows() < 1) {
      throw std::invalid_argument("feature sequence needs a [T>=1, D] matrix, got " + shape_str(frames.shape));
    }
  }

  int num_frames() const { return frames.rows(); }
  int dim() const { return frames.cols(); }
};

using FeatureSequence = BasicFeatureSequence<float>;

// Frame-level class labels paired with a FeatureSequence of equal length.
struct FrameLabels {
  std::vector<int> labels;
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

struct LogMelConfig {
  double window_ms = 25.0;
  double hop_ms = 10.0;
  int n_mels = 80;
  double floor = 1e-10;
};

// Triangular mel filterbank over FFT bins 0..n_fft/2, HTK mel scale,
// edges at 0 Hz and Nyquist.
inline std::vector<std::vector<double>> mel_filterbank(int n_mels, size_t n_fft, int sample_rate) {
  const size_t n_bins = n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> centers_hz(static_cast<size_t>(n_mels) + 2);
  for (size_t m = 0; m < centers_hz.size(); ++m) {
    centers_hz[m] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(m) / (n_mels + 1));
  }
  std::vector<std::vector<double>> fb(static_cast<size_t>(n_mels), std::vector<double>(n_bins, 0.0));
  for (int m = 0; m < n_mels; ++m) {
    const double f0 = centers_hz[static_cast<size_t>(m)];
    const double f1 = centers_hz[static_cast<size_t>(m) + 1];
    const double f2 = centers_hz[static_cast<size_t>(m) + 2];
    for (size_t k = 0; k < n_bins; ++k) {
      const double fk = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
      if (fk > f0 && fk < f1) {
        fb[static_cast<size_t>(m)][k] = (fk - f0) / (f1 - f0);
      } else if (fk >= f1 && fk < f2) {
        fb[static_cast<size_t>(m)][k] = (f2 - fk) / (f2 - f1);
      }
    }
  }
  return fb;
}

// Center frequency (Hz) of each mel filter; exposed for tests that locate
// the filter nearest a known tone.
inline std::vector<double> mel_center_frequencies(int n_mels, int sample_rate) {
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> centers(static_cast<size_t>(n_mels));
  for (int m = 0; m < n_mels; ++m) {
    centers[static_cast<size_t>(m)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * (m + 1.0) / (n_mels + 1));
  }
  return centers;
}

inline FeatureSequence log_mel(const Waveform& wave, const LogMelConfig& cfg = {}) {
  if (wave.sample_rate <= 0) throw std::invalid_argument("log_mel: waveform has no sample rate");
  const int win = static_cast<int>(std::lround(cfg.window_ms * wave.sample_rate / 1000.0));
  const int hop = static_cast<int>(std::lround(cfg.hop_ms * wave.sample_rate / 1000.0));
  if (win <= 1 || hop <= 0) throw std::invalid_argument("log_mel: degenerate window/hop");
  const auto n = static_cast<int64_t>(wave.samples.size());
  if (n < win) throw std::invalid_argument("log_mel: waveform shorter than one window");
  const int num_frames = static_cast<int>(1 + (n - win) / hop);

  const size_t n_fft = next_power_of_two(static_cast<size_t>(win));
  const auto fb = mel_filterbank(cfg.n_mels, n_fft, wave.sample_rate);

  std::vector<double> hann(static_cast<size_t>(win));
  for (int i = 0; i < win; ++i) hann[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (win - 1));

  Tensor<float> frames({num_frames, cfg.n_mels});
  std::vector<double> windowed(static_cast<size_t>(win));
  for (int t = 0; t < num_frames; ++t) {
    const int64_t start = static_cast<int64_t>(t) * hop;
    for (int i = 0; i < win; ++i) {
      windowed[static_cast<size_t>(i)] = static_cast<double>(wave.samples[static_cast<size_t>(start + i)]) *
                                         hann[static_cast<size_t>(i)];
    }
    const auto spec = power_spectrum(windowed, n_fft);
    for (int m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      const auto& filt = fb[static_cast<size_t>(m)];
      for (size_t k = 0; k < spec.size(); ++k) e += filt[k] * spec[k];
      frames.at(t, m) = static_cast<float>(std::log(std::max(e, cfg.floor)));
    }
  }
  return FeatureSequence(std::move(frames), cfg.hop_ms);
}

// ---------------------------------------------------------------- CSFT I/O
// magic "CSFT", u32 version, u32 T, u32 D, then T*D little-endian f32
// row-major.
inline constexpr uint32_t kCsftVersion = 1;

inline void write_csft(const std::string& path, const FeatureSequence& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write feature file: " + path);
  out.write("CSFT", 4);
  auto put_u32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  put_u32(kCsftVersion);
  put_u32(static_cast<uint32_t>(f.num_frames()));
  put_u32(static_cast<uint32_t>(f.dim()));
  out.write(reinterpret_cast<const char*>(f.frames.data.data()),
            static_cast<std::streamsize>(f.frames.data.size() * sizeof(float)));
  if (!out) throw std::runtime_error("short write to feature file: " + path);
}

inline FeatureSequence read_csft(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open feature file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "CSFT", 4) != 0) {
    throw std::runtime_error("not a CSFT feature file: " + path);
  }
  uint32_t version = 0, t = 0, d = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&t), 4);
  in.read(reinterpret_cast<char*>(&d), 4);
  if (!in || version != kCsftVersion) throw std::runtime_error("unsupported CSFT version in " + path);
  if (t < 1 || d < 1 || t > (1u << 24) || d > (1u << 16)) throw std::runtime_error("implausible CSFT dims in " + path);
  Tensor<float> frames({static_cast<int>(t), static_cast<int>(d)});
  in.read(reinterpret_cast<char*>(frames.data.data()),
          static_cast<std::streamsize>(frames.data.size() * sizeof(float)));
  if (!in) throw std::runtime_error("truncated CSFT payload in " + path);
  return FeatureSequence(std::move(frames));
}

}  // namespace csiam
