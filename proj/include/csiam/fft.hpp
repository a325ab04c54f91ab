// csiam/fft.hpp
//
// Iterative radix-2 complex FFT for power-of-two sizes. Used by the log-mel
// frontend and by spectral test oracles; sizes here are a few hundred
// samples, so simplicity and bit-stable output win over a tuned library.

#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

namespace csiam {

inline bool is_power_of_two(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline size_t next_power_of_two(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

inline void fft_inplace(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  if (!is_power_of_two(n)) throw std::invalid_argument("fft size must be a power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

// Power spectrum |X_k|^2 for k = 0 .. n/2 of a real signal zero-padded to
// power-of-two length n.
inline std::vector<double> power_spectrum(const std::vector<double>& x, size_t n_fft) {
  if (!is_power_of_two(n_fft) || n_fft < x.size()) {
    throw std::invalid_argument("power_spectrum: bad fft size");
  }
  std::vector<std::complex<double>> buf(n_fft, {0.0, 0.0});
  for (size_t i = 0; i < x.size(); ++i) buf[i] = {x[i], 0.0};
  fft_inplace(buf);
  std::vector<double> out(n_fft / 2 + 1);
  for (size_t k = 0; k < out.size(); ++k) out[k] = std::norm(buf[k]);
  return out;
}

}  // namespace csiam
