// csiam/wav.hpp
//
// PCM16 mono RIFF/WAVE reader and writer. Deliberately strict: anything that
// is not canonical 16-bit mono PCM is rejected with a distinct error code.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace csiam {

struct Waveform {
  std::vector<float> samples;  // in [-1, 1]
  int sample_rate = 0;

  double duration_s() const { return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0; }
};

enum class WavErrorCode {
  kFileNotFound,
  kMalformedWav,
  kUnsupportedEncoding,
  kMultichannel,
};

class WavError : public std::runtime_error {
 public:
  WavError(WavErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  WavErrorCode code() const { return code_; }

 private:
  WavErrorCode code_;
};

namespace detail {

inline uint32_t read_u32le(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) | (static_cast<uint32_t>(p[2]) << 16) |
         (static_cast<uint32_t>(p[3]) << 24);
}

inline uint16_t read_u16le(const uint8_t* p) {
  return static_cast<uint16_t>(static_cast<uint16_t>(p[0]) | (static_cast<uint16_t>(p[1]) << 8));
}

}  // namespace detail

inline Waveform load_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WavError(WavErrorCode::kFileNotFound, "cannot open wav file: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  auto malformed = [&](const std::string& what) -> WavError {
    return WavError(WavErrorCode::kMalformedWav, "malformed wav '" + path + "': " + what);
  };

  if (bytes.size() < 44) throw malformed("truncated header");
  if (std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw malformed("missing RIFF/WAVE magic");
  }

  Waveform w;
  bool have_fmt = false;
  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const uint32_t chunk_size = detail::read_u32le(bytes.data() + pos + 4);
    const uint8_t* chunk = bytes.data() + pos + 8;
    if (pos + 8 + chunk_size > bytes.size()) throw malformed("chunk overruns file");
    if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0) {
      if (chunk_size < 16) throw malformed("fmt chunk too small");
      const uint16_t format = detail::read_u16le(chunk);
      const uint16_t channels = detail::read_u16le(chunk + 2);
      const uint32_t rate = detail::read_u32le(chunk + 4);
      const uint16_t bits = detail::read_u16le(chunk + 14);
      if (format != 1 || bits != 16) {
        throw WavError(WavErrorCode::kUnsupportedEncoding,
                       "unsupported wav encoding in '" + path + "' (need PCM16, got format=" +
                           std::to_string(format) + " bits=" + std::to_string(bits) + ")");
      }
      if (channels != 1) {
        throw WavError(WavErrorCode::kMultichannel,
                       "wav '" + path + "' has " + std::to_string(channels) + " channels; need mono");
      }
      if (rate == 0) throw malformed("zero sample rate");
      w.sample_rate = static_cast<int>(rate);
      have_fmt = true;
    } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
      if (!have_fmt) throw malformed("data chunk before fmt chunk");
      const size_t n = chunk_size / 2;
      w.samples.resize(n);
      for (size_t i = 0; i < n; ++i) {
        const auto s = static_cast<int16_t>(detail::read_u16le(chunk + 2 * i));
        w.samples[i] = static_cast<float>(s) / 32768.0f;
      }
      return w;
    }
    pos += 8 + chunk_size + (chunk_size & 1);  // chunks are word-aligned
  }
  throw malformed(have_fmt ? "missing data chunk" : "missing fmt chunk");
}

inline void save_wav(const std::string& path, const Waveform& w) {
  if (w.sample_rate <= 0) throw std::invalid_argument("save_wav: sample_rate must be positive");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write wav file: " + path);
  const uint32_t data_size = static_cast<uint32_t>(w.samples.size() * 2);
  auto put_u32 = [&](uint32_t v) {
    char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                 static_cast<char>(v >> 24)};
    out.write(b, 4);
  };
  auto put_u16 = [&](uint16_t v) {
    char b[2] = {static_cast<char>(v), static_cast<char>(v >> 8)};
    out.write(b, 2);
  };
  out.write("RIFF", 4);
  put_u32(36 + data_size);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(16);
  put_u16(1);  // PCM
  put_u16(1);  // mono
  put_u32(static_cast<uint32_t>(w.sample_rate));
  put_u32(static_cast<uint32_t>(w.sample_rate) * 2);
  put_u16(2);
  put_u16(16);
  out.write("data", 4);
  put_u32(data_size);
  for (float s : w.samples) {
    const double clipped = std::max(-1.0, std::min(1.0, static_cast<double>(s)));
    const auto q = static_cast<int16_t>(std::lrint(clipped * 32767.0));
    put_u16(static_cast<uint16_t>(q));
  }
}

}  // namespace csiam
