// csiam/rng.hpp
//
// Seed derivation. Every stochastic choice in the pipeline is keyed by
// (base seed, step, utterance, purpose) so results never depend on thread
// arrival order and checkpoint resume replays the exact stream.

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace csiam {

// SplitMix64 finalizer; good avalanche, cheap.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  uint64_t h = mix64(base ^ 0x6a09e667f3bcc908ULL);
  h = mix64(h ^ a);
  h = mix64(h ^ b);
  h = mix64(h ^ c);
  return h;
}

// Stable small tags for the independent random streams of one train step.
enum class Stream : uint64_t {
  kInit = 1,
  kData = 2,
  kBatch = 3,
  kWarp = 4,
  kMask = 5,
  kSpecAugment = 6,
  kDropout = 7,
  kNegatives = 8,
  kNoise = 9,
  kProbe = 10,
  kAlpha = 11,
};

inline std::mt19937_64 make_engine(uint64_t base, Stream s, uint64_t a = 0, uint64_t b = 0) {
  return std::mt19937_64(derive_seed(base, static_cast<uint64_t>(s), a, b));
}

}  // namespace csiam
