#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace ctrnas {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent sub-stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// FNV-1a over bytes. Stable across platforms and runs (std::hash is not).
constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Named sub-stream of a root seed: components seeded this way are
/// reproducible independently of each other.
inline std::uint64_t substream_seed(std::uint64_t root, std::string_view name) {
  return mix64(root ^ mix64(fnv1a(name)));
}

inline std::uint64_t substream_seed(std::uint64_t root, std::string_view name, std::uint64_t index) {
  return mix64(substream_seed(root, name) ^ mix64(index + 0x632BE59BD9B4E019ULL));
}

inline Rng make_rng(std::uint64_t root, std::string_view name) { return Rng(substream_seed(root, name)); }

/// Uniform double in [0, 1) built from the raw engine output so the stream is
/// identical across standard library implementations.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

/// Standard normal via Box-Muller on uniform01.
double standard_normal(Rng& rng);

/// Standard Gumbel(0, 1) draw.
double standard_gumbel(Rng& rng);

/// Engine state as text, for checkpoints.
std::string rng_state(const Rng& rng);
Rng rng_from_state(const std::string& state);

}  // namespace ctrnas
