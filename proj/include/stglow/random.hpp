// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

#include "stglow/tensor.hpp"

namespace stglow {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed for stream (a, b) under a base seed. Streams with distinct ids are
// statistically independent and the mapping is stable across platforms.
constexpr std::uint64_t stream_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return mix64(mix64(mix64(base) ^ a) ^ (b * 0xd1b54a32d192ed03ULL));
}

// Named stream ids so that model init, shuffling and sampling never share
// random numbers.
enum class Stream : std::uint64_t { kInit = 1, kShuffle = 2, kSample = 3, kData = 4, kCheck = 5 };

inline Rng make_rng(std::uint64_t base, Stream s, std::uint64_t sub = 0) {
  return Rng(stream_seed(base, static_cast<std::uint64_t>(s), sub));
}

inline Matrix randn(Index rows, Index cols, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * dist(rng);
  return m;
}

inline Matrix rand_uniform(Index rows, Index cols, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace stglow
