// Copyright (c) 2026 the tesseract-sim developers.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

namespace tsim {

// Deterministic random streams. std::mt19937_64 output is fully specified
// by the standard, and the uniform mapping below avoids the
// implementation-defined std::uniform_real_distribution, so a (seed,
// stream) pair yields the same values on every platform.
//
// Stream derivation: the base seed is mixed with the stream id through one
// splitmix64 round. Conventions used across the project:
//   stream 0: matrix A / layer input,  stream 1: matrix B / target,
//   stream 2: gradient seed,           stream 100 + i: parameters of block i.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  static Rng stream(std::uint64_t seed, std::uint64_t stream_id) {
    return Rng(mix(seed + 0x9e3779b97f4a7c15ULL * (stream_id + 1)));
  }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1), 53 random bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  // Uniform in [-1, 1).
  double uniform_signed() { return 2.0 * uniform() - 1.0; }

private:
  static std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::mt19937_64 gen_;
};

}  // namespace tsim
