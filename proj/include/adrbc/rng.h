// File: rng.h
// Description: Seedable random streams with platform-independent sampling

#pragma once

#include <cstdint>
#include <random>

#include "adrbc/types.h"

namespace adrbc {

// Wraps std::mt19937_64 (whose output sequence is fixed by the standard) and
// derives every distribution from raw 64-bit draws, so sampled values do not
// depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double low, double high) { return low + (high - low) * uniform(); }

  /// Unbiased integer in [0, n). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n);

  /// Standard normal via Box-Muller (one draw per call, the pair's second half is cached).
  double normal();

  Vector normal_vector(Index n);
  Matrix normal_matrix(Index rows, Index cols);

  /// Independent child stream; consumes one draw from this stream.
  Rng fork(std::uint64_t stream_id);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace adrbc
