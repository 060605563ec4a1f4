#pragma once

#include <cstdint>
#include <string_view>

#include "adfseg/tensor.hpp"

namespace adfseg {

/// Deterministic PRNG used everywhere in place of std:: distributions, whose
/// output is implementation-defined. SplitMix64-seeded xoshiro256++.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller (no cached spare; one pair per two calls
  /// would break replayability of interleaved draws).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Uniform integer in [0, n).
  int64_t below(int64_t n);

  /// Fisher-Yates over [0, n) indices.
  std::vector<int64_t> permutation(int64_t n);

  void fill_normal(nn::Tensor& t, double mean, double stddev);
  void fill_uniform(nn::Tensor& t, double lo, double hi);

 private:
  uint64_t s_[4];
};

/// Derives an independent stream seed from (seed, tag), so that e.g. data
/// synthesis, weight init, and shuffling never share a stream.
uint64_t mix_seed(uint64_t seed, std::string_view tag);
uint64_t mix_seed(uint64_t seed, std::string_view tag, uint64_t index);

/// FNV-1a 64-bit, also used for config hashing.
uint64_t fnv1a64(std::string_view bytes);

}  // namespace adfseg
