// dlra/rng.hpp

// Copyright 2026  dlra authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef DLRA_RNG_HPP_
#define DLRA_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace dlra {

/// Deterministic random stream. All randomness in the project flows through
/// named substreams derived from one 64-bit run seed, so corpora, parameter
/// initialization and batch shuffling are reproducible bit-for-bit.
///
/// Uniform and normal variates are produced from raw mt19937_64 output
/// (std::mt19937_64 is fully specified by the standard); we deliberately do
/// not use std::normal_distribution, whose algorithm is
/// implementation-defined.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : engine_(seed) {}

  /// Substream derivation: mixes the seed with a textual tag and an index.
  static RngStream derive(uint64_t seed, std::string_view tag,
                          uint64_t index = 0) {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a offset basis
    for (char c : tag) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    return RngStream(splitmix64(seed ^ splitmix64(h ^ splitmix64(index))));
  }

  uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01() {
    return std::ldexp(static_cast<double>(engine_() >> 11), -53);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Integer in [0, n). n must be positive.
  uint64_t uniform_index(uint64_t n) {
    // Modulo bias is irrelevant at the corpus sizes used here (n << 2^64).
    return engine_() % n;
  }

  /// Standard normal via Box-Muller (pairs cached for determinism and speed).
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::vector<double> normal_vector(std::size_t n, double mean = 0.0,
                                    double stddev = 1.0) {
    std::vector<double> v(n);
    for (auto &x : v) x = normal(mean, stddev);
    return v;
  }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T> &v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  static uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace dlra

#endif  // DLRA_RNG_HPP_
