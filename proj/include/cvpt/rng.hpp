// Copyright 2026 The CVPT Lab Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "cvpt/tensor.hpp"

namespace cvpt {

/// xoshiro256** seeded through SplitMix64. The algorithm and every constant
/// are fixed so that a seed yields the same stream on every platform:
///
///   SplitMix64:  x += 0x9E3779B97F4A7C15;
///                z = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9;
///                z = (z ^ (z >> 27)) * 0x94D049BB133111EB;
///                return z ^ (z >> 31);
///   xoshiro256**: result = rotl(s1 * 5, 7) * 9, standard state update with
///                 t = s1 << 17 and rotl(s3, 45).
///
/// Sub-streams come from split(key): child seed = mix(seed ^ mix(key)), where
/// mix is one SplitMix64 finalization step. String keys are first hashed with
/// 64-bit FNV-1a (offset 0xCBF29CE484222325, prime 0x100000001B3).
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (one draw per pair of uniforms, no caching).
  double normal();
  /// Uniform integer in [0, bound), rejection-sampled so it is unbiased.
  std::uint64_t below(std::uint64_t bound);

  Rng split(std::uint64_t key) const;
  Rng split(std::string_view key) const;

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
};

std::uint64_t fnv1a64(std::string_view text);

template <typename T>
BasicTensor<T> uniform_tensor(const Shape& shape, double lo, double hi, Rng& rng);

template <typename T>
BasicTensor<T> normal_tensor(const Shape& shape, double stddev, Rng& rng);

}  // namespace cvpt
