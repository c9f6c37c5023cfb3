// Copyright 2026 The IBKit Authors.
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

// Counter-based random numbers. Every draw is a pure function of
// (seed, stream, index), so results do not depend on the platform's
// <random> distributions or on the order in which draws are made.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace ibkit {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_counter(std::uint64_t seed, std::uint64_t stream,
                                     std::uint64_t index) noexcept {
  return mix64(mix64(seed ^ mix64(stream)) ^ index);
}

/// Uniform in [0, 1) with 53 random bits.
constexpr double to_unit(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Uniform in (0, 1); safe to pass to log().
constexpr double to_open_unit(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

inline double uniform_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) noexcept {
  return to_unit(hash_counter(seed, stream, index));
}

/// Standard normal from two counter draws (Box-Muller, cosine branch).
inline double normal_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) noexcept {
  const double u1 = to_open_unit(hash_counter(seed, stream, 2 * index));
  const double u2 = to_unit(hash_counter(seed, stream, 2 * index + 1));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Sequential view over a counter stream. Copyable; a copy replays the same sequence.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : seed_(seed), stream_(stream) {}

  std::uint64_t next_u64() noexcept { return hash_counter(seed_, stream_, counter_++); }
  double uniform() noexcept { return to_unit(next_u64()); }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  double normal() noexcept {
    const double u1 = to_open_unit(next_u64());
    const double u2 = to_unit(next_u64());
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  bool bernoulli(double p) noexcept { return uniform() < p; }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept { return n == 0 ? 0 : next_u64() % n; }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace ibkit
