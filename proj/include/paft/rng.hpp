// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace paft {

/// SplitMix64 finalizer (Stafford variant 13), a bijection on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// 64-bit FNV-1a of a byte string.
constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Maps the top 53 bits of a word onto [0, 1).
constexpr double to_unit_interval(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Stateless per-element key: the same (seed, name, index) always yields the
/// same word, independent of the order elements are visited in.
constexpr std::uint64_t element_hash(std::uint64_t seed, std::string_view name,
                                     std::uint64_t index) noexcept {
  return mix64(mix64(seed ^ fnv1a64(name)) + 0x9e3779b97f4a7c15ULL * (index + 1));
}

/// SplitMix64 stream generator (Steele, Lea & Flood 2014). The state advances
/// by the golden-ratio increment and each output is mix64(state).
class SeededRng {
 public:
  static constexpr std::string_view kAlgorithm = "splitmix64";

  explicit constexpr SeededRng(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t next_u64() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  /// Uniform on [0, 1).
  constexpr double uniform() noexcept { return to_unit_interval(next_u64()); }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n) by rejection, n > 0.
  constexpr std::uint64_t below(std::uint64_t n) noexcept {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  /// Standard normal via Box-Muller; uses two draws per call so the stream
  /// position never depends on cached state.
  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  /// Independent child stream, e.g. one per experiment cell.
  SeededRng fork(std::uint64_t stream) const noexcept {
    return SeededRng(mix64(state_ ^ mix64(stream + 0x632be59bd9b4e019ULL)));
  }

  constexpr std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

}  // namespace paft
