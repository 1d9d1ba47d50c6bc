#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string_view>

namespace lshift {

/// Counter-based random stream.
///
/// Draw i of a stream with key k is splitmix64_mix(k + (i + 1) * golden), so the
/// full state is the pair (key, counter) and any position can be reproduced
/// exactly. Normals use the Box-Muller transform on two consecutive uniforms.
/// split() derives an independent stream by hashing the key with a stream id.
class Rng {
 public:
  static constexpr std::string_view kName = "splitmix64-ctr/box-muller/v1";

  struct State {
    std::uint64_t key = 0;
    std::uint64_t counter = 0;
    bool operator==(const State&) const = default;
  };

  explicit Rng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}
  explicit Rng(State s) : key_(s.key), counter_(s.counter) {}

  State state() const { return {key_, counter_}; }

  std::uint64_t next_u64() {
    ++counter_;
    return mix(key_ + counter_ * kGolden);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// One standard normal; consumes two uniforms and keeps the cosine branch.
  double normal() {
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Fills `out` with standard normals, two per uniform pair (cos then sin).
  template <class T>
  void fill_normal(std::span<T> out) {
    std::size_t i = 0;
    while (i < out.size()) {
      double u1 = 1.0 - uniform();
      double u2 = uniform();
      double r = std::sqrt(-2.0 * std::log(u1));
      double a = 2.0 * std::numbers::pi * u2;
      out[i++] = static_cast<T>(r * std::cos(a));
      if (i < out.size()) out[i++] = static_cast<T>(r * std::sin(a));
    }
  }

  Rng split(std::uint64_t stream_id) const {
    return Rng(State{mix(key_ ^ mix(stream_id + kGolden)), 0});
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace lshift
