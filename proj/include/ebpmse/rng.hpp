#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>

namespace ebpmse {

// Random streams are addressed by a path of integers hanging off the user
// seed: seed -> purpose tag -> replicate -> area -> draw. Each path hashes to
// an independent 64-bit key, so the value produced for a given path never
// depends on scheduling or on how many other streams were consumed.

namespace detail {

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

// Purpose tags for the first level of the derivation tree.
enum class Stream : std::uint64_t {
  kEbpDraws = 1,
  kBootstrapSample = 2,
  kStandardBootstrap = 3,
  kPopulation = 4,
  kSampleSelection = 5,
  kCovariates = 6,
  kParameterDraws = 7,
  kSimReplicate = 8,
  kTest = 99,
};

class StreamKey {
 public:
  constexpr explicit StreamKey(std::uint64_t seed) noexcept
      : key_(detail::mix64(seed ^ 0x6a09e667f3bcc909ULL)) {}

  constexpr StreamKey child(std::uint64_t component) const noexcept {
    StreamKey k = *this;
    k.key_ = detail::mix64(key_ ^ detail::mix64(component + 0x9e3779b97f4a7c15ULL));
    return k;
  }
  constexpr StreamKey child(Stream tag) const noexcept {
    return child(static_cast<std::uint64_t>(tag));
  }
  constexpr StreamKey child(std::initializer_list<std::uint64_t> path) const noexcept {
    StreamKey k = *this;
    for (auto c : path) k = k.child(c);
    return k;
  }

  constexpr std::uint64_t value() const noexcept { return key_; }

 private:
  std::uint64_t key_;
};

// SplitMix64 stream. Cheap to construct, so one instance per (area, draw)
// costs nothing compared to the work done with it.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(StreamKey key) noexcept : state_(key.value()) {}
  explicit Rng(std::uint64_t seed) noexcept : Rng(StreamKey(seed)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    return detail::mix64(state_);
  }

  // Uniform on the open interval (0, 1).
  double uniform() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() { return normal_(*this); }
  double normal(double mean, double sd) { return mean + sd * normal_(*this); }

  // Index in [0, n).
  std::size_t index(std::size_t n) noexcept {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

 private:
  std::uint64_t state_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace ebpmse
