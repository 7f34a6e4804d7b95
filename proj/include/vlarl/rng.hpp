#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace vlarl {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Counter-based generator: output i is a pure function of (key, i), so the
/// full state is two integers and streams can be derived from any identifier
/// without touching a shared source.
class CounterRng {
 public:
  CounterRng() = default;
  CounterRng(std::uint64_t key, std::uint64_t counter = 0) noexcept
      : key_(key), counter_(counter) {}

  /// Independent stream for (master seed, stream id).
  static CounterRng stream(std::uint64_t master, std::uint64_t id) noexcept {
    return CounterRng(splitmix64(master ^ splitmix64(id ^ 0xA5A5A5A5A5A5A5A5ull)));
  }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return splitmix64(key_ ^ splitmix64(counter_));
  }

  /// Uniform in [0, 1).
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * uniform();
  }

  double normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    return n == 0 ? 0 : next_u64() % n;
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  friend bool operator==(const CounterRng&, const CounterRng&) = default;

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace vlarl
