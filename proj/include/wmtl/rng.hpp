#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>

namespace wmtl {

namespace detail {

// Stafford mix13 finalizer. Bijective on 64-bit words.
inline constexpr std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

inline constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ull;

}  // namespace detail

/// Counter-based splittable PRNG (SplitMix64 core). A stream is a (key,
/// counter) pair; `split` derives an independent stream from a name or lane
/// index without advancing the parent. Every stochastic call site in this
/// library receives its own named stream, so runs are reproducible and
/// streams can be consumed in any order across components.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

  static RngStream root(std::uint64_t seed) {
    return RngStream(detail::mix64(seed ^ 0x6c62272e07bb0142ull), 0);
  }

  RngStream split(std::string_view name) const {
    return RngStream(detail::mix64(key_ ^ detail::fnv1a64(name)), 0);
  }

  RngStream split(std::uint64_t lane) const {
    return RngStream(detail::mix64(key_ ^ detail::mix64(lane ^ 0xa0761d6478bd642full)), 0);
  }

  std::uint64_t next_u64() {
    ++counter_;
    return detail::mix64(key_ + counter_ * detail::kGoldenGamma);
  }

  /// Uniform in [0, 1), 53-bit resolution.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  /// Standard normal via Box-Muller. Consumes exactly two words per draw, so
  /// the stream position does not depend on call parity.
  double next_gaussian() {
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace wmtl
