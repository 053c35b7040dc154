#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cognn {

/// Seeded pseudo-random source.
///
/// Bits come from std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Floating-point and integer draws are derived from raw bits here
/// rather than through <random> distributions, whose algorithms are
/// implementation-defined, so a seed reproduces the same numbers on every
/// toolchain.
///
/// Independent sub-streams are derived with split(label): the child seed is a
/// SplitMix64 mix of the parent seed and a 64-bit FNV-1a hash of the label. A
/// child depends only on the parent's seed, never on how many numbers the
/// parent has produced.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(mix(seed)) {}

  std::uint64_t seed() const noexcept { return seed_; }

  Rng split(std::string_view label) const { return Rng(mix(seed_ ^ fnv1a(label))); }

  Rng split(std::string_view label, std::uint64_t index) const {
    return Rng(mix(mix(seed_ ^ fnv1a(label)) + index));
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random mantissa bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on the closed range [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return lo + static_cast<std::int64_t>(engine_());
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return lo + static_cast<std::int64_t>(x % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  static constexpr std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  static constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace cognn
