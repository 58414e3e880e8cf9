#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace nestiq {

/// Identifies one independent random stream: a master seed, a short tag naming
/// the consumer ("outer", "inner", "pilot-outer", ...) and a tuple of
/// randomization / outer-sample / inner-replicate indices (s, n, r).
struct RandomizationKey {
  std::uint64_t seed = 0;
  std::string tag;
  std::array<std::uint64_t, 3> indices{0, 0, 0};

  RandomizationKey with_tag(std::string new_tag) const {
    RandomizationKey k = *this;
    k.tag = std::move(new_tag);
    return k;
  }
  RandomizationKey with_indices(std::uint64_t s, std::uint64_t n, std::uint64_t r) const {
    RandomizationKey k = *this;
    k.indices = {s, n, r};
    return k;
  }

  bool operator==(const RandomizationKey&) const = default;
};

/// Philox4x32-10 block function (Salmon et al.); exposed for the known-answer test.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// 64-bit finalizer (splitmix64 / murmur3 style avalanche).
constexpr std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z;
}

/// Counter-based generator bound to one RandomizationKey. Every draw is a pure
/// function of (key, counter), so sub-streams can be evaluated in any order or
/// on any thread with identical results.
class KeyedStream {
 public:
  explicit KeyedStream(const RandomizationKey& key);

  /// 64 random bits at position `counter` of sub-stream `lane`.
  std::uint64_t bits(std::uint64_t counter, std::uint64_t lane = 0) const;

  /// Uniform double strictly inside (0, 1) with 53 random bits.
  double uniform(std::uint64_t counter, std::uint64_t lane = 0) const;

  std::uint64_t digest() const noexcept {
    return (static_cast<std::uint64_t>(key_[1]) << 32) | key_[0];
  }

 private:
  std::array<std::uint32_t, 2> key_{};
};

}  // namespace nestiq
