#include "nestiq/keyed_rng.hpp"

namespace nestiq {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

std::array<std::uint32_t, 2> split(std::uint64_t v) {
  return {static_cast<std::uint32_t>(v), static_cast<std::uint32_t>(v >> 32)};
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t join(std::array<std::uint32_t, 4> x) {
  return (static_cast<std::uint64_t>(x[1]) << 32) | x[0];
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
    const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
    const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

// Two-stage keying: (seed, tag) forms a Philox key, the (s, n, r) tuple is
// enciphered under it, and the 64-bit output becomes the stream key.
KeyedStream::KeyedStream(const RandomizationKey& key) {
  const auto base = split(mix64(key.seed ^ mix64(fnv1a(key.tag))));
  const auto s = split(key.indices[0]);
  const auto n = split(key.indices[1]);
  auto stage1 = philox4x32({s[0], s[1], n[0], n[1]}, base);
  const auto r = split(key.indices[2]);
  auto stage2 = philox4x32({r[0] ^ stage1[2], r[1] ^ stage1[3], 0x6e657374u, 0x69710001u},
                           {stage1[0], stage1[1]});
  key_ = {stage2[0], stage2[1]};
}

std::uint64_t KeyedStream::bits(std::uint64_t counter, std::uint64_t lane) const {
  const auto c = split(counter);
  const auto l = split(lane);
  return join(philox4x32({c[0], c[1], l[0], l[1]}, key_));
}

double KeyedStream::uniform(std::uint64_t counter, std::uint64_t lane) const {
  return (static_cast<double>(bits(counter, lane) >> 11) + 0.5) * 0x1p-53;
}

}  // namespace nestiq
