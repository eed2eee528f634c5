#pragma once

// Counter-based random streams built on Philox4x32-10 (Salmon et al., SC'11).
//
// A stream is identified by (seed, stream id). The 64-bit seed is the Philox
// key; the 128-bit counter is (block index, stream id). Every draw is a pure
// function of (seed, stream id, position), so copies of a stream replay the
// same sequence and distinct ids never overlap.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>

#include "mic/tensor.hpp"

namespace mic {

inline constexpr const char* kRngGeneratorId = "philox4x32-10";

using PhiloxBlock = std::array<std::uint32_t, 4>;

inline PhiloxBlock philox4x32_10(PhiloxBlock ctr, std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kW0;
      key[1] += kW1;
    }
    const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Named purposes that partition the stream-id space.
enum class StreamPurpose : std::uint64_t {
  Init = 1,
  Split = 2,
  Shuffle = 3,
  Augment = 4,
  Dropout = 5,
  Synthetic = 6,
  Test = 7,
};

inline std::uint64_t stream_id(StreamPurpose purpose, std::uint64_t a = 0, std::uint64_t b = 0,
                               std::uint64_t c = 0) {
  std::uint64_t h = splitmix64(static_cast<std::uint64_t>(purpose));
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  h = splitmix64(h ^ c);
  return h;
}

class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  /// Number of 32-bit words consumed so far.
  std::uint64_t position() const noexcept { return block_ == 0 ? 0 : (block_ - 1) * 4 + lane_; }

  std::uint32_t next_u32() {
    if (lane_ == 4) refill();
    return buf_[lane_++];
  }

  std::uint64_t next_u64() {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double next_double() {
    const std::uint64_t a = next_u32() >> 5, b = next_u32() >> 6;
    return (double(a) * 67108864.0 + double(b)) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) {
    if (!(lo < hi)) throw std::invalid_argument("uniform requires lo < hi");
    const double v = lo + (hi - lo) * next_double();
    return v < hi ? v : std::nextafter(hi, lo);
  }

  /// Box-Muller, cosine branch only: one normal per two uniforms.
  double normal(double mean, double stddev) {
    if (!(stddev >= 0.0)) throw std::invalid_argument("normal requires stddev >= 0");
    const double u1 = 1.0 - next_double();  // (0, 1]
    const double u2 = next_double();
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    return mean + stddev * z;
  }

  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("below(0)");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do r = next_u64();
    while (r >= limit);
    return r % n;
  }

 private:
  void refill() {
    const PhiloxBlock ctr = {static_cast<std::uint32_t>(block_),
                             static_cast<std::uint32_t>(block_ >> 32),
                             static_cast<std::uint32_t>(stream_),
                             static_cast<std::uint32_t>(stream_ >> 32)};
    buf_ = philox4x32_10(ctr, {static_cast<std::uint32_t>(seed_),
                               static_cast<std::uint32_t>(seed_ >> 32)});
    ++block_;
    lane_ = 0;
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  unsigned lane_ = 4;
  PhiloxBlock buf_{};
};

template <typename T>
Tensor<T> rng_uniform(RngStream& rng, double lo, double hi, Shape shape) {
  if (!(lo < hi)) throw std::invalid_argument("rng_uniform requires lo < hi");
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) {
    v = static_cast<T>(rng.uniform(lo, hi));
    if (!(v < static_cast<T>(hi))) v = std::nextafter(static_cast<T>(hi), static_cast<T>(lo));
  }
  return t;
}

template <typename T>
Tensor<T> rng_normal(RngStream& rng, double mean, double stddev, Shape shape) {
  if (!(stddev >= 0.0)) throw std::invalid_argument("rng_normal requires stddev >= 0");
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.normal(mean, stddev));
  return t;
}

/// Fisher-Yates using the stream's unbiased integer draws.
template <typename Vec>
void shuffle_in_place(Vec& v, RngStream& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace mic
