#pragma once

// Counter-based random numbers shared by every module.
//
// Algorithm (stable across languages):
//   * Philox4x32-10 with key = {seed & 0xffffffff, seed >> 32} and
//     counter = {block & 0xffffffff, block >> 32, stream & 0xffffffff, stream >> 32}.
//   * Each block yields four 32-bit words w0..w3, combined into two 64-bit
//     words a = w0 | w1 << 32, b = w2 | w3 << 32.
//   * uniform(): (a >> 11) * 2^-53, i.e. [0, 1). Block counter advances by
//     one per *pair* of uniforms; the second value comes from b.
//   * normal(): Box-Muller on one block: u1 = 1 - (a >> 11) * 2^-53 in (0, 1],
//     u2 = (b >> 11) * 2^-53; z0 = sqrt(-2 ln u1) cos(2 pi u2),
//     z1 = sqrt(-2 ln u1) sin(2 pi u2). z0 is returned first, then z1.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace dip {

inline std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                                   std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed, std::uint64_t stream = 0)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_(stream) {}

  double uniform() {
    if (have_spare_uniform_) {
      have_spare_uniform_ = false;
      return spare_uniform_;
    }
    const auto [a, b] = next_pair();
    spare_uniform_ = to_unit(b);
    have_spare_uniform_ = true;
    return to_unit(a);
  }

  double normal() {
    if (have_spare_normal_) {
      have_spare_normal_ = false;
      return spare_normal_;
    }
    const auto [a, b] = next_pair();
    const double u1 = 1.0 - to_unit(a);
    const double u2 = to_unit(b);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_normal_ = radius * std::sin(angle);
    have_spare_normal_ = true;
    return radius * std::cos(angle);
  }

  // Uniform integer in [0, n) by rejection on 64-bit words.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    for (;;) {
      const auto [a, b] = next_pair();
      if (a < limit) return a % n;
      if (b < limit) return b % n;
    }
  }

  std::uint64_t blocks_consumed() const { return block_; }

 private:
  std::array<std::uint64_t, 2> next_pair() {
    const auto w = philox4x32_10(
        {static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
         static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)},
        key_);
    ++block_;
    return {std::uint64_t{w[0]} | (std::uint64_t{w[1]} << 32),
            std::uint64_t{w[2]} | (std::uint64_t{w[3]} << 32)};
  }

  static double to_unit(std::uint64_t word) { return static_cast<double>(word >> 11) * 0x1.0p-53; }

  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  bool have_spare_uniform_ = false;
  bool have_spare_normal_ = false;
  double spare_uniform_ = 0.0;
  double spare_normal_ = 0.0;
};

// Derives an independent stream id from a parent seed and a label so that
// sub-tasks (e.g. data vs. noise draws) never share counters.
inline std::uint64_t derive_stream(std::uint64_t parent, std::uint64_t label) {
  const auto w = philox4x32_10({static_cast<std::uint32_t>(label), static_cast<std::uint32_t>(label >> 32), 0x5eedu, 0u},
                               {static_cast<std::uint32_t>(parent), static_cast<std::uint32_t>(parent >> 32)});
  return std::uint64_t{w[0]} | (std::uint64_t{w[1]} << 32);
}

}  // namespace dip
