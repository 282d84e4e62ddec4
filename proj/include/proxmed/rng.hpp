#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace proxmed {

/// Philox4x32-10 block function (Salmon et al., Random123).
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

/// Stateless counter-based generator.
///
/// A draw is addressed by (row, channel, index) inside a stream; the key is the
/// 64-bit seed. The Philox counter words are (index, row, channel, stream), so
/// every (seed, stream, row, channel) cell owns an independent sequence and
/// results never depend on evaluation order or thread count.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint32_t stream) noexcept
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_(stream) {}

  std::array<std::uint32_t, 4> block(std::uint32_t row, std::uint32_t channel,
                                     std::uint32_t index) const noexcept {
    return philox4x32({index, row, channel, stream_}, key_);
  }

  /// Two 64-bit words from one Philox block.
  std::array<std::uint64_t, 2> bits(std::uint32_t row, std::uint32_t channel,
                                    std::uint32_t index = 0) const noexcept {
    const auto b = block(row, channel, index);
    return {(std::uint64_t{b[0]} << 32) | b[1], (std::uint64_t{b[2]} << 32) | b[3]};
  }

  /// Uniform on the open interval (0, 1).
  static double to_unit(std::uint64_t x) noexcept {
    return (static_cast<double>(x >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(std::uint32_t row, std::uint32_t channel, std::uint32_t index = 0) const noexcept {
    return to_unit(bits(row, channel, index)[0]);
  }

  /// Uniform integer in [0, bound) by multiply-high.
  std::uint64_t below(std::uint64_t bound, std::uint32_t row, std::uint32_t channel,
                      std::uint32_t index = 0) const noexcept {
    const unsigned __int128 prod =
        static_cast<unsigned __int128>(bits(row, channel, index)[0]) * bound;
    return static_cast<std::uint64_t>(prod >> 64);
  }

  /// Standard normals via Box-Muller, two per Philox block.
  void normals(std::uint32_t row, std::uint32_t channel, std::span<double> out) const noexcept {
    for (std::size_t k = 0; k < out.size(); k += 2) {
      const auto w = bits(row, channel, static_cast<std::uint32_t>(k / 2));
      const double radius = std::sqrt(-2.0 * std::log(to_unit(w[0])));
      const double angle = 2.0 * std::numbers::pi * to_unit(w[1]);
      out[k] = radius * std::cos(angle);
      if (k + 1 < out.size()) out[k + 1] = radius * std::sin(angle);
    }
  }

  double normal(std::uint32_t row, std::uint32_t channel) const noexcept {
    double z[1];
    normals(row, channel, z);
    return z[0];
  }

 private:
  std::array<std::uint32_t, 2> key_;
  std::uint32_t stream_;
};

}  // namespace proxmed
