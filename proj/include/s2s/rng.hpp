#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace s2s {

// Philox4x32-10 (Salmon et al., "Parallel random numbers: as easy as 1, 2, 3").
// Pure function of (key, counter); used as the only entropy source in the library.
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

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Well-known stream ids. Children of these are derived per step / instance / layer.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kTrainMask = 2;
inline constexpr std::uint64_t kTrainDropout = 3;
inline constexpr std::uint64_t kEnsembleMask = 4;
inline constexpr std::uint64_t kEnsembleDropout = 5;
inline constexpr std::uint64_t kNoise = 6;
}  // namespace streams

/// Deterministic random stream keyed by (seed, stream id). Every value is addressed
/// by an explicit draw index, so results do not depend on call order or threading.
class RngStream {
 public:
  constexpr RngStream() = default;
  constexpr RngStream(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

  [[nodiscard]] constexpr std::uint64_t seed() const { return seed_; }
  [[nodiscard]] constexpr std::uint64_t stream() const { return stream_; }

  /// Independent stream for a sub-task (training step, ensemble member, layer).
  [[nodiscard]] constexpr RngStream child(std::uint64_t tag) const {
    return {seed_, splitmix64(stream_ ^ splitmix64(tag + 0x632BE59BD9B4E019ull))};
  }

  [[nodiscard]] std::array<std::uint32_t, 4> block(std::uint64_t block_index) const {
    return philox4x32({static_cast<std::uint32_t>(block_index),
                       static_cast<std::uint32_t>(block_index >> 32),
                       static_cast<std::uint32_t>(stream_),
                       static_cast<std::uint32_t>(stream_ >> 32)},
                      {static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)});
  }

  [[nodiscard]] std::uint32_t word(std::uint64_t index) const { return block(index / 4)[index % 4]; }

  /// Uniform in [0,1) with 24 random bits.
  [[nodiscard]] float uniform(std::uint64_t index) const { return to_unit_float(word(index)); }

  /// Standard normal; consumes block `index` (Box-Muller on two 53-bit uniforms).
  [[nodiscard]] double normal(std::uint64_t index) const {
    const auto b = block(index);
    const double u1 = to_unit_double_open(b[0], b[1]);
    const double u2 = to_unit_double(b[2], b[3]);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// out[i] = uniform(first + i), generated a block at a time.
  void fill_uniform(std::span<float> out, std::uint64_t first = 0) const {
    std::size_t i = 0;
    while (i < out.size()) {
      const std::uint64_t idx = first + i;
      const auto b = block(idx / 4);
      for (std::uint64_t lane = idx % 4; lane < 4 && i < out.size(); ++lane, ++i) {
        out[i] = to_unit_float(b[lane]);
      }
    }
  }

  static constexpr float to_unit_float(std::uint32_t w) {
    return static_cast<float>(w >> 8) * 0x1.0p-24f;
  }

 private:
  static double to_unit_double(std::uint32_t a, std::uint32_t b) {
    const std::uint64_t bits = (std::uint64_t{a} << 21) ^ (std::uint64_t{b} >> 11);
    return static_cast<double>(bits & ((1ull << 53) - 1)) * 0x1.0p-53;
  }
  // (0,1]: safe for log().
  static double to_unit_double_open(std::uint32_t a, std::uint32_t b) {
    return 1.0 - to_unit_double(a, b);
  }

  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
};

}  // namespace s2s
