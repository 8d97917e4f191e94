#pragma once

#include <cstdint>
#include <vector>

#include "s2s/image.hpp"
#include "s2s/rng.hpp"

namespace s2s {

/// Per-pixel Bernoulli mask: keep[i] == 1 means the pixel is visible to the network,
/// 0 means it is hidden and serves as a regression target.
struct BernoulliMask {
  std::size_t height = 0;
  std::size_t width = 0;
  double drop_probability = 0.0;
  std::vector<std::uint8_t> keep;

  [[nodiscard]] std::size_t pixels() const { return height * width; }
  [[nodiscard]] bool kept(std::size_t y, std::size_t x) const { return keep[y * width + x] != 0; }
  [[nodiscard]] std::size_t dropped_count() const {
    std::size_t n = 0;
    for (auto k : keep) n += k == 0;
    return n;
  }

  static BernoulliMask all_kept(std::size_t h, std::size_t w) { return {h, w, 0.0, std::vector<std::uint8_t>(h * w, 1)}; }
  static BernoulliMask all_dropped(std::size_t h, std::size_t w) { return {h, w, 1.0, std::vector<std::uint8_t>(h * w, 0)}; }

  friend bool operator==(const BernoulliMask&, const BernoulliMask&) = default;
};

/// Pixel i is dropped iff rng.uniform(i) < p.
inline BernoulliMask sample_mask(std::size_t height, std::size_t width, double p, const RngStream& rng) {
  detail::require(height > 0 && width > 0, "sample_mask: dimensions must be positive");
  detail::require(p >= 0.0 && p < 1.0, "sample_mask: p must be in [0,1), got " + std::to_string(p));
  BernoulliMask mask{height, width, p, std::vector<std::uint8_t>(height * width, 1)};
  std::vector<float> u(mask.pixels());
  rng.fill_uniform(u);
  const auto threshold = static_cast<float>(p);
  for (std::size_t i = 0; i < u.size(); ++i) mask.keep[i] = u[i] < threshold ? 0 : 1;
  return mask;
}

/// Mirrors a mask the same way reflect_pad mirrors the image, so a hidden pixel
/// stays hidden in its reflections.
inline BernoulliMask reflect_pad(const BernoulliMask& mask, std::size_t height, std::size_t width) {
  BernoulliMask out{height, width, mask.drop_probability, std::vector<std::uint8_t>(height * width)};
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = reflect_index(static_cast<std::ptrdiff_t>(y), mask.height);
    for (std::size_t x = 0; x < width; ++x)
      out.keep[y * width + x] = mask.keep[sy * mask.width + reflect_index(static_cast<std::ptrdiff_t>(x), mask.width)];
  }
  return out;
}

struct TrainingPair {
  Image input;   // b ⊙ y
  Image target;  // (1 - b) ⊙ y
  BernoulliMask mask;
};

/// Splits y by the mask, identically in every channel. input + target == y bit-exactly.
inline TrainingPair make_pair(const Image& y, const BernoulliMask& mask) {
  detail::require(mask.height == y.height && mask.width == y.width,
                  "make_pair: mask is " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                      ", image is " + std::to_string(y.height) + "x" + std::to_string(y.width));
  TrainingPair pair{Image(y.height, y.width, y.channels), Image(y.height, y.width, y.channels), mask};
  for (std::size_t c = 0; c < y.channels; ++c)
    for (std::size_t i = 0; i < y.pixels(); ++i) {
      const std::size_t k = c * y.pixels() + i;
      (mask.keep[i] ? pair.input.data[k] : pair.target.data[k]) = y.data[k];
    }
  return pair;
}

}  // namespace s2s
