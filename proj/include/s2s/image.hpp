#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "s2s/error.hpp"
#include "s2s/tensor.hpp"

namespace s2s {

/// H×W×C image with nominal range [0,1], C ∈ {1,3}. Stored planar (channel-major)
/// so it maps directly onto a (C,H,W) tensor.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f)
      : height(h), width(w), channels(c), data(h * w * c, fill) {}

  [[nodiscard]] std::size_t pixels() const { return height * width; }
  [[nodiscard]] std::size_t size() const { return data.size(); }
  [[nodiscard]] bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  float& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }

  template <typename T>
  [[nodiscard]] Tensor<T> to_tensor() const {
    return Tensor<T>({channels, height, width}, std::vector<T>(data.begin(), data.end()));
  }

  template <typename T>
  static Image from_tensor(const Tensor<T>& t) {
    detail::require(t.rank() == 3, "image: tensor must be (C,H,W), got " + to_string(t.shape()));
    Image img(t.dim(1), t.dim(2), t.dim(0));
    std::transform(t.data().begin(), t.data().end(), img.data.begin(),
                   [](T v) { return static_cast<float>(v); });
    return img;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

inline Image clamp01(Image img) {
  for (float& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

struct CropRecord {
  std::size_t height = 0;
  std::size_t width = 0;
  friend bool operator==(const CropRecord&, const CropRecord&) = default;
};

/// Reflection-pads the right and bottom edges up to (height, width).
inline Image reflect_pad(const Image& img, std::size_t height, std::size_t width) {
  detail::require(img.height >= 1 && img.width >= 1, "reflect_pad: empty image");
  detail::require(height >= img.height && width >= img.width, "reflect_pad: target smaller than image");
  Image out(height, width, img.channels);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < height; ++y) {
      const std::size_t sy = reflect_index(static_cast<std::ptrdiff_t>(y), img.height);
      for (std::size_t x = 0; x < width; ++x)
        out.at(c, y, x) = img.at(c, sy, reflect_index(static_cast<std::ptrdiff_t>(x), img.width));
    }
  return out;
}

inline Image crop(const Image& img, const CropRecord& rec) {
  detail::require(rec.height <= img.height && rec.width <= img.width, "crop: record exceeds image");
  Image out(rec.height, rec.width, img.channels);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < rec.height; ++y)
      for (std::size_t x = 0; x < rec.width; ++x) out.at(c, y, x) = img.at(c, y, x);
  return out;
}

inline std::size_t round_up(std::size_t n, std::size_t multiple) {
  return (n + multiple - 1) / multiple * multiple;
}

struct PaddedImage {
  Image image;
  CropRecord crop;
};

/// Pads to the next multiples of 32 (the network's five 2× poolings). The crop
/// record restores the original extent exactly.
inline PaddedImage pad_to_multiple32(const Image& img) {
  detail::require(img.height >= 1 && img.width >= 1, "pad_to_multiple32: empty image");
  return {reflect_pad(img, round_up(img.height, 32), round_up(img.width, 32)), {img.height, img.width}};
}

}  // namespace s2s
