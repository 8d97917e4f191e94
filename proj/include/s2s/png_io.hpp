#pragma once

// 8-bit grayscale / RGB PNG I/O on top of libpng's simplified API.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "s2s/error.hpp"
#include "s2s/image.hpp"

namespace s2s {

/// Decodes an 8-bit gray or RGB PNG into [0,1] by /255. 16-bit, palette and alpha
/// images raise UnsupportedFormat.
inline Image read_png(const std::string& path) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw IoError("cannot read PNG " + path + ": " + png.message);

  const png_uint_32 fmt = png.format;
  std::string unsupported;
  if (fmt & PNG_FORMAT_FLAG_LINEAR) unsupported = "16-bit samples";
  else if (fmt & PNG_FORMAT_FLAG_COLORMAP) unsupported = "palette color";
  else if (fmt & PNG_FORMAT_FLAG_ALPHA) unsupported = "alpha channel";
  if (!unsupported.empty()) {
    png_image_free(&png);
    throw UnsupportedFormat("unsupported PNG " + path + " (" + unsupported + "); expected 8-bit gray or RGB");
  }

  const bool color = (fmt & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr))
    throw IoError("cannot decode PNG " + path + ": " + png.message);

  Image img(png.height, png.width, color ? 3 : 1);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c)
        img.at(c, y, x) = static_cast<float>(buffer[(y * img.width + x) * img.channels + c]) / 255.0f;
  return img;
}

/// Clamp to [0,1], scale by 255, round half to even.
inline std::uint8_t quantize8(float v) {
  detail::require(std::isfinite(v), "write_png: non-finite pixel value");
  return static_cast<std::uint8_t>(std::nearbyint(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline void write_png(const std::string& path, const Image& img) {
  detail::require(img.channels == 1 || img.channels == 3, "write_png: image must have 1 or 3 channels");
  detail::require(img.height > 0 && img.width > 0, "write_png: empty image");
  std::vector<png_byte> buffer(img.size());
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c)
        buffer[(y * img.width + x) * img.channels + c] = quantize8(img.at(c, y, x));

  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path + ": " + png.message);
}

}  // namespace s2s
