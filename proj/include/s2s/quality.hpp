#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "s2s/image.hpp"
#include "s2s/rng.hpp"

namespace s2s {

inline constexpr double kPsnrCapDb = 99.0;

struct NoiseSpec {
  double sigma = 25.0;  // on the 8-bit [0,255] scale
  std::uint64_t seed = 0;
};

/// y = x + n with n ~ N(0, (σ/255)²) i.i.d. Deliberately not clamped.
inline Image add_awgn(const Image& x, const NoiseSpec& spec) {
  detail::require(spec.sigma >= 0.0, "add_awgn: sigma must be non-negative");
  Image y = x;
  if (spec.sigma == 0.0) return y;
  const RngStream rng(spec.seed, streams::kNoise);
  const double s = spec.sigma / 255.0;
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = static_cast<float>(x.data[i] + s * rng.normal(i));
  return y;
}

inline double mse(const Image& a, const Image& b) {
  detail::require(a.same_shape(b), "metrics: image shapes differ");
  detail::require(a.size() > 0, "metrics: empty image");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

/// Peak 1.0; 99 dB once MSE drops below 1e-10.
inline double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m < 1e-10) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / m));
}

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma, std::size_t radius) {
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(radius);
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += k[i];
  }
  for (double& v : k) v /= total;
  return k;
}

// Separable filter over "valid" positions only (output shrinks by 2·radius per axis).
inline std::vector<double> filter_valid(const std::vector<double>& plane, std::size_t h, std::size_t w,
                                        const std::vector<double>& k) {
  const std::size_t n = k.size(), oh = h - n + 1, ow = w - n + 1;
  std::vector<double> rows(h * ow, 0.0), out(oh * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += k[i] * plane[y * w + x + i];
      rows[y * ow + x] = acc;
    }
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += k[i] * rows[(y + i) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

}  // namespace detail

/// Mean SSIM: 11×11 Gaussian window (σ = 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1,
/// over every fully-contained window, averaged over channels.
inline double ssim(const Image& a, const Image& b) {
  constexpr std::size_t kWindow = 11;
  detail::require(a.same_shape(b), "ssim: image shapes differ");
  detail::require(a.height >= kWindow && a.width >= kWindow, "ssim: image smaller than the 11x11 window");
  const auto k = detail::gaussian_kernel(1.5, kWindow / 2);
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const std::size_t h = a.height, w = a.width, n = a.pixels();

  double total = 0.0;
  for (std::size_t c = 0; c < a.channels; ++c) {
    std::vector<double> pa(n), pb(n), paa(n), pbb(n), pab(n);
    for (std::size_t i = 0; i < n; ++i) {
      pa[i] = a.data[c * n + i];
      pb[i] = b.data[c * n + i];
      paa[i] = pa[i] * pa[i];
      pbb[i] = pb[i] * pb[i];
      pab[i] = pa[i] * pb[i];
    }
    const auto mu_a = detail::filter_valid(pa, h, w, k);
    const auto mu_b = detail::filter_valid(pb, h, w, k);
    const auto e_aa = detail::filter_valid(paa, h, w, k);
    const auto e_bb = detail::filter_valid(pbb, h, w, k);
    const auto e_ab = detail::filter_valid(pab, h, w, k);
    double acc = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double var_a = e_aa[i] - mu_a[i] * mu_a[i];
      const double var_b = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      acc += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (var_a + var_b + c2));
    }
    total += acc / static_cast<double>(mu_a.size());
  }
  return total / static_cast<double>(a.channels);
}

/// Normalized truncated Gaussian blur, radius ceil(3σ), reflection boundary.
inline Image gaussian_lpf(const Image& y, double sigma_blur = 1.0) {
  detail::require(sigma_blur > 0.0, "gaussian_lpf: sigma must be positive");
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma_blur));
  const auto k = detail::gaussian_kernel(sigma_blur, radius);
  const auto r = static_cast<std::ptrdiff_t>(radius);
  Image out(y.height, y.width, y.channels);
  std::vector<double> rows(y.pixels());
  for (std::size_t c = 0; c < y.channels; ++c) {
    for (std::size_t yy = 0; yy < y.height; ++yy)
      for (std::size_t x = 0; x < y.width; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -r; i <= r; ++i)
          acc += k[static_cast<std::size_t>(i + r)] *
                 y.at(c, yy, reflect_index(static_cast<std::ptrdiff_t>(x) + i, y.width));
        rows[yy * y.width + x] = acc;
      }
    for (std::size_t yy = 0; yy < y.height; ++yy)
      for (std::size_t x = 0; x < y.width; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -r; i <= r; ++i)
          acc += k[static_cast<std::size_t>(i + r)] *
                 rows[reflect_index(static_cast<std::ptrdiff_t>(yy) + i, y.height) * y.width + x];
        out.at(c, yy, x) = static_cast<float>(acc);
      }
  }
  return out;
}

struct MetricReport {
  double psnr_db = 0.0;
  double ssim = 0.0;

  [[nodiscard]] std::string to_text() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << "PSNR=" << psnr_db << " dB SSIM=" << ssim;
    return os.str();
  }
  [[nodiscard]] std::string to_record() const {
    std::ostringstream os;
    os << std::setprecision(10) << "psnr_db=" << psnr_db << " ssim=" << ssim;
    return os.str();
  }
};

inline MetricReport evaluate(const Image& test, const Image& reference) {
  return {psnr(test, reference), ssim(test, reference)};
}

}  // namespace s2s
