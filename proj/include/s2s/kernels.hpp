#pragma once

// Numeric forward/backward kernels shared by the taped and the eager execution paths.
// Backward kernels accumulate into their output gradients.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "s2s/rng.hpp"
#include "s2s/tensor.hpp"

namespace s2s::kernels {

template <typename T>
using RowMajorMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kernel = 0;
  std::size_t pad = 0;

  [[nodiscard]] std::size_t patch_size() const { return in_channels * kernel * kernel; }
  [[nodiscard]] std::size_t pixels() const { return height * width; }
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  detail::require(input.rank() == 3, "conv2d: input must be (C,H,W), got " + to_string(input.shape()));
  detail::require(weight.rank() == 4, "conv2d: weight must be (Cout,Cin,k,k), got " + to_string(weight.shape()));
  ConvGeometry g{input.dim(0), weight.dim(0), input.dim(1), input.dim(2), weight.dim(2), weight.dim(2) / 2};
  detail::require(weight.dim(1) == g.in_channels,
                  "conv2d: weight expects " + std::to_string(weight.dim(1)) + " input channels, got " +
                      std::to_string(g.in_channels));
  detail::require(weight.dim(2) == weight.dim(3), "conv2d: kernel must be square");
  detail::require(g.kernel % 2 == 1, "conv2d: kernel size must be odd, got " + std::to_string(g.kernel));
  detail::require(bias.rank() == 1 && bias.dim(0) == g.out_channels, "conv2d: bias must be (Cout)");
  // Extents of 1 (the bottleneck of a 32-pixel input) fall back to replication.
  for (std::size_t extent : {g.height, g.width}) {
    detail::require(extent == 1 || extent >= g.pad + 1,
                    "conv2d: reflection padding " + std::to_string(g.pad) + " needs extent >= " +
                        std::to_string(g.pad + 1) + ", got " + std::to_string(extent));
  }
  return g;
}

// Precomputed reflected source index for every (kernel tap, output coordinate).
inline std::vector<std::size_t> reflect_table(std::size_t extent, std::size_t kernel, std::size_t pad) {
  std::vector<std::size_t> table(kernel * extent);
  for (std::size_t k = 0; k < kernel; ++k)
    for (std::size_t i = 0; i < extent; ++i)
      table[k * extent + i] =
          reflect_index(static_cast<std::ptrdiff_t>(i + k) - static_cast<std::ptrdiff_t>(pad), extent);
  return table;
}

// Rows per im2col tile so that a tile holds at most ~4M scalars.
inline std::size_t tile_rows(const ConvGeometry& g) {
  constexpr std::size_t kBudget = std::size_t{1} << 22;
  const std::size_t per_row = std::max<std::size_t>(1, g.patch_size() * g.width);
  return std::clamp<std::size_t>(kBudget / per_row, 1, g.height);
}

// Output columns [lo, hi) whose tap kx reads x + kx - pad without reflecting.
inline std::pair<std::size_t, std::size_t> straight_span(const ConvGeometry& g, std::size_t kx) {
  const std::size_t lo = std::min(g.width, g.pad > kx ? g.pad - kx : 0);
  const std::size_t limit = g.width + g.pad - kx;  // x + kx - pad < width
  const std::size_t hi = std::max(lo, std::min(g.width, limit));
  return {lo, hi};
}

template <typename T>
void im2col(const T* input, const ConvGeometry& g, std::size_t y0, std::size_t y1,
            const std::vector<std::size_t>& ymap, const std::vector<std::size_t>& xmap, T* col) {
  const std::size_t len = (y1 - y0) * g.width;
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    const T* plane = input + ci * g.pixels();
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        T* dst = col + ((ci * g.kernel + ky) * g.kernel + kx) * len;
        const std::size_t* xm = xmap.data() + kx * g.width;
        const auto [lo, hi] = straight_span(g, kx);
        for (std::size_t y = y0; y < y1; ++y) {
          const T* src = plane + ymap[ky * g.height + y] * g.width;
          for (std::size_t x = 0; x < lo; ++x) dst[x] = src[xm[x]];
          std::copy(src + lo + kx - g.pad, src + hi + kx - g.pad, dst + lo);
          for (std::size_t x = hi; x < g.width; ++x) dst[x] = src[xm[x]];
          dst += g.width;
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, std::size_t y0, std::size_t y1,
                const std::vector<std::size_t>& ymap, const std::vector<std::size_t>& xmap, T* grad) {
  const std::size_t len = (y1 - y0) * g.width;
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    T* plane = grad + ci * g.pixels();
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const T* src = col + ((ci * g.kernel + ky) * g.kernel + kx) * len;
        const std::size_t* xm = xmap.data() + kx * g.width;
        const auto [lo, hi] = straight_span(g, kx);
        for (std::size_t y = y0; y < y1; ++y) {
          T* dst = plane + ymap[ky * g.height + y] * g.width;
          for (std::size_t x = 0; x < lo; ++x) dst[xm[x]] += src[x];
          for (std::size_t x = lo; x < hi; ++x) dst[x + kx - g.pad] += src[x];
          for (std::size_t x = hi; x < g.width; ++x) dst[xm[x]] += src[x];
          src += g.width;
        }
      }
    }
  }
}

/// Stride-1 convolution with reflection padding (k-1)/2; output keeps the input size.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  const ConvGeometry g = conv_geometry(input, weight, bias);
  Tensor<T> out({g.out_channels, g.height, g.width});
  const auto ymap = reflect_table(g.height, g.kernel, g.pad);
  const auto xmap = reflect_table(g.width, g.kernel, g.pad);
  const std::size_t rows = tile_rows(g);
  std::vector<T> col(g.patch_size() * rows * g.width);

  using Stride = Eigen::OuterStride<>;
  const Eigen::Map<const RowMajorMatrix<T>> w(weight.ptr(), g.out_channels, g.patch_size());
  for (std::size_t y0 = 0; y0 < g.height; y0 += rows) {
    const std::size_t y1 = std::min(g.height, y0 + rows);
    const auto len = static_cast<Eigen::Index>((y1 - y0) * g.width);
    im2col(input.ptr(), g, y0, y1, ymap, xmap, col.data());
    const Eigen::Map<const RowMajorMatrix<T>> c(col.data(), g.patch_size(), len);
    Eigen::Map<RowMajorMatrix<T>, 0, Stride> o(out.ptr() + y0 * g.width, g.out_channels, len,
                                              Stride(static_cast<Eigen::Index>(g.pixels())));
    o.noalias() = w * c;
  }
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    T* plane = out.ptr() + co * g.pixels();
    const T b = bias[co];
    for (std::size_t i = 0; i < g.pixels(); ++i) plane[i] += b;
  }
  return out;
}

/// Any of the gradient outputs may be null when that gradient is not needed.
template <typename T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     Tensor<T>* grad_input, Tensor<T>* grad_weight, Tensor<T>* grad_bias) {
  const ConvGeometry g{input.dim(0), weight.dim(0), input.dim(1), input.dim(2), weight.dim(2),
                       weight.dim(2) / 2};
  if (grad_bias) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      const T* plane = grad_out.ptr() + co * g.pixels();
      T acc = 0;
      for (std::size_t i = 0; i < g.pixels(); ++i) acc += plane[i];
      (*grad_bias)[co] += acc;
    }
  }
  if (!grad_input && !grad_weight) return;

  const auto ymap = reflect_table(g.height, g.kernel, g.pad);
  const auto xmap = reflect_table(g.width, g.kernel, g.pad);
  const std::size_t rows = tile_rows(g);
  std::vector<T> col(g.patch_size() * rows * g.width);

  using Stride = Eigen::OuterStride<>;
  const Eigen::Map<const RowMajorMatrix<T>> w(weight.ptr(), g.out_channels, g.patch_size());
  for (std::size_t y0 = 0; y0 < g.height; y0 += rows) {
    const std::size_t y1 = std::min(g.height, y0 + rows);
    const auto len = static_cast<Eigen::Index>((y1 - y0) * g.width);
    const Eigen::Map<const RowMajorMatrix<T>, 0, Stride> dout(
        grad_out.ptr() + y0 * g.width, g.out_channels, len, Stride(static_cast<Eigen::Index>(g.pixels())));
    if (grad_weight) {
      im2col(input.ptr(), g, y0, y1, ymap, xmap, col.data());
      const Eigen::Map<const RowMajorMatrix<T>> c(col.data(), g.patch_size(), len);
      Eigen::Map<RowMajorMatrix<T>> dw(grad_weight->ptr(), g.out_channels, g.patch_size());
      dw.noalias() += dout * c.transpose();
    }
    if (grad_input) {
      Eigen::Map<RowMajorMatrix<T>> dcol(col.data(), g.patch_size(), len);
      dcol.noalias() = w.transpose() * dout;
      col2im_add(col.data(), g, y0, y1, ymap, xmap, grad_input->ptr());
    }
  }
}

template <typename T>
Tensor<T> leaky_relu_forward(const Tensor<T>& x, T slope) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : slope * x[i];
  return out;
}

// Subgradient at exactly 0 is `slope`.
template <typename T>
void leaky_relu_backward(const Tensor<T>& x, T slope, const Tensor<T>& grad_out, Tensor<T>& grad_in) {
  for (std::size_t i = 0; i < x.size(); ++i) grad_in[i] += grad_out[i] * (x[i] > T(0) ? T(1) : slope);
}

template <typename T>
T sigmoid(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid_forward(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
  return out;
}

template <typename T>
void sigmoid_backward(const Tensor<T>& out, const Tensor<T>& grad_out, Tensor<T>& grad_in) {
  for (std::size_t i = 0; i < out.size(); ++i) grad_in[i] += grad_out[i] * out[i] * (T(1) - out[i]);
}

template <typename T>
void check_pool_input(const Tensor<T>& x) {
  detail::require(x.rank() == 3, "max_pool2: input must be (C,H,W)");
  detail::require(x.dim(1) % 2 == 0 && x.dim(2) % 2 == 0,
                  "max_pool2: spatial dims must be even, got " + to_string(x.shape()));
}

/// 2x2 non-overlapping max. `argmax` receives the flat input offset of each winner;
/// ties go to the first element in scan order.
template <typename T>
Tensor<T> max_pool2_forward(const Tensor<T>& x, std::vector<std::uint32_t>* argmax) {
  check_pool_input(x);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> out({c, h / 2, w / 2});
  if (argmax) argmax->resize(out.size());
  std::size_t o = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; y += 2) {
      for (std::size_t xx = 0; xx < w; xx += 2, ++o) {
        const std::size_t base = (ch * h + y) * w + xx;
        const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
        std::size_t best = cand[0];
        for (int k = 1; k < 4; ++k)
          if (x[cand[k]] > x[best]) best = cand[k];
        out[o] = x[best];
        if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> upsample_nearest2_forward(const Tensor<T>& x) {
  detail::require(x.rank() == 3, "upsample_nearest2: input must be (C,H,W)");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> out({c, 2 * h, 2 * w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx) out.at(ch, y, xx) = x.at(ch, y / 2, xx / 2);
  return out;
}

template <typename T>
void upsample_nearest2_backward(const Tensor<T>& grad_out, Tensor<T>& grad_in) {
  const std::size_t c = grad_in.dim(0), h = grad_in.dim(1), w = grad_in.dim(2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx) grad_in.at(ch, y / 2, xx / 2) += grad_out.at(ch, y, xx);
}

// An empty tensor (no elements) is the identity for concatenation.
template <typename T>
Tensor<T> concat_channels_forward(const Tensor<T>& a, const Tensor<T>& b) {
  if (b.empty()) return a;
  if (a.empty()) return b;
  detail::require(a.rank() == 3 && b.rank() == 3, "concat_channels: inputs must be (C,H,W)");
  detail::require(a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2),
                  "concat_channels: spatial mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  Tensor<T> out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

/// Inverted-dropout multipliers: 0 with probability p, else 1/(1-p).
template <typename T>
std::vector<T> dropout_scales(std::size_t n, double p, const RngStream& rng) {
  detail::require(p >= 0.0 && p < 1.0, "dropout: p must be in [0,1), got " + std::to_string(p));
  std::vector<T> scales(n, T(1));
  if (p == 0.0) return scales;
  std::vector<float> u(n);
  rng.fill_uniform(u);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  const auto threshold = static_cast<float>(p);
  for (std::size_t i = 0; i < n; ++i) scales[i] = u[i] < threshold ? T(0) : keep;
  return scales;
}

}  // namespace s2s::kernels
