#pragma once

// Differentiable primitives recorded on a Tape.

#include <cmath>
#include <memory>
#include <vector>

#include "s2s/kernels.hpp"
#include "s2s/tape.hpp"

namespace s2s::ops {

inline constexpr double kLeakySlope = 0.2;

template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var weight, Var bias) {
  Tensor<T> out = kernels::conv2d_forward(tape.value(input), tape.value(weight), tape.value(bias));
  return tape.record(
      std::move(out), {input, weight, bias},
      [input, weight, bias](Tape<T>& t, const Tensor<T>& g) {
        kernels::conv2d_backward(t.value(input), t.value(weight), g, t.grad_sink(input), t.grad_sink(weight),
                                 t.grad_sink(bias));
      },
      "conv2d");
}

template <typename T>
Var leaky_relu(Tape<T>& tape, Var x, double slope = kLeakySlope) {
  detail::require(slope > 0.0 && slope < 1.0, "leaky_relu: slope must be in (0,1)");
  const T s = static_cast<T>(slope);
  return tape.record(
      kernels::leaky_relu_forward(tape.value(x), s), {x},
      [x, s](Tape<T>& t, const Tensor<T>& g) {
        if (auto* gx = t.grad_sink(x)) kernels::leaky_relu_backward(t.value(x), s, g, *gx);
      },
      "leaky_relu");
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var x) {
  return tape.record(
      kernels::sigmoid_forward(tape.value(x)), {x},
      [x](Tape<T>& t, const Tensor<T>& g) {
        if (auto* gx = t.grad_sink(x)) kernels::sigmoid_backward(kernels::sigmoid_forward(t.value(x)), g, *gx);
      },
      "sigmoid");
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  detail::require(av.shape() == bv.shape(), "mul: shape mismatch " + to_string(av.shape()) + " vs " +
                                                to_string(bv.shape()));
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return tape.record(
      std::move(out), {a, b},
      [a, b](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& av = t.value(a);
        const Tensor<T>& bv = t.value(b);
        if (auto* ga = t.grad_sink(a))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
        if (auto* gb = t.grad_sink(b))
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
      },
      "mul");
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  detail::require(av.shape() == bv.shape(), "add: shape mismatch");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return tape.record(
      std::move(out), {a, b},
      [a, b](Tape<T>& t, const Tensor<T>& g) {
        for (Var v : {a, b})
          if (auto* gv = t.grad_sink(v))
            for (std::size_t i = 0; i < g.size(); ++i) (*gv)[i] += g[i];
      },
      "add");
}

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor) {
  Tensor<T> out = tape.value(x);
  for (T& v : out.data()) v *= factor;
  return tape.record(
      std::move(out), {x},
      [x, factor](Tape<T>& t, const Tensor<T>& g) {
        if (auto* gx = t.grad_sink(x))
          for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * factor;
      },
      "scale");
}

template <typename T>
Var sum(Tape<T>& tape, Var x) {
  T acc = 0;
  for (T v : tape.value(x).data()) acc += v;
  return tape.record(
      Tensor<T>({1}, std::vector<T>{acc}), {x},
      [x](Tape<T>& t, const Tensor<T>& g) {
        if (auto* gx = t.grad_sink(x))
          for (T& v : gx->data()) v += g[0];
      },
      "sum");
}

/// Σ weights ⊙ x with constant weights (used to project outputs onto a scalar).
template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, Tensor<T> weights) {
  const Tensor<T>& xv = tape.value(x);
  detail::require(xv.shape() == weights.shape(), "weighted_sum: shape mismatch");
  T acc = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += weights[i] * xv[i];
  return tape.record(
      Tensor<T>({1}, std::vector<T>{acc}), {x},
      [x, w = std::move(weights)](Tape<T>& t, const Tensor<T>& g) {
        if (auto* gx = t.grad_sink(x))
          for (std::size_t i = 0; i < w.size(); ++i) (*gx)[i] += g[0] * w[i];
      },
      "weighted_sum");
}

template <typename T>
Var max_pool2(Tape<T>& tape, Var x) {
  auto argmax = std::make_shared<std::vector<std::uint32_t>>();
  Tensor<T> out = kernels::max_pool2_forward(tape.value(x), argmax.get());
  return tape.record(
      std::move(out), {x},
      [x, argmax](Tape<T>& t, const Tensor<T>& g) {
        if (auto* gx = t.grad_sink(x))
          for (std::size_t i = 0; i < g.size(); ++i) (*gx)[(*argmax)[i]] += g[i];
      },
      "max_pool2");
}

template <typename T>
Var upsample_nearest2(Tape<T>& tape, Var x) {
  return tape.record(
      kernels::upsample_nearest2_forward(tape.value(x)), {x},
      [x](Tape<T>& t, const Tensor<T>& g) {
        if (auto* gx = t.grad_sink(x)) kernels::upsample_nearest2_backward(g, *gx);
      },
      "upsample_nearest2");
}

template <typename T>
Var concat_channels(Tape<T>& tape, Var a, Var b) {
  const std::size_t a_size = tape.value(a).size();
  const std::size_t b_size = tape.value(b).size();
  return tape.record(
      kernels::concat_channels_forward(tape.value(a), tape.value(b)), {a, b},
      [a, b, a_size, b_size](Tape<T>& t, const Tensor<T>& g) {
        if (auto* ga = t.grad_sink(a))
          for (std::size_t i = 0; i < a_size; ++i) (*ga)[i] += g[i];
        if (auto* gb = t.grad_sink(b))
          for (std::size_t i = 0; i < b_size; ++i) (*gb)[i] += g[a_size + i];
      },
      "concat_channels");
}

/// Inverted dropout; identity when inactive. The realized mask is a pure function of `rng`.
template <typename T>
Var dropout(Tape<T>& tape, Var x, double p, const RngStream& rng, bool active) {
  detail::require(p >= 0.0 && p < 1.0, "dropout: p must be in [0,1), got " + std::to_string(p));
  if (!active || p == 0.0) return x;
  auto scales = std::make_shared<std::vector<T>>(kernels::dropout_scales<T>(tape.value(x).size(), p, rng));
  Tensor<T> out = tape.value(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*scales)[i];
  return tape.record(
      std::move(out), {x},
      [x, scales](Tape<T>& t, const Tensor<T>& g) {
        if (auto* gx = t.grad_sink(x))
          for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * (*scales)[i];
      },
      "dropout");
}

/// Spatial crop to the top-left (height, width) window.
template <typename T>
Var crop(Tape<T>& tape, Var x, std::size_t height, std::size_t width) {
  const Tensor<T>& xv = tape.value(x);
  detail::require(xv.rank() == 3 && height <= xv.dim(1) && width <= xv.dim(2), "crop: window exceeds input");
  if (height == xv.dim(1) && width == xv.dim(2)) return x;
  Tensor<T> out({xv.dim(0), height, width});
  for (std::size_t c = 0; c < xv.dim(0); ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t i = 0; i < width; ++i) out.at(c, y, i) = xv.at(c, y, i);
  return tape.record(
      std::move(out), {x},
      [x, height, width](Tape<T>& t, const Tensor<T>& g) {
        if (auto* gx = t.grad_sink(x))
          for (std::size_t c = 0; c < gx->dim(0); ++c)
            for (std::size_t y = 0; y < height; ++y)
              for (std::size_t i = 0; i < width; ++i) gx->at(c, y, i) += g.at(c, y, i);
      },
      "crop");
}

}  // namespace s2s::ops
