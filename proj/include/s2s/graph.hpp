#pragma once

// Two interchangeable executors for the network code: TapeGraph records onto a Tape
// for training, EagerGraph evaluates tensors directly and frees them as it goes.
// Both call the same kernels, so their forward values are bit-identical.

#include "s2s/kernels.hpp"
#include "s2s/ops.hpp"
#include "s2s/tape.hpp"

namespace s2s {

template <typename T>
class TapeGraph {
 public:
  using Scalar = T;
  using Value = Var;

  explicit TapeGraph(Tape<T>& tape) : tape_(tape) {}

  Tape<T>& tape() { return tape_; }
  const Tensor<T>& value(Value v) const { return tape_.value(v); }

  Value input(Tensor<T> t) { return tape_.constant(std::move(t)); }
  Value conv2d(Value x, Parameter<T>& w, Parameter<T>& b) {
    return ops::conv2d(tape_, x, tape_.parameter(w), tape_.parameter(b));
  }
  Value leaky_relu(Value x) { return ops::leaky_relu(tape_, x); }
  Value sigmoid(Value x) { return ops::sigmoid(tape_, x); }
  Value mul(Value a, Value b) { return ops::mul(tape_, a, b); }
  Value max_pool2(Value x) { return ops::max_pool2(tape_, x); }
  Value upsample_nearest2(Value x) { return ops::upsample_nearest2(tape_, x); }
  Value concat_channels(Value a, Value b) { return ops::concat_channels(tape_, a, b); }
  Value dropout(Value x, double p, const RngStream& rng, bool active) {
    return ops::dropout(tape_, x, p, rng, active);
  }

 private:
  Tape<T>& tape_;
};

template <typename T>
class EagerGraph {
 public:
  using Scalar = T;
  using Value = Tensor<T>;

  const Tensor<T>& value(const Value& v) const { return v; }

  Value input(Tensor<T> t) { return t; }
  Value conv2d(const Value& x, const Parameter<T>& w, const Parameter<T>& b) {
    return kernels::conv2d_forward(x, w.value, b.value);
  }
  Value leaky_relu(const Value& x) { return kernels::leaky_relu_forward(x, static_cast<T>(ops::kLeakySlope)); }
  Value sigmoid(const Value& x) { return kernels::sigmoid_forward(x); }
  Value mul(Value a, const Value& b) {
    detail::require(a.shape() == b.shape(), "mul: shape mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] *= b[i];
    return a;
  }
  Value max_pool2(const Value& x) { return kernels::max_pool2_forward<T>(x, nullptr); }
  Value upsample_nearest2(const Value& x) { return kernels::upsample_nearest2_forward(x); }
  Value concat_channels(const Value& a, const Value& b) { return kernels::concat_channels_forward(a, b); }
  Value dropout(Value x, double p, const RngStream& rng, bool active) {
    detail::require(p >= 0.0 && p < 1.0, "dropout: p must be in [0,1)");
    if (!active || p == 0.0) return x;
    const auto scales = kernels::dropout_scales<T>(x.size(), p, rng);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] *= scales[i];
    return x;
  }
};

}  // namespace s2s
