#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "s2s/tape.hpp"

namespace s2s {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  AdamOptions options;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t t = 0;
};

/// One bias-corrected Adam update of every parameter from its accumulated gradient.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state, double lr) {
  detail::require(lr > 0.0, "adam_step: learning rate must be positive");
  if (state.t == 0 && state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  detail::require(state.m.size() == params.size(), "adam_step: optimizer state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* p = params[i];
    detail::require(state.m[i].shape() == p->value.shape() && p->grad.shape() == p->value.shape(),
                    "adam_step: shape mismatch for " + p->name);
  }

  ++state.t;
  const auto& o = state.options;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& value = params[i]->value;
    const auto& grad = params[i]->grad;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double g = grad[k];
      const double mk = o.beta1 * m[k] + (1.0 - o.beta1) * g;
      const double vk = o.beta2 * v[k] + (1.0 - o.beta2) * g * g;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double m_hat = static_cast<double>(m[k]) / bc1;
      const double v_hat = static_cast<double>(v[k]) / bc2;
      value[k] = static_cast<T>(static_cast<double>(value[k]) - lr * m_hat / (std::sqrt(v_hat) + o.eps));
    }
  }
}

}  // namespace s2s
