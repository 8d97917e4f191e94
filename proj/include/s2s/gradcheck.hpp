#pragma once

// Central finite-difference checks of every taped primitive, in double precision.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "s2s/graph.hpp"
#include "s2s/losses.hpp"
#include "s2s/network.hpp"

namespace s2s::gradcheck {

struct Options {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, floor, floor_scale * max|a| over the check).
  // The scaled term keeps near-cancelling coordinates from being judged on roundoff alone.
  double floor = 1e-6;
  double floor_scale = 1e-3;
  std::size_t max_coordinates = 48;  // per tensor
};

struct Result {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  bool passed = false;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Indices to probe: everything for small tensors, otherwise a seeded sample.
inline std::vector<std::size_t> probe_indices(std::size_t size, std::size_t limit, const RngStream& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), 0);
  if (size <= limit) return idx;
  for (std::size_t i = 0; i < limit; ++i) {
    const std::size_t j = i + rng.word(i) % (size - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(limit);
  return idx;
}

inline Tensor<double> random_tensor(Shape shape, const RngStream& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = lo + (hi - lo) * rng.uniform(i);
  return t;
}

/// Compares analytic gradients with central differences over `coords`; `eval` must
/// recompute the scalar objective from the current coordinate values.
inline Result compare(std::string name, const std::vector<double*>& coords, const std::vector<double>& analytic,
                      const std::function<double()>& eval, const Options& opt) {
  Result r{std::move(name), 0.0, coords.size(), true};
  double scale = 0.0;
  for (double a : analytic) scale = std::max(scale, std::abs(a));
  const double floor = std::max(opt.floor, opt.floor_scale * scale);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    double& c = *coords[i];
    const double saved = c;
    auto central = [&](double h) {
      c = saved + h;
      const double up = eval();
      c = saved - h;
      const double down = eval();
      c = saved;
      return (up - down) / (2.0 * h);
    };
    // A probe that straddles a ReLU/max-pool kink is retried with shorter steps.
    double err = relative_error(analytic[i], central(opt.step), floor);
    for (double h = opt.step / 10.0; err >= opt.tolerance && h >= opt.step / 1000.0; h /= 10.0)
      err = std::min(err, relative_error(analytic[i], central(h), floor));
    r.max_rel_error = std::max(r.max_rel_error, err);
  }
  r.passed = r.max_rel_error < opt.tolerance;
  return r;
}

using Builder = std::function<Var(Tape<double>&, std::span<const Var>)>;

/// Gradient check of a scalar function of plain input tensors.
inline Result check_inputs(std::string name, std::vector<Tensor<double>> inputs, const Builder& build,
                           const Options& opt = {}, const RngStream& rng = RngStream(0, 0)) {
  std::vector<Tensor<double>> analytic_grads;
  {
    Tape<double> tape;
    tape.set_check_finite(true);
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.variable(t));
    tape.backward(build(tape, vars));
    for (Var v : vars) analytic_grads.push_back(tape.grad(v));
  }
  std::vector<double*> coords;
  std::vector<double> analytic;
  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (std::size_t i : probe_indices(inputs[k].size(), opt.max_coordinates, rng.child(k))) {
      coords.push_back(&inputs[k][i]);
      analytic.push_back(analytic_grads[k][i]);
    }
  auto eval = [&] {
    Tape<double> tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.constant(t));
    return tape.value(build(tape, vars))[0];
  };
  return compare(std::move(name), coords, analytic, eval, opt);
}

/// Gradient check of a scalar function of Parameters (values are perturbed in place).
inline Result check_parameters(std::string name, const std::vector<Parameter<double>*>& params,
                               const std::function<Var(Tape<double>&)>& build, const Options& opt = {},
                               const RngStream& rng = RngStream(0, 0)) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    tape.set_check_finite(true);
    tape.backward(build(tape));
  }
  std::vector<double*> coords;
  std::vector<double> analytic;
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i : probe_indices(params[k]->value.size(), opt.max_coordinates, rng.child(k))) {
      coords.push_back(&params[k]->value[i]);
      analytic.push_back(params[k]->grad[i]);
    }
  auto eval = [&] {
    Tape<double> tape;
    return tape.value(build(tape))[0];
  };
  return compare(std::move(name), coords, analytic, eval, opt);
}

inline ConvLayer<double> random_conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                                     const RngStream& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in * k * k));
  return {Parameter<double>{name + ".weight", random_tensor({out, in, k, k}, rng.child(0), -bound, bound), {}},
          Parameter<double>{name + ".bias", random_tensor({out}, rng.child(1), -0.1, 0.1), {}}};
}

/// The full primitive suite plus an end-to-end network check.
inline std::vector<Result> run_suite(std::uint64_t seed = 0, const Options& opt = {}) {
  const RngStream root(seed, 0x6772616463686bull);
  std::vector<Result> results;
  std::uint64_t tag = 0;
  auto next = [&] { return root.child(tag++); };
  auto project = [](Tape<double>& t, Var v, const RngStream& rng) {
    return ops::weighted_sum(t, v, random_tensor(t.value(v).shape(), rng));
  };

  {
    const RngStream r = next();
    results.push_back(check_inputs(
        "conv2d (3x3, reflect 1)",
        {random_tensor({3, 6, 5}, r.child(0)), random_tensor({4, 3, 3, 3}, r.child(1)), random_tensor({4}, r.child(2))},
        [r, project](Tape<double>& t, std::span<const Var> v) {
          return project(t, ops::conv2d(t, v[0], v[1], v[2]), r.child(3));
        },
        opt, r));
  }
  {
    const RngStream r = next();
    results.push_back(check_inputs(
        "conv2d (5x5, reflect 2)",
        {random_tensor({2, 7, 6}, r.child(0)), random_tensor({3, 2, 5, 5}, r.child(1)), random_tensor({3}, r.child(2))},
        [r, project](Tape<double>& t, std::span<const Var> v) {
          return project(t, ops::conv2d(t, v[0], v[1], v[2]), r.child(3));
        },
        opt, r));
  }
  {
    const RngStream r = next();
    GatedConvLayer<double> layer{random_conv("feature", 3, 4, 3, r.child(0)), random_conv("gate", 3, 4, 3, r.child(1))};
    const Tensor<double> x = random_tensor({3, 6, 6}, r.child(2));
    results.push_back(check_parameters(
        "gated_conv",
        {&layer.feature.weight, &layer.feature.bias, &layer.gate->weight, &layer.gate->bias},
        [&, r, project](Tape<double>& t) {
          TapeGraph<double> g(t);
          return project(t, gated_conv_forward(g, layer, g.input(x)), r.child(3));
        },
        opt, r));
    results.push_back(check_inputs(
        "gated_conv (input)", {x},
        [&, r, project](Tape<double>& t, std::span<const Var> v) {
          TapeGraph<double> g(t);
          return project(t, gated_conv_forward(g, layer, v[0]), r.child(3));
        },
        opt, r));
  }
  {
    const RngStream r = next();
    Tensor<double> x = random_tensor({2, 5, 5}, r.child(0));
    for (double& v : x.data())  // keep clear of the kink at 0
      if (std::abs(v) < 1e-2) v += 2e-2;
    results.push_back(check_inputs(
        "leaky_relu", {x},
        [r, project](Tape<double>& t, std::span<const Var> v) { return project(t, ops::leaky_relu(t, v[0]), r.child(1)); },
        opt, r));
  }
  {
    const RngStream r = next();
    results.push_back(check_inputs(
        "sigmoid", {random_tensor({2, 4, 5}, r.child(0), -4.0, 4.0)},
        [r, project](Tape<double>& t, std::span<const Var> v) { return project(t, ops::sigmoid(t, v[0]), r.child(1)); },
        opt, r));
  }
  {
    const RngStream r = next();
    results.push_back(check_inputs(
        "max_pool2", {random_tensor({2, 6, 4}, r.child(0))},
        [r, project](Tape<double>& t, std::span<const Var> v) { return project(t, ops::max_pool2(t, v[0]), r.child(1)); },
        opt, r));
  }
  {
    const RngStream r = next();
    results.push_back(check_inputs(
        "upsample_nearest2", {random_tensor({2, 3, 4}, r.child(0))},
        [r, project](Tape<double>& t, std::span<const Var> v) {
          return project(t, ops::upsample_nearest2(t, v[0]), r.child(1));
        },
        opt, r));
  }
  {
    const RngStream r = next();
    results.push_back(check_inputs(
        "concat_channels", {random_tensor({1, 4, 3}, r.child(0)), random_tensor({2, 4, 3}, r.child(1))},
        [r, project](Tape<double>& t, std::span<const Var> v) {
          return project(t, ops::concat_channels(t, v[0], v[1]), r.child(2));
        },
        opt, r));
  }
  {
    const RngStream r = next();
    results.push_back(check_inputs(
        "dropout (fixed mask, p=0.5)", {random_tensor({3, 4, 4}, r.child(0))},
        [r, project](Tape<double>& t, std::span<const Var> v) {
          return project(t, ops::dropout(t, v[0], 0.5, r.child(1), true), r.child(2));
        },
        opt, r));
  }
  for (const auto variant : {LossVariant::L1, LossVariant::L2}) {
    for (const bool normalize : {false, true}) {
      const RngStream r = next();
      const Tensor<double> y = random_tensor({3, 6, 6}, r.child(1), 0.0, 1.0);
      const BernoulliMask mask = sample_mask(6, 6, 0.5, r.child(2));
      std::string name = variant == LossVariant::L1 ? "masked L1 (eps=1e-8)" : "masked L2";
      name += normalize ? ", mean" : ", sum";
      results.push_back(check_inputs(
          name, {random_tensor({3, 6, 6}, r.child(0), 0.0, 1.0)},
          [y, mask, variant, normalize](Tape<double>& t, std::span<const Var> v) {
            return masked_residual_loss(t, v[0], y, mask, variant, normalize, 1e-8);
          },
          opt, r));
    }
  }
  {
    const RngStream r = next();
    const SmoothTVScorer<double> scorer;
    results.push_back(check_inputs(
        "SmoothTVScorer", {random_tensor({3, 6, 7}, r.child(0), 0.0, 1.0)},
        [&scorer](Tape<double>& t, std::span<const Var> v) { return scorer.score(t, v[0]); }, opt, r));
    results.push_back(check_inputs(
        "iqa_loss (SmoothTV)", {random_tensor({1, 8, 8}, r.child(1), 0.3, 0.7)},
        [&scorer](Tape<double>& t, std::span<const Var> v) { return iqa_loss(t, scorer, v[0]); }, opt, r));
  }
  {
    const RngStream r = next();
    DenoiserNetwork<double> net(NetworkConfig{1, 0.3, true}, r.child(0));
    // Random gate biases so the gates are not all in the same regime.
    std::uint64_t k = 0;
    for (auto* p : net.parameters())
      if (p->value.rank() == 1) p->value = random_tensor(p->value.shape(), r.child(1).child(k++), -0.5, 0.5);
    Image img(32, 32, 1);
    for (std::size_t i = 0; i < img.size(); ++i) img.data[i] = r.child(2).uniform(i);
    const BernoulliMask mask = sample_mask(32, 32, 0.4, r.child(3));
    const TrainingPair pair = make_pair(img, mask);
    const Tensor<double> input = assemble_input<double>(pair.input, mask);
    const Tensor<double> weights = random_tensor({1, 32, 32}, r.child(4));
    Options net_opt = opt;
    net_opt.max_coordinates = 3;
    results.push_back(check_parameters(
        "network end-to-end (2x32x32 input)", net.parameters(),
        [&](Tape<double>& t) {
          TapeGraph<double> g(t);
          Var out = net.forward(g, g.input(input), r.child(5), true);
          return ops::weighted_sum(t, out, weights);
        },
        net_opt, r.child(6)));
  }
  return results;
}

inline std::string format_results(const std::vector<Result>& results, const Options& opt = {}) {
  std::ostringstream os;
  os << std::left << std::setw(38) << "check" << std::setw(8) << "coords" << std::setw(14) << "max_rel_err"
     << "status\n";
  for (const auto& r : results)
    os << std::left << std::setw(38) << r.name << std::setw(8) << r.coordinates << std::setw(14) << std::scientific
       << std::setprecision(3) << r.max_rel_error << (r.passed ? "ok" : "FAIL") << '\n';
  os << std::defaultfloat << "tolerance " << opt.tolerance << ", step " << opt.step << '\n';
  return os.str();
}

}  // namespace s2s::gradcheck
