#pragma once

#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "s2s/checkpoint.hpp"
#include "s2s/losses.hpp"
#include "s2s/network.hpp"
#include "s2s/optim.hpp"
#include "s2s/sampling.hpp"

namespace s2s {

inline constexpr std::size_t kDefaultEnsembleSize = 500;

/// Defaults are the synthetic-noise settings: 4000 steps, p = 0.4, lr = 4e-4, λ = 2e-8.
struct TrainConfig {
  std::size_t steps = 4000;
  double p_mask = 0.4;
  double p_drop = 0.4;
  double lr = 4e-4;
  double lambda_iqa = kDefaultLambdaIqa;
  LossVariant loss = LossVariant::L1;
  bool normalize = false;
  bool gconv = true;
  std::string scorer = "smoothtv";
  std::uint64_t seed = 0;

  void set_probability(double p) { p_mask = p_drop = p; }

  void validate() const {
    detail::require(steps >= 1, "train: steps must be >= 1");
    detail::require(lr > 0.0, "train: lr must be positive");
    detail::require(p_mask > 0.0 && p_mask < 1.0, "train: mask probability must be in (0,1)");
    detail::require(p_drop > 0.0 && p_drop < 1.0, "train: dropout probability must be in (0,1)");
    detail::require(lambda_iqa >= 0.0, "train: lambda_iqa must be non-negative");
  }

  [[nodiscard]] LossConfig loss_config() const { return {loss, lambda_iqa, normalize, 0.0}; }
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> loss_trace;
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

/// Draws a fresh mask on the unpadded grid and mirrors it into the padding.
inline BernoulliMask padded_mask(const CropRecord& original, std::size_t height, std::size_t width, double p,
                                 const RngStream& rng) {
  return reflect_pad(sample_mask(original.height, original.width, p, rng), height, width);
}

/// Single-image self-supervised training. One Bernoulli pair per step; the loss is
/// taken on hidden pixels of the original (unpadded) extent.
inline TrainResult train(const Image& y, const TrainConfig& cfg, const StepCallback& on_step = {}) {
  cfg.validate();
  detail::require(y.channels == 1 || y.channels == 3, "train: image must have 1 or 3 channels");
  const PaddedImage padded = pad_to_multiple32(y);
  const auto target = y.to_tensor<float>();
  const auto scorer = make_scorer<float>(cfg.scorer);
  const LossConfig loss_cfg = cfg.loss_config();

  DenoiserNetwork<float> net(NetworkConfig{y.channels, cfg.p_drop, cfg.gconv}, RngStream(cfg.seed, streams::kInit));
  const auto params = net.parameters();
  AdamState<float> adam;
  const RngStream mask_rng(cfg.seed, streams::kTrainMask);
  const RngStream dropout_rng(cfg.seed, streams::kTrainDropout);

  TrainResult result;
  result.loss_trace.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const BernoulliMask mask0 = sample_mask(y.height, y.width, cfg.p_mask, mask_rng.child(step));
    const BernoulliMask mask = reflect_pad(mask0, padded.image.height, padded.image.width);
    const TrainingPair pair = make_pair(padded.image, mask);

    Tape<float> tape;
    TapeGraph<float> graph(tape);
    Var pred = net.forward(graph, graph.input(assemble_input<float>(pair.input, mask)), dropout_rng.child(step), true);
    pred = ops::crop(tape, pred, y.height, y.width);
    const Var loss = total_loss(tape, pred, target, mask0, *scorer, loss_cfg);
    const double value = tape.value(loss)[0];
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "train: non-finite loss " << value << " at step " << step;
      throw NumericError(msg.str());
    }
    net.zero_grad();
    tape.backward(loss);
    adam_step<float>(params, adam, cfg.lr);
    result.loss_trace.push_back(value);
    if (on_step) on_step(step, value);
  }
  result.checkpoint = make_checkpoint(net, cfg.p_mask, cfg.seed, cfg.steps);
  return result;
}

struct EnsembleConfig {
  std::size_t instances = kDefaultEnsembleSize;
  std::optional<double> p_mask;  // defaults to the checkpoint's training value
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

/// f_θn(b_n ⊙ y) for ensemble member n: dropout active, mask and dropout drawn from
/// instance-specific streams disjoint from the training streams.
inline Image ensemble_member(DenoiserNetwork<float>& net, const PaddedImage& padded, double p_mask,
                             std::uint64_t seed, std::size_t n) {
  const BernoulliMask mask = padded_mask(padded.crop, padded.image.height, padded.image.width, p_mask,
                                         RngStream(seed, streams::kEnsembleMask).child(n));
  const TrainingPair pair = make_pair(padded.image, mask);
  return crop(network_forward(net, pair.input, mask, true, RngStream(seed, streams::kEnsembleDropout).child(n)),
              padded.crop);
}

/// Unclamped ensemble average (1/N) Σ_n f_θn(b_n ⊙ y). Members are summed in index
/// order regardless of the thread count, so the result is canonical.
inline Image ensemble_mean(const Checkpoint& ckpt, const Image& y, const EnsembleConfig& cfg) {
  detail::require(cfg.instances >= 1, "denoise: ensemble size must be >= 1");
  detail::require(y.channels == ckpt.network.channels,
                  "denoise: image has " + std::to_string(y.channels) + " channels, checkpoint expects " +
                      std::to_string(ckpt.network.channels));
  const double p_mask = cfg.p_mask.value_or(ckpt.p_mask);
  detail::require(p_mask >= 0.0 && p_mask < 1.0, "denoise: mask probability must be in [0,1)");
  DenoiserNetwork<float> net = restore_network<float>(ckpt);
  const PaddedImage padded = pad_to_multiple32(y);
  const std::size_t workers = std::max<std::size_t>(1, cfg.threads);

  std::vector<double> acc(y.size(), 0.0);
  std::vector<Image> batch(workers);
  for (std::size_t first = 0; first < cfg.instances; first += workers) {
    const std::size_t count = std::min(workers, cfg.instances - first);
    if (count == 1) {
      batch[0] = ensemble_member(net, padded, p_mask, cfg.seed, first);
    } else {
      std::vector<std::exception_ptr> errors(count);
      {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < count; ++w)
          pool.emplace_back([&, w] {
            try {
              batch[w] = ensemble_member(net, padded, p_mask, cfg.seed, first + w);
            } catch (...) {
              errors[w] = std::current_exception();
            }
          });
      }
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }
    for (std::size_t w = 0; w < count; ++w)
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += batch[w].data[i];
  }
  Image out(y.height, y.width, y.channels);
  const auto n = static_cast<double>(cfg.instances);
  for (std::size_t i = 0; i < acc.size(); ++i) out.data[i] = static_cast<float>(acc[i] / n);
  return out;
}

/// Dropout-ensemble denoising, clamped to [0,1].
inline Image denoise_ensemble(const Checkpoint& ckpt, const Image& y, const EnsembleConfig& cfg) {
  return clamp01(ensemble_mean(ckpt, y, cfg));
}

}  // namespace s2s
