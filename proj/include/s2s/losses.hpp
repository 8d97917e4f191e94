#pragma once

#include <cmath>
#include <memory>
#include <string>

#include "s2s/image.hpp"
#include "s2s/ops.hpp"
#include "s2s/rng.hpp"
#include "s2s/sampling.hpp"

namespace s2s {

enum class LossVariant { L1, L2 };

inline constexpr double kDefaultLambdaIqa = 2e-8;

struct LossConfig {
  LossVariant variant = LossVariant::L1;
  double lambda_iqa = kDefaultLambdaIqa;
  bool normalize = false;
  // > 0 replaces |r| by sqrt(r² + ε²) - ε (used by gradient checks).
  double l1_smoothing = 0.0;
};

/// Σ over hidden pixels (mask == 0, every channel) of |pred - y| or (pred - y)².
/// Unmasked positions receive no gradient; |·| has subgradient 0 at a zero residual.
template <typename T>
Var masked_residual_loss(Tape<T>& tape, Var pred, const Tensor<T>& y, const BernoulliMask& mask,
                         LossVariant variant, bool normalize, double l1_smoothing = 0.0) {
  const Tensor<T>& pv = tape.value(pred);
  detail::require(pv.shape() == y.shape(), "masked_residual_loss: shape mismatch " + to_string(pv.shape()) +
                                               " vs " + to_string(y.shape()));
  detail::require(pv.rank() == 3 && mask.height == pv.dim(1) && mask.width == pv.dim(2),
                  "masked_residual_loss: mask does not match prediction");
  const std::size_t channels = pv.dim(0), n = mask.pixels();
  const std::size_t hidden = mask.dropped_count() * channels;
  detail::require(!normalize || hidden > 0, "masked_residual_loss: no masked elements to normalize by");
  const double denom = normalize ? static_cast<double>(hidden) : 1.0;
  const double eps = l1_smoothing;

  double acc = 0.0;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < n; ++i) {
      if (mask.keep[i]) continue;
      const double r = static_cast<double>(pv[c * n + i]) - static_cast<double>(y[c * n + i]);
      if (variant == LossVariant::L2) acc += r * r;
      else acc += eps > 0.0 ? std::sqrt(r * r + eps * eps) - eps : std::abs(r);
    }
  Tensor<T> out({1}, std::vector<T>{static_cast<T>(acc / denom)});
  return tape.record(
      std::move(out), {pred},
      [pred, y, keep = mask.keep, channels, n, variant, denom, eps](Tape<T>& t, const Tensor<T>& g) {
        auto* gp = t.grad_sink(pred);
        if (!gp) return;
        const Tensor<T>& pv = t.value(pred);
        const double scale = static_cast<double>(g[0]) / denom;
        for (std::size_t c = 0; c < channels; ++c)
          for (std::size_t i = 0; i < n; ++i) {
            if (keep[i]) continue;
            const std::size_t k = c * n + i;
            const double r = static_cast<double>(pv[k]) - static_cast<double>(y[k]);
            double d;
            if (variant == LossVariant::L2) d = 2.0 * r;
            else if (eps > 0.0) d = r / std::sqrt(r * r + eps * eps);
            else d = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
            (*gp)[k] += static_cast<T>(scale * d);
          }
      },
      "masked_residual_loss");
}

/// No-reference quality score in [0,100], differentiable w.r.t. the image.
template <typename T>
class QualityScorer {
 public:
  virtual ~QualityScorer() = default;
  [[nodiscard]] virtual std::string name() const = 0;
  virtual Var score(Tape<T>& tape, Var image) const = 0;

  [[nodiscard]] double score(const Image& img) const {
    Tape<T> tape;
    return static_cast<double>(tape.value(score(tape, tape.constant(img.to_tensor<T>())))[0]);
  }
};

/// Always 100: disables the quality term.
template <typename T>
class NullScorer final : public QualityScorer<T> {
 public:
  using QualityScorer<T>::score;
  [[nodiscard]] std::string name() const override { return "null"; }
  Var score(Tape<T>& tape, Var) const override { return tape.constant(Tensor<T>({1}, T(100))); }
};

/// 100·exp(-β·TV_ε(img)/(H·W·C)), TV_ε summing sqrt(d²+ε²)-ε over horizontal and
/// vertical neighbour differences. A smooth stand-in for a learned NR-IQA model:
/// flat images score 100, noise lowers the score.
template <typename T>
class SmoothTVScorer final : public QualityScorer<T> {
 public:
  explicit SmoothTVScorer(double beta = 10.0, double eps = 1e-3) : beta_(beta), eps_(eps) {
    detail::require(beta > 0.0 && eps > 0.0, "SmoothTVScorer: beta and eps must be positive");
  }

  [[nodiscard]] std::string name() const override { return "smoothtv"; }
  using QualityScorer<T>::score;

  Var score(Tape<T>& tape, Var image) const override {
    const Tensor<T>& v = tape.value(image);
    detail::require(v.rank() == 3, "SmoothTVScorer: image must be (C,H,W)");
    const double norm = static_cast<double>(v.size());
    const double s = score_from_tv(total_variation(v), norm);
    return tape.record(
        Tensor<T>({1}, std::vector<T>{static_cast<T>(s)}), {image},
        [image, s, norm, beta = beta_, eps = eps_](Tape<T>& t, const Tensor<T>& g) {
          auto* gi = t.grad_sink(image);
          if (!gi) return;
          const double coeff = static_cast<double>(g[0]) * s * (-beta / norm);
          tv_gradient(t.value(image), eps, coeff, *gi);
        },
        "smooth_tv_score");
  }

  [[nodiscard]] double total_variation(const Tensor<T>& v) const {
    const std::size_t c = v.dim(0), h = v.dim(1), w = v.dim(2);
    double tv = 0.0;
    auto rho = [e = eps_](double d) { return std::sqrt(d * d + e * e) - e; };
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double here = v.at(ch, y, x);
          if (x + 1 < w) tv += rho(static_cast<double>(v.at(ch, y, x + 1)) - here);
          if (y + 1 < h) tv += rho(static_cast<double>(v.at(ch, y + 1, x)) - here);
        }
    return tv;
  }

  [[nodiscard]] double score_from_tv(double tv, double norm) const {
    return std::clamp(100.0 * std::exp(-beta_ * tv / norm), 0.0, 100.0);
  }

 private:
  static void tv_gradient(const Tensor<T>& v, double eps, double coeff, Tensor<T>& grad) {
    const std::size_t c = v.dim(0), h = v.dim(1), w = v.dim(2);
    auto drho = [eps](double d) { return d / std::sqrt(d * d + eps * eps); };
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double here = v.at(ch, y, x);
          if (x + 1 < w) {
            const double d = coeff * drho(static_cast<double>(v.at(ch, y, x + 1)) - here);
            grad.at(ch, y, x + 1) += static_cast<T>(d);
            grad.at(ch, y, x) -= static_cast<T>(d);
          }
          if (y + 1 < h) {
            const double d = coeff * drho(static_cast<double>(v.at(ch, y + 1, x)) - here);
            grad.at(ch, y + 1, x) += static_cast<T>(d);
            grad.at(ch, y, x) -= static_cast<T>(d);
          }
        }
  }

  double beta_;
  double eps_;
};

/// Scorer by name: "null" or "smoothtv".
template <typename T>
std::unique_ptr<QualityScorer<T>> make_scorer(const std::string& name) {
  if (name == "null") return std::make_unique<NullScorer<T>>();
  if (name == "smoothtv") return std::make_unique<SmoothTVScorer<T>>();
  throw ContractError("unknown scorer '" + name + "' (expected null or smoothtv)");
}

/// (100 - score(pred))².
template <typename T>
Var iqa_loss(Tape<T>& tape, const QualityScorer<T>& scorer, Var pred) {
  Var s = scorer.score(tape, pred);
  const T score = tape.value(s)[0];
  if (!std::isfinite(static_cast<double>(score)))
    throw NumericError("iqa_loss: scorer '" + scorer.name() + "' returned a non-finite score");
  const T gap = T(100) - score;
  return tape.record(
      Tensor<T>({1}, std::vector<T>{gap * gap}), {s},
      [s, gap](Tape<T>& t, const Tensor<T>& g) {
        if (auto* gs = t.grad_sink(s)) (*gs)[0] += g[0] * T(-2) * gap;
      },
      "iqa_loss");
}

/// masked_residual_loss + λ·iqa_loss. λ = 0 skips the scorer entirely.
template <typename T>
Var total_loss(Tape<T>& tape, Var pred, const Tensor<T>& y, const BernoulliMask& mask,
               const QualityScorer<T>& scorer, const LossConfig& cfg) {
  detail::require(cfg.lambda_iqa >= 0.0, "total_loss: lambda_iqa must be non-negative");
  Var residual = masked_residual_loss(tape, pred, y, mask, cfg.variant, cfg.normalize, cfg.l1_smoothing);
  if (cfg.lambda_iqa == 0.0) return residual;
  Var iqa = iqa_loss(tape, scorer, pred);
  return ops::add(tape, residual, ops::scale(tape, iqa, static_cast<T>(cfg.lambda_iqa)));
}

struct ExpectationReport {
  double empirical_mean = 0.0;
  double expected = 0.0;
  double standard_error = 0.0;
  double min_draw = 0.0;
  double max_draw = 0.0;
  std::size_t draws = 0;
  std::size_t masked_pixels = 0;

  [[nodiscard]] double deviation() const { return std::abs(empirical_mean - expected); }
  [[nodiscard]] bool within(double k = 3.0) const { return deviation() <= k * standard_error; }
};

/// Monte Carlo check of the masked-L1 expectation identity for a constant predictor.
/// With a fixed mask and K noisy realizations y = x + n, n ~ U(-bound, bound), the mean
/// per-masked-pixel loss |f - y| must match |f - x|. The identity only holds when
/// f - y keeps one sign for every realization, so that is a precondition.
inline ExpectationReport expectation_property_check(double f_value, double x, double noise_bound, double p,
                                                    std::size_t draws, const RngStream& rng,
                                                    std::size_t size = 16) {
  detail::require(noise_bound >= 0.0, "expectation_property_check: noise bound must be non-negative");
  detail::require(f_value > x + noise_bound || f_value < x - noise_bound,
                  "expectation_property_check: requires |f - x| > noise bound so the residual sign is fixed");
  detail::require(p > 0.0 && p < 1.0, "expectation_property_check: p must be in (0,1)");
  detail::require(draws >= 2, "expectation_property_check: need at least two draws");

  const BernoulliMask mask = sample_mask(size, size, p, rng.child(0));
  const std::size_t hidden = mask.dropped_count();
  detail::require(hidden > 0, "expectation_property_check: mask hides no pixels");

  ExpectationReport report;
  report.expected = std::abs(f_value - x);
  report.draws = draws;
  report.masked_pixels = hidden;
  double mean = 0.0, m2 = 0.0;
  std::vector<float> u(mask.pixels());
  for (std::size_t k = 0; k < draws; ++k) {
    rng.child(k + 1).fill_uniform(u);
    // Running mean: a draw of identical residuals averages to exactly that residual.
    double loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t i = 0; i < mask.pixels(); ++i) {
      if (mask.keep[i]) continue;
      const double noise = noise_bound * (2.0 * static_cast<double>(u[i]) - 1.0);
      loss += (std::abs(f_value - (x + noise)) - loss) / static_cast<double>(++seen);
    }
    report.min_draw = k == 0 ? loss : std::min(report.min_draw, loss);
    report.max_draw = k == 0 ? loss : std::max(report.max_draw, loss);
    const double delta = loss - mean;
    mean += delta / static_cast<double>(k + 1);
    m2 += delta * (loss - mean);
  }
  report.empirical_mean = mean;
  report.standard_error = std::sqrt(m2 / static_cast<double>(draws - 1) / static_cast<double>(draws));
  return report;
}

}  // namespace s2s
