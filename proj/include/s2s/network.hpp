#pragma once

#include <cmath>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "s2s/graph.hpp"
#include "s2s/image.hpp"
#include "s2s/rng.hpp"
#include "s2s/sampling.hpp"

namespace s2s {

inline constexpr std::size_t kEncoderChannels = 48;
inline constexpr std::size_t kDecoderChannels = 96;
inline constexpr std::size_t kPoolStages = 5;
inline constexpr std::size_t kKernelSize = 3;
inline constexpr std::size_t kSizeMultiple = std::size_t{1} << kPoolStages;
inline constexpr float kGateBiasInit = 1.0f;

struct NetworkConfig {
  std::size_t channels = 3;
  double p_drop = 0.4;
  bool gated = true;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

template <typename T>
struct ConvLayer {
  Parameter<T> weight;
  Parameter<T> bias;

  [[nodiscard]] std::size_t in_channels() const { return weight.value.dim(1); }
  [[nodiscard]] std::size_t out_channels() const { return weight.value.dim(0); }
};

/// φ(W_f * x + b_f) ⊙ σ(W_g * x + b_g) with φ = leaky ReLU(0.2). Without a gate
/// branch the layer degenerates to a vanilla conv + leaky ReLU.
template <typename T>
struct GatedConvLayer {
  ConvLayer<T> feature;
  std::optional<ConvLayer<T>> gate;
};

template <typename Graph, typename T>
typename Graph::Value gated_conv_forward(Graph& g, GatedConvLayer<T>& layer, const typename Graph::Value& x) {
  const auto& xv = g.value(x);
  detail::require(xv.rank() == 3 && xv.dim(0) == layer.feature.in_channels(),
                  "gated_conv: layer expects " + std::to_string(layer.feature.in_channels()) +
                      " channels, got " + to_string(xv.shape()));
  auto features = g.leaky_relu(g.conv2d(x, layer.feature.weight, layer.feature.bias));
  if (!layer.gate) return features;
  auto gating = g.sigmoid(g.conv2d(x, layer.gate->weight, layer.gate->bias));
  return g.mul(std::move(features), gating);
}

struct ManifestEntry {
  std::string name;
  Shape shape;
  std::size_t count = 0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct ShapeManifest {
  std::vector<ManifestEntry> entries;
  std::size_t total = 0;

  [[nodiscard]] const ManifestEntry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }

  [[nodiscard]] std::string to_text() const {
    std::ostringstream os;
    os << std::left << std::setw(24) << "layer" << std::setw(20) << "shape" << "count\n";
    for (const auto& e : entries)
      os << std::left << std::setw(24) << e.name << std::setw(20) << to_string(e.shape) << e.count << '\n';
    os << std::left << std::setw(44) << "total" << total << '\n';
    return os.str();
  }

  friend bool operator==(const ShapeManifest&, const ShapeManifest&) = default;
};

/// Shapes observed at each stage of one forward pass.
struct ForwardTrace {
  std::vector<std::pair<std::string, Shape>> stages;

  void add(std::string name, Shape shape) { stages.emplace_back(std::move(name), std::move(shape)); }
  [[nodiscard]] std::size_t count_prefix(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& s : stages) n += s.first.rfind(prefix, 0) == 0;
    return n;
  }
};

/// Gated-conv encoder (48 channels at every scale, five 2× max-pools down to H/32)
/// and a vanilla-conv decoder (five nearest 2× upsamplings, skip concatenation,
/// 96-channel convs with leaky ReLU and dropout), closed by a bare conv to C channels.
///
/// Skip wiring: decoder stage at scale H/2^s concatenates the encoder output at that
/// scale, i.e. the tensor that was fed into the pooling to the next scale.
template <typename T>
class DenoiserNetwork {
 public:
  DenoiserNetwork(const NetworkConfig& config, const RngStream& init_rng) : config_(config) {
    detail::require(config.channels == 1 || config.channels == 3,
                    "build_network: channels must be 1 or 3, got " + std::to_string(config.channels));
    detail::require(config.p_drop >= 0.0 && config.p_drop < 1.0, "build_network: p_drop must be in [0,1)");
    const std::size_t in = 2 * config.channels;
    encoder_.push_back(make_encoder_layer("enc0", in));
    for (std::size_t i = 1; i <= kPoolStages + 1; ++i)
      encoder_.push_back(make_encoder_layer("enc" + std::to_string(i), kEncoderChannels));
    for (std::size_t s = 0; s < kPoolStages; ++s) {
      const std::size_t upsampled = s == 0 ? kEncoderChannels : kDecoderChannels;
      const std::string prefix = "dec" + std::to_string(s + 1);
      decoder_.push_back({make_conv(prefix + ".conv_a", upsampled + kEncoderChannels, kDecoderChannels),
                          make_conv(prefix + ".conv_b", kDecoderChannels, kDecoderChannels)});
    }
    output_ = make_conv("out", kDecoderChannels, config.channels);
    initialize(init_rng);
  }

  [[nodiscard]] const NetworkConfig& config() const { return config_; }

  /// Parameters in canonical order (the checkpoint order).
  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    auto add = [&out](ConvLayer<T>& c) {
      out.push_back(&c.weight);
      out.push_back(&c.bias);
    };
    for (auto& e : encoder_) {
      add(e.feature);
      if (e.gate) add(*e.gate);
    }
    for (auto& d : decoder_) {
      add(d.first);
      add(d.second);
    }
    add(output_);
    return out;
  }

  std::vector<const Parameter<T>*> parameters() const {
    std::vector<const Parameter<T>*> out;
    for (auto* p : const_cast<DenoiserNetwork*>(this)->parameters()) out.push_back(p);
    return out;
  }

  [[nodiscard]] ShapeManifest manifest() const {
    ShapeManifest m;
    for (const auto* p : parameters()) {
      m.entries.push_back({p->name, p->value.shape(), p->value.size()});
      m.total += p->value.size();
    }
    return m;
  }

  GatedConvLayer<T>& encoder_layer(std::size_t i) { return encoder_.at(i); }
  [[nodiscard]] std::size_t encoder_depth() const { return encoder_.size(); }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  /// Input is (2C,H,W): masked image followed by the mask replicated per channel.
  template <typename Graph>
  typename Graph::Value forward(Graph& g, typename Graph::Value input, const RngStream& dropout_rng,
                                bool dropout_active, ForwardTrace* trace = nullptr) {
    const auto& in = g.value(input);
    detail::require(in.rank() == 3 && in.dim(0) == 2 * config_.channels,
                    "network_forward: expected " + std::to_string(2 * config_.channels) +
                        " input channels, got " + to_string(in.shape()));
    detail::require(in.dim(1) % kSizeMultiple == 0 && in.dim(2) % kSizeMultiple == 0,
                    "network_forward: spatial dims must be multiples of 32, got " + to_string(in.shape()));
    auto note = [&](const std::string& name, const typename Graph::Value& v) {
      if (trace) trace->add(name, g.value(v).shape());
    };

    auto h = gated_conv_forward(g, encoder_[0], input);
    note("enc0", h);
    h = gated_conv_forward(g, encoder_[1], h);
    note("enc1", h);
    std::vector<typename Graph::Value> skips;
    for (std::size_t s = 1; s <= kPoolStages; ++s) {
      skips.push_back(h);
      h = g.max_pool2(h);
      note("pool" + std::to_string(s), h);
      h = gated_conv_forward(g, encoder_[s + 1], h);
      note("enc" + std::to_string(s + 1), h);
    }

    for (std::size_t s = 0; s < kPoolStages; ++s) {
      const std::string stage = std::to_string(s + 1);
      h = g.upsample_nearest2(h);
      note("up" + stage, h);
      auto skip = std::move(skips.back());
      skips.pop_back();
      const auto& sv = g.value(skip);
      const auto& hv = g.value(h);
      detail::require(sv.dim(0) == kEncoderChannels && sv.dim(1) == hv.dim(1) && sv.dim(2) == hv.dim(2),
                      "network_forward: skip " + to_string(sv.shape()) + " does not match " + to_string(hv.shape()));
      note("skip" + stage, skip);
      h = g.concat_channels(h, skip);
      auto& [conv_a, conv_b] = decoder_[s];
      h = g.dropout(g.leaky_relu(g.conv2d(h, conv_a.weight, conv_a.bias)), config_.p_drop,
                    dropout_rng.child(2 * s), dropout_active);
      note("dec" + stage + "a", h);
      h = g.dropout(g.leaky_relu(g.conv2d(h, conv_b.weight, conv_b.bias)), config_.p_drop,
                    dropout_rng.child(2 * s + 1), dropout_active);
      note("dec" + stage + "b", h);
    }
    h = g.conv2d(h, output_.weight, output_.bias);
    note("out", h);
    return h;
  }

  /// Replaces parameter values by name; every parameter must be supplied with its exact shape.
  void load(const std::map<std::string, Tensor<T>>& named) {
    detail::require(named.size() == parameters().size(),
                    "load: expected " + std::to_string(parameters().size()) + " tensors, got " +
                        std::to_string(named.size()));
    for (auto* p : parameters()) {
      auto it = named.find(p->name);
      detail::require(it != named.end(), "load: missing tensor " + p->name);
      detail::require(it->second.shape() == p->value.shape(),
                      "load: tensor " + p->name + " has shape " + to_string(it->second.shape()) +
                          ", expected " + to_string(p->value.shape()));
      p->value = it->second;
      p->grad = Tensor<T>();
    }
  }

 private:
  static ConvLayer<T> make_conv(const std::string& name, std::size_t in, std::size_t out) {
    return {Parameter<T>{name + ".weight", Tensor<T>({out, in, kKernelSize, kKernelSize}), {}},
            Parameter<T>{name + ".bias", Tensor<T>({out}), {}}};
  }

  GatedConvLayer<T> make_encoder_layer(const std::string& name, std::size_t in) {
    GatedConvLayer<T> layer{make_conv(name + ".feature", in, kEncoderChannels), std::nullopt};
    if (config_.gated) layer.gate = make_conv(name + ".gate", in, kEncoderChannels);
    return layer;
  }

  // He-uniform fan-in weights, zero biases except gate biases (+1, gates start open).
  void initialize(const RngStream& rng) {
    std::uint64_t index = 0;
    for (auto* p : parameters()) {
      const RngStream stream = rng.child(index++);
      const Shape& s = p->value.shape();
      if (s.size() == 4) {
        const double bound = std::sqrt(6.0 / static_cast<double>(s[1] * s[2] * s[3]));
        for (std::size_t i = 0; i < p->value.size(); ++i)
          p->value[i] = static_cast<T>((2.0 * stream.uniform(i) - 1.0) * bound);
      } else {
        const bool gate_bias = p->name.find(".gate.") != std::string::npos;
        p->value.fill(gate_bias ? static_cast<T>(kGateBiasInit) : T(0));
      }
      p->zero_grad();
    }
  }

  NetworkConfig config_;
  std::vector<GatedConvLayer<T>> encoder_;
  std::vector<std::pair<ConvLayer<T>, ConvLayer<T>>> decoder_;
  ConvLayer<T> output_;
};

template <typename T = float>
DenoiserNetwork<T> build_network(std::size_t channels, double p_drop, bool gconv_enabled, const RngStream& rng) {
  return DenoiserNetwork<T>(NetworkConfig{channels, p_drop, gconv_enabled}, rng);
}

/// (2C,H,W) network input: the masked image then the mask replicated to C channels.
template <typename T>
Tensor<T> assemble_input(const Image& masked_image, const BernoulliMask& mask) {
  detail::require(mask.height == masked_image.height && mask.width == masked_image.width,
                  "assemble_input: mask and image sizes differ");
  const std::size_t c = masked_image.channels, n = masked_image.pixels();
  Tensor<T> out({2 * c, masked_image.height, masked_image.width});
  for (std::size_t i = 0; i < c * n; ++i) out[i] = static_cast<T>(masked_image.data[i]);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < n; ++i) out[(c + ch) * n + i] = static_cast<T>(mask.keep[i]);
  return out;
}

/// One evaluation f_θ(b ⊙ y). Not clamped; clamp only when exporting an image.
template <typename T>
Image network_forward(DenoiserNetwork<T>& net, const Image& masked_image, const BernoulliMask& mask,
                      bool dropout_active, const RngStream& rng) {
  detail::require(masked_image.channels == net.config().channels, "network_forward: channel mismatch");
  EagerGraph<T> g;
  return Image::from_tensor(net.forward(g, assemble_input<T>(masked_image, mask), rng, dropout_active));
}

}  // namespace s2s
