#pragma once

// Checkpoint file layout (all integers and floats little-endian):
//   "S2SP" | u32 version
//   config: u32 channels | u8 gated | f64 p_drop | f64 p_mask | u64 seed | u64 steps
//   u32 tensor count, then per tensor:
//     u32 name length | UTF-8 name | u32 rank | u32 dims[rank] | f32 values[prod(dims)]

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "s2s/network.hpp"

namespace s2s {

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;
  static constexpr char kMagic[4] = {'S', '2', 'S', 'P'};

  std::uint32_t version = kFormatVersion;
  NetworkConfig network;
  double p_mask = 0.4;
  std::uint64_t seed = 0;
  std::uint64_t steps = 0;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  std::string take() { return std::move(bytes_); }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{u8()} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{u8()} << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  [[nodiscard]] bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError("checkpoint: truncated data");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize(const Checkpoint& ckpt) {
  detail::ByteWriter w;
  w.raw(Checkpoint::kMagic, 4);
  w.u32(ckpt.version);
  w.u32(static_cast<std::uint32_t>(ckpt.network.channels));
  w.u8(ckpt.network.gated ? 1 : 0);
  w.f64(ckpt.network.p_drop);
  w.f64(ckpt.p_mask);
  w.u64(ckpt.seed);
  w.u64(ckpt.steps);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data()) w.f32(v);
  }
  return w.take();
}

inline Checkpoint deserialize(const std::string& bytes) {
  detail::ByteReader r(bytes);
  if (r.str(4) != std::string(Checkpoint::kMagic, 4)) throw IoError("checkpoint: bad magic (not an S2SP file)");
  Checkpoint ckpt;
  ckpt.version = r.u32();
  if (ckpt.version != Checkpoint::kFormatVersion)
    throw UnsupportedFormat("checkpoint: unsupported format version " + std::to_string(ckpt.version));
  ckpt.network.channels = r.u32();
  ckpt.network.gated = r.u8() != 0;
  ckpt.network.p_drop = r.f64();
  ckpt.p_mask = r.f64();
  ckpt.seed = r.u64();
  ckpt.steps = r.u64();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u32());
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    std::vector<float> values(element_count(shape));
    for (auto& v : values) v = r.f32();
    ckpt.tensors.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw IoError("checkpoint: trailing bytes after last tensor");
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  const std::string bytes = serialize(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize(bytes);
  } catch (const IoError& e) {
    throw IoError(std::string(e.what()) + " (" + path + ")");
  }
}

template <typename T>
Checkpoint make_checkpoint(const DenoiserNetwork<T>& net, double p_mask, std::uint64_t seed, std::uint64_t steps) {
  Checkpoint ckpt;
  ckpt.network = net.config();
  ckpt.p_mask = p_mask;
  ckpt.seed = seed;
  ckpt.steps = steps;
  for (const auto* p : net.parameters()) ckpt.tensors.emplace_back(p->name, p->value.template cast<float>());
  return ckpt;
}

/// Rebuilds the network and validates the stored tensors against its ShapeManifest.
template <typename T = float>
DenoiserNetwork<T> restore_network(const Checkpoint& ckpt) {
  DenoiserNetwork<T> net(ckpt.network, RngStream(ckpt.seed, streams::kInit));
  const ShapeManifest expected = net.manifest();
  detail::require(ckpt.tensors.size() == expected.entries.size(),
                  "checkpoint: holds " + std::to_string(ckpt.tensors.size()) + " tensors, network declares " +
                      std::to_string(expected.entries.size()));
  std::map<std::string, Tensor<T>> named;
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    const auto& [name, t] = ckpt.tensors[i];
    const ManifestEntry& e = expected.entries[i];
    detail::require(name == e.name && t.shape() == e.shape,
                    "checkpoint: tensor " + std::to_string(i) + " is " + name + to_string(t.shape()) +
                        ", manifest expects " + e.name + to_string(e.shape));
    named.emplace(name, t.template cast<T>());
  }
  net.load(named);
  return net;
}

}  // namespace s2s
