#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ssdesc/binary_io.hpp"
#include "ssdesc/error.hpp"
#include "ssdesc/nn/activations.hpp"
#include "ssdesc/nn/batchnorm.hpp"
#include "ssdesc/nn/conv2d.hpp"
#include "ssdesc/nn/tensor.hpp"
#include "ssdesc/rng.hpp"

namespace ssdesc {

using nn::Mode;
using nn::Tensor;

inline constexpr std::size_t kPatchSize = 128;
inline constexpr std::size_t kDescriptorDim = 128;
inline constexpr std::size_t kNumLayers = 7;
inline constexpr std::array<std::size_t, kNumLayers> kFilters = {16, 16, 32, 64, 128, 128, 128};
inline constexpr std::array<std::size_t, kNumLayers> kKernels = {3, 3, 3, 3, 3, 3, 8};
inline constexpr std::array<int, kNumLayers> kPaddings = {1, 1, 1, 1, 1, 1, 0};
/// Four stride-2 layers bring 128x128 down to the 8x8 map the last kernel consumes.
inline constexpr std::array<int, kNumLayers> kStrides = {2, 1, 2, 1, 2, 2, 1};

/// Seven conv+BN layers (ReLU after the first six) mapping a 128x128 patch to a
/// unit-norm 128-D descriptor. Spatial chain: 64, 64, 32, 32, 16, 8, 1.
template <typename T>
class DescriptorNet {
 public:
  std::array<nn::ConvLayer<T>, kNumLayers> conv;
  std::array<nn::BatchNormLayer<T>, kNumLayers> bn;

  /// He-uniform conv weights from `seed`, zero biases, unit gamma, zero beta.
  static DescriptorNet initialize(std::uint64_t seed) {
    DescriptorNet net;
    Rng rng(seed);
    std::size_t in = 1;
    for (std::size_t l = 0; l < kNumLayers; ++l) {
      net.conv[l] = nn::ConvLayer<T>::he_uniform(in, kFilters[l], kKernels[l], kStrides[l], kPaddings[l], rng);
      net.bn[l] = nn::BatchNormLayer<T>::make(kFilters[l]);
      in = kFilters[l];
    }
    return net;
  }

  /// Intermediate values kept by a train-mode forward pass for backward().
  struct Trace {
    std::array<Tensor<T>, kNumLayers> inputs;
    std::array<typename nn::BatchNormLayer<T>::Cache, kNumLayers> bn_cache;
    Tensor<T> pre_norm;
  };

  /// Eval-mode forward: pure, uses running BN statistics. Returns (B x 128).
  Tensor<T> infer(const Tensor<T>& patches) const {
    check_input(patches);
    Tensor<T> a = patches;
    for (std::size_t l = 0; l < kNumLayers; ++l) {
      a = bn[l].infer(conv[l].forward(a));
      if (l + 1 < kNumLayers) a = nn::relu(std::move(a));
    }
    const std::size_t batch = patches.dim(0);
    return nn::l2_normalize(std::move(a).reshaped({batch, kDescriptorDim}));
  }

  /// Dispatches on mode; train mode updates BN running statistics.
  Tensor<T> forward(const Tensor<T>& patches, Mode mode, Trace* trace = nullptr) {
    if (mode == Mode::kEval) return infer(patches);
    check_input(patches);
    if (patches.dim(0) < 2) throw ShapeError("train-mode forward needs a batch of at least 2");
    Trace local;
    Trace& t = trace ? *trace : local;
    Tensor<T> a = patches;
    for (std::size_t l = 0; l < kNumLayers; ++l) {
      Tensor<T> z = conv[l].forward(a);
      t.inputs[l] = std::move(a);
      a = bn[l].forward(std::move(z), Mode::kTrain, &t.bn_cache[l], true, l + 1 < kNumLayers);
    }
    const std::size_t batch = patches.dim(0);
    t.pre_norm = std::move(a).reshaped({batch, kDescriptorDim});
    return nn::l2_normalize(t.pre_norm);
  }

  /// Accumulates parameter gradients from dL/d(descriptors). The trace is
  /// consumed. Returns dL/d(patches) when `input_grad` is set.
  Tensor<T> backward(Trace& t, const Tensor<T>& d_desc, bool input_grad = false) {
    Tensor<T> g = nn::l2_normalize_backward(t.pre_norm, d_desc);
    const std::size_t batch = d_desc.dim(0);
    g = std::move(g).reshaped({batch, kFilters.back(), 1, 1});
    t.pre_norm = {};
    for (std::size_t l = kNumLayers; l-- > 0;) {
      // The ReLU output (masking the gradient) is the next layer's input.
      g = bn[l].backward(t.bn_cache[l], g, l + 1 < kNumLayers ? &t.inputs[l + 1] : nullptr);
      if (l + 1 < kNumLayers) t.inputs[l + 1] = {};
      t.bn_cache[l] = {};
      g = conv[l].backward(t.inputs[l], g, l > 0 || input_grad);
    }
    t.inputs[0] = {};
    return g;
  }

  /// Trainable tensors in a fixed order: per layer weight, bias, gamma, beta.
  std::vector<Tensor<T>*> parameters() {
    std::vector<Tensor<T>*> out;
    for (std::size_t l = 0; l < kNumLayers; ++l) {
      out.insert(out.end(), {&conv[l].weight, &conv[l].bias, &bn[l].gamma, &bn[l].beta});
    }
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  /// Weights, biases, BN affine parameters and running statistics.
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < kNumLayers; ++l) {
      n += conv[l].weight.size() + conv[l].bias.size() + bn[l].gamma.size() + bn[l].beta.size() +
           bn[l].running_mean.size() + bn[l].running_var.size();
    }
    return n;
  }

  template <typename U>
  DescriptorNet<U> cast() const {
    DescriptorNet<U> out;
    for (std::size_t l = 0; l < kNumLayers; ++l) {
      out.conv[l].weight = conv[l].weight.template cast<U>();
      out.conv[l].bias = conv[l].bias.template cast<U>();
      out.conv[l].stride = conv[l].stride;
      out.conv[l].padding = conv[l].padding;
      out.bn[l].gamma = bn[l].gamma.template cast<U>();
      out.bn[l].beta = bn[l].beta.template cast<U>();
      out.bn[l].running_mean.assign(bn[l].running_mean.begin(), bn[l].running_mean.end());
      out.bn[l].running_var.assign(bn[l].running_var.begin(), bn[l].running_var.end());
      out.bn[l].eps = static_cast<U>(bn[l].eps);
      out.bn[l].momentum = static_cast<U>(bn[l].momentum);
    }
    return out;
  }

 private:
  static void check_input(const Tensor<T>& x) {
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != kPatchSize || x.dim(3) != kPatchSize || x.dim(0) == 0) {
      throw ShapeError("descriptor net expects (B x 1 x 128 x 128) patches, got " + nn::shape_string(x.shape()));
    }
  }
};

/// Subtracts the mean and divides by max(std, 1e-6).
inline std::vector<float> preprocess_patch(std::span<const float> raw) {
  if (raw.size() != kPatchSize * kPatchSize) {
    throw ShapeError("patch must hold 128x128 values, got " + std::to_string(raw.size()));
  }
  double sum = 0.0;
  for (float v : raw) sum += v;
  const double mean = sum / raw.size();
  double sq = 0.0;
  for (float v : raw) sq += (v - mean) * (v - mean);
  const double sd = std::max(std::sqrt(sq / raw.size()), 1e-6);
  std::vector<float> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<float>((raw[i] - mean) / sd);
  return out;
}

// Checkpoint format (little endian):
//   "SSLDESC1" | u32 version | 7 x u32 strides |
//   per layer: u32 name length, name, u32 rank, u32 extents[rank], f32 weights,
//              then bias, gamma, beta, running_mean, running_var as (u32 n, f32[n]) |
//   u32 CRC32 of all preceding bytes.
inline constexpr std::string_view kCheckpointMagic = "SSLDESC1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> serialize_checkpoint(const DescriptorNet<float>& net) {
  ByteWriter w;
  w.str(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  for (std::size_t l = 0; l < kNumLayers; ++l) w.u32(static_cast<std::uint32_t>(net.conv[l].stride));
  auto array = [&w](std::span<const float> v) {
    w.u32(static_cast<std::uint32_t>(v.size()));
    for (float x : v) w.f32(x);
  };
  for (std::size_t l = 0; l < kNumLayers; ++l) {
    const std::string name = "conv" + std::to_string(l + 1);
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.str(name);
    const auto& shape = net.conv[l].weight.shape();
    w.u32(static_cast<std::uint32_t>(shape.size()));
    for (auto e : shape) w.u32(static_cast<std::uint32_t>(e));
    for (float x : net.conv[l].weight.values()) w.f32(x);
    array(net.conv[l].bias.values());
    array(net.bn[l].gamma.values());
    array(net.bn[l].beta.values());
    array(net.bn[l].running_mean);
    array(net.bn[l].running_var);
  }
  w.crc_trailer();
  return std::move(w).take();
}

inline DescriptorNet<float> deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (bytes.size() < kCheckpointMagic.size() || r.str(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw FormatError("not a descriptor checkpoint (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  for (std::size_t l = 0; l < kNumLayers; ++l) {
    const std::size_t at = r.offset();
    if (r.u32() != static_cast<std::uint32_t>(kStrides[l])) {
      throw CorruptionError("stride schedule does not match the descriptor architecture", at);
    }
  }
  auto net = DescriptorNet<float>::initialize(0);
  std::size_t in = 1;
  for (std::size_t l = 0; l < kNumLayers; ++l) {
    const std::string expected_name = "conv" + std::to_string(l + 1);
    std::size_t at = r.offset();
    const std::uint32_t name_len = r.u32();
    if (name_len > 256) throw CorruptionError("implausible layer name length", at);
    if (r.str(name_len) != expected_name) throw CorruptionError("expected layer " + expected_name, at);
    at = r.offset();
    const std::uint32_t rank = r.u32();
    const nn::Shape want = {kFilters[l], in, kKernels[l], kKernels[l]};
    if (rank != want.size()) throw CorruptionError("unexpected weight rank", at);
    nn::Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u32());
    if (shape != want) throw CorruptionError("weight shape " + nn::shape_string(shape) + " does not match architecture", at);
    for (float& x : net.conv[l].weight.values()) x = r.f32();
    auto array = [&r](std::span<float> v) {
      const std::size_t pos = r.offset();
      if (r.u32() != v.size()) throw CorruptionError("array length mismatch", pos);
      for (float& x : v) x = r.f32();
    };
    array(net.conv[l].bias.values());
    array(net.bn[l].gamma.values());
    array(net.bn[l].beta.values());
    array(net.bn[l].running_mean);
    array(net.bn[l].running_var);
    in = kFilters[l];
  }
  if (r.remaining() != 4) {
    if (r.remaining() < 4) throw CorruptionError("checkpoint truncated before checksum", r.offset());
    throw CorruptionError("trailing bytes after checkpoint body", r.offset());
  }
  ByteReader::verify_crc_trailer(bytes, "checkpoint");
  for (std::size_t l = 0; l < kNumLayers; ++l) {
    for (float v : net.bn[l].running_var) {
      if (!(v >= 0.0f)) throw FormatError("checkpoint has a negative running variance");
    }
  }
  return net;
}

inline void save_checkpoint(const DescriptorNet<float>& net, const std::string& path) {
  write_binary_file(path, serialize_checkpoint(net));
}

inline DescriptorNet<float> load_checkpoint(const std::string& path) {
  const auto bytes = read_binary_file(path);
  return deserialize_checkpoint(bytes);
}

}  // namespace ssdesc
