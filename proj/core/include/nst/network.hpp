#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <stdexcept>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "nst/ops.hpp"

namespace nst::net {

/// Numeric values are the on-disk kind codes of the weights file.
enum class LayerKind : std::uint8_t {
  Conv = 1,
  DepSepConv = 2,
  TransposedConv = 3,
  NNUpsampleConv = 4,
  ConcatUpsampleConv = 5,
  Residual = 6,
  InstanceNorm = 7,
  ReLU = 8,
  TanhOut = 9,
  DepSepTransposedConv = 10,
};

std::string_view to_string(LayerKind kind);

struct LayerSpec {
  LayerKind kind;
  std::size_t out_channels = 0;  // conv-type layers and Residual
  std::size_t kernel = 0;
  int stride = 1;
  std::size_t channel_multiplier = 1;
  bool depthwise_separable = false;  // Residual: inner conv type
};

enum class Variant { Johnson, DepSep, DepSepUpsamp, DepSepNN };

inline constexpr std::array<Variant, 4> kVariants{Variant::Johnson, Variant::DepSep, Variant::DepSepUpsamp,
                                                  Variant::DepSepNN};

std::string_view variant_name(Variant v);
/// Accepts johnson, depsep, depsep_upsamp, depsep_nn.
Variant parse_variant(std::string_view name);

struct NetworkSpec {
  Variant variant;
  std::vector<LayerSpec> layers;

  std::string_view name() const { return variant_name(variant); }
};

/// Layer stack for a variant:
///   conv(32,9,s1) conv(64,3,s2) conv(128,3,s2) 5 x residual(128,3) up(64) up(32) conv(3,9,s1) TanhOut
/// with InstanceNorm + ReLU after every conv-type layer except the last.
NetworkSpec make_spec(Variant v);

/// Throws ShapeError if channels do not chain, the net does not map 3 -> 3
/// channels, there are not exactly 5 residual blocks, or down/up-sampling do
/// not cancel.
void validate(const NetworkSpec& spec);

/// Closed-form FLOPs of one forward pass for a single (3,h,w) image.
/// Multiply-adds count as 2. Per element: bias 1, InstanceNorm 7, ReLU 1,
/// TanhOut 3, residual add 1, bilinear interpolation 7, nearest copy 0.
std::vector<std::uint64_t> layer_flops(const NetworkSpec& spec, std::size_t h, std::size_t w);
std::uint64_t flop_estimate(const NetworkSpec& spec, std::size_t h, std::size_t w);

template <class T>
using LayerParams = std::variant<std::monostate, ops::ConvParams<T>, ops::DepSepParams<T>,
                                 ops::TransposedConvParams<T>, ops::ResidualParams<T>,
                                 ops::InstanceNormParams<T>>;

template <class T, class F>
void for_each_tensor(LayerParams<T>& p, F&& f) {
  std::visit(
      [&](auto& q) {
        if constexpr (!std::is_same_v<std::decay_t<decltype(q)>, std::monostate>) ops::for_each_tensor(q, f);
      },
      p);
}
template <class T, class F>
void for_each_tensor(const LayerParams<T>& p, F&& f) {
  std::visit(
      [&](const auto& q) {
        if constexpr (!std::is_same_v<std::decay_t<decltype(q)>, std::monostate>) ops::for_each_tensor(q, f);
      },
      p);
}

template <class T>
struct Layer {
  LayerSpec spec;
  std::size_t in_channels = 0;
  LayerParams<T> params;
};

/// Input of every layer from the last forward pass, plus the output.
template <class T>
struct Trace {
  std::vector<Tensor<T>> inputs;
  Tensor<T> output;
};

template <class T>
struct NetworkGrads {
  Tensor<T> input_grad;
  std::vector<LayerParams<T>> layers;  // same layout as Network::layers()

  /// Flattened in the same order as Network::parameters().
  std::vector<const Tensor<T>*> tensors() const;
};

template <class T>
class Network {
 public:
  static Network build(Variant v, std::uint64_t seed);
  static Network build(std::string_view name, std::uint64_t seed) { return build(parse_variant(name), seed); }
  static Network from_spec(NetworkSpec spec, std::uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<Layer<T>>& layers() const { return layers_; }
  std::vector<Layer<T>>& layers() { return layers_; }
  std::uint64_t seed() const { return seed_; }

  /// x is (n,3,h,w) with h, w multiples of 4; output has the same shape, in [0,1].
  Tensor<T> forward(const Tensor<T>& x) const;
  Tensor<T> forward(const Tensor<T>& x, Trace<T>& trace) const;
  NetworkGrads<T> backward(const Trace<T>& trace, const Tensor<T>& upstream) const;

  std::vector<Tensor<T>*> parameters();
  std::vector<const Tensor<T>*> parameters() const;
  std::size_t param_count() const;

 private:
  Network(NetworkSpec spec, std::vector<Layer<T>> layers, std::uint64_t seed)
      : spec_(std::move(spec)), layers_(std::move(layers)), seed_(seed) {}

  void check_input(const Tensor<T>& x) const;

  NetworkSpec spec_;
  std::vector<Layer<T>> layers_;
  std::uint64_t seed_;
};

/// Parameter count of a single layer.
template <class T>
std::size_t param_count(const Layer<T>& layer);

// --- weights file ------------------------------------------------------------
//
// Little-endian: "NSTW", u16 version, u16 record count, then per parameter
// tensor: u8 layer kind, 4 x u32 shape, f32 data.

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint16_t kWeightsVersion = 1;
inline constexpr std::size_t kWeightsHeaderBytes = 8;
inline constexpr std::size_t kWeightsRecordHeaderBytes = 17;

struct WeightRecord {
  LayerKind kind;
  Shape shape;
  std::vector<float> data;
};

void write_weight_records(const std::filesystem::path& path, const std::vector<WeightRecord>& records);
std::vector<WeightRecord> read_weight_records(const std::filesystem::path& path);

template <class T>
void save_weights(const Network<T>& net, const std::filesystem::path& path);

/// The variant is identified from the record kinds and shapes.
template <class T>
Network<T> load_weights(const std::filesystem::path& path);

}  // namespace nst::net
