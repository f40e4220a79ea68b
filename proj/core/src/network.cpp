#include "nst/network.hpp"

#include <algorithm>

namespace nst::net {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::DepSepConv: return "depsep_conv";
    case LayerKind::TransposedConv: return "transposed_conv";
    case LayerKind::NNUpsampleConv: return "nn_upsample_conv";
    case LayerKind::ConcatUpsampleConv: return "concat_upsample_conv";
    case LayerKind::Residual: return "residual";
    case LayerKind::InstanceNorm: return "instance_norm";
    case LayerKind::ReLU: return "relu";
    case LayerKind::TanhOut: return "tanh_out";
    case LayerKind::DepSepTransposedConv: return "depsep_transposed_conv";
  }
  return "unknown";
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Johnson: return "johnson";
    case Variant::DepSep: return "depsep";
    case Variant::DepSepUpsamp: return "depsep_upsamp";
    case Variant::DepSepNN: return "depsep_nn";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kVariants)
    if (variant_name(v) == name) return v;
  throw std::invalid_argument("unknown network variant '" + std::string(name) +
                              "' (expected johnson, depsep, depsep_upsamp or depsep_nn)");
}

namespace {

constexpr std::size_t kMultiplier = 4;

bool is_conv_type(LayerKind k) {
  switch (k) {
    case LayerKind::Conv:
    case LayerKind::DepSepConv:
    case LayerKind::TransposedConv:
    case LayerKind::DepSepTransposedConv:
    case LayerKind::NNUpsampleConv:
    case LayerKind::ConcatUpsampleConv:
      return true;
    default:
      return false;
  }
}

bool is_upsampling(LayerKind k) {
  return k == LayerKind::TransposedConv || k == LayerKind::DepSepTransposedConv ||
         k == LayerKind::NNUpsampleConv || k == LayerKind::ConcatUpsampleConv;
}

}  // namespace

NetworkSpec make_spec(Variant v) {
  const bool separable = v != Variant::Johnson;
  const LayerKind conv = separable ? LayerKind::DepSepConv : LayerKind::Conv;
  const std::size_t m = separable ? kMultiplier : 1;

  NetworkSpec spec{v, {}};
  auto& L = spec.layers;
  auto norm_relu = [&] {
    L.push_back({LayerKind::InstanceNorm});
    L.push_back({LayerKind::ReLU});
  };
  auto add_conv = [&](std::size_t out, std::size_t k, int stride) {
    L.push_back({conv, out, k, stride, m});
  };
  auto add_up = [&](std::size_t out) {
    switch (v) {
      case Variant::Johnson: L.push_back({LayerKind::TransposedConv, out, 3, 2, 1}); break;
      case Variant::DepSep: L.push_back({LayerKind::DepSepTransposedConv, out, 3, 2, kMultiplier}); break;
      case Variant::DepSepUpsamp: L.push_back({LayerKind::ConcatUpsampleConv, out, 1, 2, 1}); break;
      case Variant::DepSepNN: L.push_back({LayerKind::NNUpsampleConv, out, 1, 2, 1}); break;
    }
  };

  add_conv(32, 9, 1);
  norm_relu();
  add_conv(64, 3, 2);
  norm_relu();
  add_conv(128, 3, 2);
  norm_relu();
  for (int i = 0; i < 5; ++i) L.push_back({LayerKind::Residual, 128, 3, 1, m, separable});
  add_up(64);
  norm_relu();
  add_up(32);
  norm_relu();
  add_conv(3, 9, 1);
  L.push_back({LayerKind::TanhOut});
  return spec;
}

void validate(const NetworkSpec& spec) {
  std::size_t channels = 3;
  int residuals = 0;
  int down = 1, up = 1;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + std::string(to_string(l.kind)) + ")";
    if (is_conv_type(l.kind) || l.kind == LayerKind::Residual) {
      if (l.out_channels == 0 || l.kernel == 0) throw ShapeError(where + ": missing channels or kernel");
      if (l.stride != 1 && l.stride != 2) throw ShapeError(where + ": stride must be 1 or 2");
    }
    if (l.kind == LayerKind::Residual) {
      if (l.out_channels != channels)
        throw ShapeError(where + ": residual block must keep " + std::to_string(channels) + " channels");
      ++residuals;
    } else if (is_conv_type(l.kind)) {
      if (is_upsampling(l.kind)) {
        up *= l.stride;
      } else {
        down *= l.stride;
      }
      channels = l.out_channels;
    }
  }
  if (channels != 3) throw ShapeError("network must output 3 channels, got " + std::to_string(channels));
  if (residuals != 5) throw ShapeError("network must contain exactly 5 residual blocks");
  if (down != up) throw ShapeError("network downsampling and upsampling factors differ");
}

std::vector<std::uint64_t> layer_flops(const NetworkSpec& spec, std::size_t h, std::size_t w) {
  using u64 = std::uint64_t;
  std::vector<u64> out;
  u64 c = 3, H = h, W = w;
  auto conv_cost = [](u64 ci, u64 co, u64 k, u64 oh, u64 ow) { return 2 * ci * co * k * k * oh * ow + co * oh * ow; };
  auto depsep_cost = [](u64 ci, u64 co, u64 k, u64 m, u64 oh, u64 ow) {
    return 2 * ci * m * k * k * oh * ow + 2 * ci * m * co * oh * ow + co * oh * ow;
  };
  for (const auto& l : spec.layers) {
    const u64 co = l.out_channels, k = l.kernel, m = l.channel_multiplier;
    const auto s = static_cast<u64>(l.stride);
    u64 f = 0;
    switch (l.kind) {
      case LayerKind::Conv: {
        const u64 oh = (H + s - 1) / s, ow = (W + s - 1) / s;
        f = conv_cost(c, co, k, oh, ow);
        H = oh, W = ow, c = co;
        break;
      }
      case LayerKind::DepSepConv: {
        const u64 oh = (H + s - 1) / s, ow = (W + s - 1) / s;
        f = depsep_cost(c, co, k, m, oh, ow);
        H = oh, W = ow, c = co;
        break;
      }
      case LayerKind::TransposedConv: {
        // every input pixel scatters a k x k stamp into each output channel
        const u64 oh = H * s, ow = W * s;
        f = 2 * c * co * k * k * H * W + co * oh * ow;
        H = oh, W = ow, c = co;
        break;
      }
      case LayerKind::DepSepTransposedConv: {
        const u64 oh = H * s, ow = W * s;
        f = 2 * c * m * k * k * H * W + 2 * c * m * co * oh * ow + co * oh * ow;
        H = oh, W = ow, c = co;
        break;
      }
      case LayerKind::NNUpsampleConv: {
        f = conv_cost(c, co, 1, H, W);
        H *= 2, W *= 2, c = co;
        break;
      }
      case LayerKind::ConcatUpsampleConv: {
        const u64 oh = H * 2, ow = W * 2;
        f = 7 * c * oh * ow + conv_cost(2 * c, co, 1, oh, ow);
        H = oh, W = ow, c = co;
        break;
      }
      case LayerKind::Residual: {
        const u64 one = l.depthwise_separable ? depsep_cost(c, c, k, m, H, W) : conv_cost(c, c, k, H, W);
        f = 2 * one + 2 * 7 * c * H * W + c * H * W + c * H * W;
        break;
      }
      case LayerKind::InstanceNorm: f = 7 * c * H * W; break;
      case LayerKind::ReLU: f = c * H * W; break;
      case LayerKind::TanhOut: f = 3 * c * H * W; break;
    }
    out.push_back(f);
  }
  return out;
}

std::uint64_t flop_estimate(const NetworkSpec& spec, std::size_t h, std::size_t w) {
  std::uint64_t total = 0;
  for (auto f : layer_flops(spec, h, w)) total += f;
  return total;
}

// ---------------------------------------------------------------------------

template <class T>
std::vector<const Tensor<T>*> NetworkGrads<T>::tensors() const {
  std::vector<const Tensor<T>*> out;
  for (const auto& p : layers) for_each_tensor(p, [&](const Tensor<T>& t) { out.push_back(&t); });
  return out;
}

template <class T>
Network<T> Network<T>::build(Variant v, std::uint64_t seed) {
  return from_spec(make_spec(v), seed);
}

template <class T>
Network<T> Network<T>::from_spec(NetworkSpec spec, std::uint64_t seed) {
  validate(spec);
  Rng rng(seed);
  std::vector<Layer<T>> layers;
  std::size_t c = 3;
  for (const auto& l : spec.layers) {
    Layer<T> layer{l, c, std::monostate{}};
    switch (l.kind) {
      case LayerKind::Conv:
        layer.params = ops::make_conv<T>(rng, c, l.out_channels, l.kernel, l.stride);
        break;
      case LayerKind::DepSepConv:
      case LayerKind::DepSepTransposedConv:
        layer.params = ops::make_depsep<T>(rng, c, l.out_channels, l.kernel, l.stride, l.channel_multiplier);
        break;
      case LayerKind::TransposedConv:
        layer.params = ops::make_transposed_conv<T>(rng, c, l.out_channels, l.kernel, l.stride);
        break;
      case LayerKind::NNUpsampleConv:
        layer.params = ops::make_conv<T>(rng, c, l.out_channels, 1, 1);
        break;
      case LayerKind::ConcatUpsampleConv:
        layer.params = ops::make_conv<T>(rng, 2 * c, l.out_channels, 1, 1);
        break;
      case LayerKind::Residual:
        layer.params = ops::make_residual<T>(rng, c, l.kernel, l.depthwise_separable, l.channel_multiplier);
        break;
      case LayerKind::InstanceNorm:
        layer.params = ops::make_instance_norm<T>(c);
        break;
      case LayerKind::ReLU:
      case LayerKind::TanhOut:
        break;
    }
    if (is_conv_type(l.kind)) c = l.out_channels;
    layers.push_back(std::move(layer));
  }
  return Network(std::move(spec), std::move(layers), seed);
}

template <class T>
void Network<T>::check_input(const Tensor<T>& x) const {
  const Shape& s = x.shape();
  if (s.c != 3) throw ShapeError("network input must have 3 channels, got " + s.str());
  if (s.h % 4 != 0 || s.w % 4 != 0)
    throw ShapeError("network input height and width must be multiples of 4, got " + std::to_string(s.h) + "x" +
                     std::to_string(s.w));
}

namespace {

template <class T>
Tensor<T> layer_forward(const Layer<T>& layer, const Tensor<T>& x) {
  using namespace ops;
  const auto& p = layer.params;
  switch (layer.spec.kind) {
    case LayerKind::Conv: return conv2d_fwd(x, std::get<ConvParams<T>>(p));
    case LayerKind::DepSepConv: return depsep_conv_fwd(x, std::get<DepSepParams<T>>(p));
    case LayerKind::TransposedConv: return transposed_conv_fwd(x, std::get<TransposedConvParams<T>>(p));
    case LayerKind::DepSepTransposedConv: return depsep_transposed_conv_fwd(x, std::get<DepSepParams<T>>(p));
    case LayerKind::NNUpsampleConv: return nn_upsample_conv_fwd(x, std::get<ConvParams<T>>(p));
    case LayerKind::ConcatUpsampleConv: return concat_upsample_conv_fwd(x, std::get<ConvParams<T>>(p));
    case LayerKind::Residual: return residual_block_fwd(x, std::get<ResidualParams<T>>(p));
    case LayerKind::InstanceNorm: return instance_norm_fwd(x, std::get<InstanceNormParams<T>>(p));
    case LayerKind::ReLU: return relu_fwd(x);
    case LayerKind::TanhOut: return tanh_out_fwd(x);
  }
  throw std::logic_error("unhandled layer kind");
}

template <class T>
std::pair<Tensor<T>, LayerParams<T>> layer_backward(const Layer<T>& layer, const Tensor<T>& x,
                                                    const Tensor<T>& up) {
  using namespace ops;
  const auto& p = layer.params;
  auto wrap = [](auto g) -> std::pair<Tensor<T>, LayerParams<T>> {
    return {std::move(g.input_grad), LayerParams<T>(std::move(g.param_grads))};
  };
  switch (layer.spec.kind) {
    case LayerKind::Conv: return wrap(conv2d_bwd(x, std::get<ConvParams<T>>(p), up));
    case LayerKind::DepSepConv: return wrap(depsep_conv_bwd(x, std::get<DepSepParams<T>>(p), up));
    case LayerKind::TransposedConv: return wrap(transposed_conv_bwd(x, std::get<TransposedConvParams<T>>(p), up));
    case LayerKind::DepSepTransposedConv:
      return wrap(depsep_transposed_conv_bwd(x, std::get<DepSepParams<T>>(p), up));
    case LayerKind::NNUpsampleConv: return wrap(nn_upsample_conv_bwd(x, std::get<ConvParams<T>>(p), up));
    case LayerKind::ConcatUpsampleConv: return wrap(concat_upsample_conv_bwd(x, std::get<ConvParams<T>>(p), up));
    case LayerKind::Residual: return wrap(residual_block_bwd(x, std::get<ResidualParams<T>>(p), up));
    case LayerKind::InstanceNorm: return wrap(instance_norm_bwd(x, std::get<InstanceNormParams<T>>(p), up));
    case LayerKind::ReLU: return {relu_bwd(x, up), std::monostate{}};
    case LayerKind::TanhOut: return {tanh_out_bwd(x, up), std::monostate{}};
  }
  throw std::logic_error("unhandled layer kind");
}

}  // namespace

template <class T>
Tensor<T> Network<T>::forward(const Tensor<T>& x) const {
  check_input(x);
  Tensor<T> cur = x;
  for (const auto& layer : layers_) cur = layer_forward(layer, cur);
  return cur;
}

template <class T>
Tensor<T> Network<T>::forward(const Tensor<T>& x, Trace<T>& trace) const {
  check_input(x);
  trace.inputs.clear();
  trace.inputs.reserve(layers_.size());
  Tensor<T> cur = x;
  for (const auto& layer : layers_) {
    trace.inputs.push_back(cur);
    cur = layer_forward(layer, cur);
  }
  trace.output = cur;
  return cur;
}

template <class T>
NetworkGrads<T> Network<T>::backward(const Trace<T>& trace, const Tensor<T>& upstream) const {
  if (trace.inputs.size() != layers_.size())
    throw std::invalid_argument("backward: trace does not come from this network");
  if (upstream.shape() != trace.output.shape())
    throw ShapeError("backward: upstream " + upstream.shape().str() + " does not match output " +
                     trace.output.shape().str());
  NetworkGrads<T> g;
  g.layers.resize(layers_.size());
  Tensor<T> cur = upstream;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    auto [dx, dp] = layer_backward(layers_[i], trace.inputs[i], cur);
    cur = std::move(dx);
    g.layers[i] = std::move(dp);
  }
  g.input_grad = std::move(cur);
  return g;
}

template <class T>
std::vector<Tensor<T>*> Network<T>::parameters() {
  std::vector<Tensor<T>*> out;
  for (auto& l : layers_) for_each_tensor(l.params, [&](Tensor<T>& t) { out.push_back(&t); });
  return out;
}

template <class T>
std::vector<const Tensor<T>*> Network<T>::parameters() const {
  std::vector<const Tensor<T>*> out;
  for (const auto& l : layers_) for_each_tensor(l.params, [&](const Tensor<T>& t) { out.push_back(&t); });
  return out;
}

template <class T>
std::size_t param_count(const Layer<T>& layer) {
  std::size_t n = 0;
  for_each_tensor(layer.params, [&](const Tensor<T>& t) { n += t.size(); });
  return n;
}

template <class T>
std::size_t Network<T>::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += net::param_count(l);
  return n;
}

template class Network<float>;
template class Network<double>;
template struct NetworkGrads<float>;
template struct NetworkGrads<double>;
template std::size_t param_count<float>(const Layer<float>&);
template std::size_t param_count<double>(const Layer<double>&);

}  // namespace nst::net
