#pragma once

// Differentiable layer primitives. Every forward op is a pure function of its
// input and parameters; every backward op takes the same forward input plus
// the upstream gradient and recomputes whatever intermediates it needs.
//
// All spatial convolutions use reflection padding of floor(k/2), so output
// spatial size is ceil(size / stride) and only the stride changes resolution.

#include <array>
#include <cstddef>
#include <utility>
#include <variant>

#include "nst/tensor.hpp"

namespace nst::ops {

/// Full convolution. weight (out_c, in_c, k, k), bias (out_c, 1, 1, 1).
template <class T>
struct ConvParams {
  Tensor<T> weight;
  Tensor<T> bias;
  int stride = 1;

  std::size_t out_channels() const { return weight.shape().n; }
  std::size_t in_channels() const { return weight.shape().c; }
  std::size_t kernel() const { return weight.shape().h; }
  std::array<Tensor<T>*, 2> tensors() { return {&weight, &bias}; }
  std::array<const Tensor<T>*, 2> tensors() const { return {&weight, &bias}; }
};

/// Depthwise (each input channel convolved with `multiplier` k x k filters)
/// followed by a 1x1 pointwise projection with bias.
/// depthwise (in_c*m, 1, k, k), pointwise (out_c, in_c*m, 1, 1), bias (out_c,1,1,1).
template <class T>
struct DepSepParams {
  Tensor<T> depthwise;
  Tensor<T> pointwise;
  Tensor<T> bias;
  int stride = 1;
  std::size_t multiplier = 4;

  std::size_t in_channels() const { return depthwise.shape().n / multiplier; }
  std::size_t out_channels() const { return pointwise.shape().n; }
  std::size_t kernel() const { return depthwise.shape().h; }
  std::array<Tensor<T>*, 3> tensors() { return {&depthwise, &pointwise, &bias}; }
  std::array<const Tensor<T>*, 3> tensors() const { return {&depthwise, &pointwise, &bias}; }
};

/// Transposed convolution: the adjoint of a strided conv2d, plus bias.
/// weight (in_c, out_c, k, k) is shared with the conv it is the adjoint of.
template <class T>
struct TransposedConvParams {
  Tensor<T> weight;
  Tensor<T> bias;
  int stride = 2;

  std::size_t in_channels() const { return weight.shape().n; }
  std::size_t out_channels() const { return weight.shape().c; }
  std::size_t kernel() const { return weight.shape().h; }
  std::array<Tensor<T>*, 2> tensors() { return {&weight, &bias}; }
  std::array<const Tensor<T>*, 2> tensors() const { return {&weight, &bias}; }
};

template <class T>
struct InstanceNormParams {
  Tensor<T> gamma;  // (c,1,1,1), init 1
  Tensor<T> beta;   // (c,1,1,1), init 0
  double epsilon = 1e-5;

  std::size_t channels() const { return gamma.shape().n; }
  std::array<Tensor<T>*, 2> tensors() { return {&gamma, &beta}; }
  std::array<const Tensor<T>*, 2> tensors() const { return {&gamma, &beta}; }
};

/// A 3x3 (or any square) conv used inside residual blocks: full or
/// depthwise-separable.
template <class T>
using SpatialConv = std::variant<ConvParams<T>, DepSepParams<T>>;

/// y = x + IN2(conv2(relu(IN1(conv1(x)))))
template <class T>
struct ResidualParams {
  SpatialConv<T> conv1;
  InstanceNormParams<T> norm1;
  SpatialConv<T> conv2;
  InstanceNormParams<T> norm2;
};

/// Gradient w.r.t. the op input plus gradients laid out exactly like the
/// op's parameter struct.
template <class T, class P>
struct GradPair {
  Tensor<T> input_grad;
  P param_grads;
};

// --- construction (he_init weights, zero bias, gamma=1, beta=0) -----------

template <class T>
ConvParams<T> make_conv(Rng& rng, std::size_t in_c, std::size_t out_c, std::size_t k, int stride);
template <class T>
DepSepParams<T> make_depsep(Rng& rng, std::size_t in_c, std::size_t out_c, std::size_t k, int stride,
                            std::size_t multiplier);
template <class T>
TransposedConvParams<T> make_transposed_conv(Rng& rng, std::size_t in_c, std::size_t out_c,
                                             std::size_t k, int stride);
template <class T>
InstanceNormParams<T> make_instance_norm(std::size_t c);
template <class T>
ResidualParams<T> make_residual(Rng& rng, std::size_t channels, std::size_t k, bool depthwise_separable,
                                std::size_t multiplier);

// --- parameter traversal --------------------------------------------------

template <class T, class F> void for_each_tensor(ConvParams<T>& p, F&& f) { for (auto* t : p.tensors()) f(*t); }
template <class T, class F> void for_each_tensor(const ConvParams<T>& p, F&& f) { for (auto* t : p.tensors()) f(*t); }
template <class T, class F> void for_each_tensor(DepSepParams<T>& p, F&& f) { for (auto* t : p.tensors()) f(*t); }
template <class T, class F> void for_each_tensor(const DepSepParams<T>& p, F&& f) { for (auto* t : p.tensors()) f(*t); }
template <class T, class F> void for_each_tensor(TransposedConvParams<T>& p, F&& f) { for (auto* t : p.tensors()) f(*t); }
template <class T, class F> void for_each_tensor(const TransposedConvParams<T>& p, F&& f) { for (auto* t : p.tensors()) f(*t); }
template <class T, class F> void for_each_tensor(InstanceNormParams<T>& p, F&& f) { for (auto* t : p.tensors()) f(*t); }
template <class T, class F> void for_each_tensor(const InstanceNormParams<T>& p, F&& f) { for (auto* t : p.tensors()) f(*t); }

template <class T, class F>
void for_each_tensor(SpatialConv<T>& p, F&& f) {
  std::visit([&](auto& q) { for_each_tensor(q, f); }, p);
}
template <class T, class F>
void for_each_tensor(const SpatialConv<T>& p, F&& f) {
  std::visit([&](const auto& q) { for_each_tensor(q, f); }, p);
}

template <class T, class F>
void for_each_tensor(ResidualParams<T>& p, F&& f) {
  for_each_tensor(p.conv1, f);
  for_each_tensor(p.norm1, f);
  for_each_tensor(p.conv2, f);
  for_each_tensor(p.norm2, f);
}
template <class T, class F>
void for_each_tensor(const ResidualParams<T>& p, F&& f) {
  for_each_tensor(p.conv1, f);
  for_each_tensor(p.norm1, f);
  for_each_tensor(p.conv2, f);
  for_each_tensor(p.norm2, f);
}

/// Same shapes, all zeros. Used to accumulate gradients.
template <class P>
P zeros_like_params(const P& p) {
  P out = p;
  for_each_tensor(out, [](auto& t) { t.fill(0); });
  return out;
}

template <class P>
std::size_t param_count(const P& p) {
  std::size_t total = 0;
  for_each_tensor(p, [&](const auto& t) { total += t.size(); });
  return total;
}

/// Spatial output size of a reflection-padded conv.
inline std::size_t conv_out_size(std::size_t in, int stride) {
  return (in + static_cast<std::size_t>(stride) - 1) / static_cast<std::size_t>(stride);
}

// --- convolution ----------------------------------------------------------

template <class T>
Tensor<T> conv2d_fwd(const Tensor<T>& x, const ConvParams<T>& p);
template <class T>
GradPair<T, ConvParams<T>> conv2d_bwd(const Tensor<T>& x, const ConvParams<T>& p,
                                      const Tensor<T>& upstream);

/// Input-gradient operator of conv2d (no bias): the exact adjoint of the
/// linear part of conv2d_fwd for an input of spatial size in_h x in_w.
template <class T>
Tensor<T> conv2d_input_grad(const Tensor<T>& upstream, const Tensor<T>& weight, int stride,
                            std::size_t in_h, std::size_t in_w);

template <class T>
Tensor<T> depsep_conv_fwd(const Tensor<T>& x, const DepSepParams<T>& p);
template <class T>
GradPair<T, DepSepParams<T>> depsep_conv_bwd(const Tensor<T>& x, const DepSepParams<T>& p,
                                             const Tensor<T>& upstream);

/// Output spatial size = input * stride.
template <class T>
Tensor<T> transposed_conv_fwd(const Tensor<T>& x, const TransposedConvParams<T>& p);
template <class T>
GradPair<T, TransposedConvParams<T>> transposed_conv_bwd(const Tensor<T>& x,
                                                         const TransposedConvParams<T>& p,
                                                         const Tensor<T>& upstream);

/// Depthwise transposed conv (each input channel scattered through
/// `multiplier` k x k filters at the stride) followed by a 1x1 pointwise
/// projection with bias. Same parameter layout as DepSepParams.
template <class T>
Tensor<T> depsep_transposed_conv_fwd(const Tensor<T>& x, const DepSepParams<T>& p);
template <class T>
GradPair<T, DepSepParams<T>> depsep_transposed_conv_bwd(const Tensor<T>& x,
                                                        const DepSepParams<T>& p,
                                                        const Tensor<T>& upstream);

template <class T>
Tensor<T> spatial_conv_fwd(const Tensor<T>& x, const SpatialConv<T>& p);
template <class T>
GradPair<T, SpatialConv<T>> spatial_conv_bwd(const Tensor<T>& x, const SpatialConv<T>& p,
                                             const Tensor<T>& upstream);

// --- resampling -----------------------------------------------------------

/// out[y][x] = in[y/2][x/2]
template <class T> Tensor<T> nn_upsample_fwd(const Tensor<T>& x);
/// Sums each 2x2 block.
template <class T> Tensor<T> nn_upsample_bwd(const Tensor<T>& upstream);

/// x2 bilinear, half-pixel centers: src = (dst + 0.5) / 2 - 0.5, clamped to
/// the valid range, 4-tap interpolation.
template <class T> Tensor<T> bilinear_upsample_fwd(const Tensor<T>& x);
template <class T> Tensor<T> bilinear_upsample_bwd(const Tensor<T>& upstream);

template <class T> Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
/// Adjoint of concat_channels: splits after the first `first_channels`.
template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, std::size_t first_channels);

/// 1x1 projection then nearest-neighbour x2. Equal to x2 then projection
/// because both maps act on different axes.
template <class T>
Tensor<T> nn_upsample_conv_fwd(const Tensor<T>& x, const ConvParams<T>& p);
template <class T>
GradPair<T, ConvParams<T>> nn_upsample_conv_bwd(const Tensor<T>& x, const ConvParams<T>& p,
                                                const Tensor<T>& upstream);

/// concat(nearest x2, bilinear x2) giving 2C channels, then a 1x1 projection.
template <class T>
Tensor<T> concat_upsample_conv_fwd(const Tensor<T>& x, const ConvParams<T>& p);
template <class T>
GradPair<T, ConvParams<T>> concat_upsample_conv_bwd(const Tensor<T>& x, const ConvParams<T>& p,
                                                    const Tensor<T>& upstream);

// --- normalization and activations ---------------------------------------

template <class T>
Tensor<T> instance_norm_fwd(const Tensor<T>& x, const InstanceNormParams<T>& p);
template <class T>
GradPair<T, InstanceNormParams<T>> instance_norm_bwd(const Tensor<T>& x,
                                                     const InstanceNormParams<T>& p,
                                                     const Tensor<T>& upstream);

template <class T> Tensor<T> relu_fwd(const Tensor<T>& x);
/// Subgradient at 0 is 0.
template <class T> Tensor<T> relu_bwd(const Tensor<T>& x, const Tensor<T>& upstream);

/// (tanh(x) + 1) / 2, mapping into [0, 1].
template <class T> Tensor<T> tanh_out_fwd(const Tensor<T>& x);
template <class T> Tensor<T> tanh_out_bwd(const Tensor<T>& x, const Tensor<T>& upstream);

template <class T>
Tensor<T> residual_block_fwd(const Tensor<T>& x, const ResidualParams<T>& p);
template <class T>
GradPair<T, ResidualParams<T>> residual_block_bwd(const Tensor<T>& x, const ResidualParams<T>& p,
                                                  const Tensor<T>& upstream);

}  // namespace nst::ops
