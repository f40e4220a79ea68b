#include "nst/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "nst/parallel.hpp"

namespace nst::ops {

namespace {

std::string dims(std::size_t h, std::size_t w) { return std::to_string(h) + "x" + std::to_string(w); }

/// Shape bookkeeping for one reflection-padded square conv.
struct Geometry {
  std::size_t h, w;    // input
  std::size_t k, pad;  // kernel, pad = k/2
  int stride;
  std::size_t ph, pw;  // padded input
  std::size_t oh, ow;  // output
};

Geometry geometry(std::size_t h, std::size_t w, std::size_t k, int stride) {
  if (k % 2 == 0) throw ShapeError("conv: kernel must be odd, got " + std::to_string(k));
  if (stride != 1 && stride != 2)
    throw ShapeError("conv: stride must be 1 or 2, got " + std::to_string(stride));
  const std::size_t pad = k / 2;
  if (pad >= h || pad >= w)
    throw ShapeError("conv: input " + dims(h, w) + " is too small for reflection padding " +
                     std::to_string(pad) + " (kernel " + std::to_string(k) + ")");
  Geometry g{h, w, k, pad, stride, h + 2 * pad, w + 2 * pad, 0, 0};
  g.oh = (g.ph - k) / static_cast<std::size_t>(stride) + 1;
  g.ow = (g.pw - k) / static_cast<std::size_t>(stride) + 1;
  return g;
}

inline std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto m = static_cast<std::ptrdiff_t>(n);
  if (i < 0) i = -i;
  if (i >= m) i = 2 * (m - 1) - i;
  return static_cast<std::size_t>(i);
}

template <class T>
void pad_plane(const T* src, const Geometry& g, T* dst) {
  const auto p = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t py = 0; py < g.ph; ++py) {
    const T* row = src + reflect(static_cast<std::ptrdiff_t>(py) - p, g.h) * g.w;
    T* out = dst + py * g.pw;
    for (std::size_t px = 0; px < g.pad; ++px) out[px] = row[reflect(static_cast<std::ptrdiff_t>(px) - p, g.w)];
    std::memcpy(out + g.pad, row, g.w * sizeof(T));
    for (std::size_t px = g.pad + g.w; px < g.pw; ++px)
      out[px] = row[reflect(static_cast<std::ptrdiff_t>(px) - p, g.w)];
  }
}

/// dst += padded-gradient folded back onto the unpadded plane.
template <class T>
void fold_plane(const T* padded, const Geometry& g, T* dst) {
  const auto p = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t py = 0; py < g.ph; ++py) {
    T* row = dst + reflect(static_cast<std::ptrdiff_t>(py) - p, g.h) * g.w;
    const T* in = padded + py * g.pw;
    for (std::size_t px = 0; px < g.pw; ++px)
      row[reflect(static_cast<std::ptrdiff_t>(px) - p, g.w)] += in[px];
  }
}

/// Padded copies of all channels of one sample. Returns the sample itself
/// when no padding is needed.
template <class T>
const T* padded_sample(const Tensor<T>& x, std::size_t n, const Geometry& g, std::vector<T>& buf) {
  const std::size_t c = x.shape().c;
  if (g.pad == 0) return x.sample(n).data();
  buf.resize(c * g.ph * g.pw);
  for (std::size_t ch = 0; ch < c; ++ch) pad_plane(x.plane(n, ch).data(), g, buf.data() + ch * g.ph * g.pw);
  return buf.data();
}

// out[oy][ox] += sum_{kh,kw} ker[kh][kw] * xp[oy*S+kh][ox*S+kw], (kh,kw) ascending.
template <class T, std::size_t K, int S>
void conv_plane_fixed(const T* xp, std::size_t pw, const T* ker, T* out, std::size_t oh, std::size_t ow) {
  for (std::size_t oy = 0; oy < oh; ++oy) {
    T* o = out + oy * ow;
    for (std::size_t kh = 0; kh < K; ++kh) {
      const T* row = xp + (oy * S + kh) * pw;
      const T* kr = ker + kh * K;
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const T* src = row + ox * S;
        T acc = o[ox];
        for (std::size_t kw = 0; kw < K; ++kw) acc += kr[kw] * src[kw];
        o[ox] = acc;
      }
    }
  }
}

template <class T>
void conv_plane_dyn(const T* xp, std::size_t pw, const T* ker, std::size_t k, int s, T* out, std::size_t oh,
                    std::size_t ow) {
  for (std::size_t oy = 0; oy < oh; ++oy) {
    T* o = out + oy * ow;
    for (std::size_t kh = 0; kh < k; ++kh) {
      const T* row = xp + (oy * s + kh) * pw;
      const T* kr = ker + kh * k;
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const T* src = row + ox * s;
        T acc = o[ox];
        for (std::size_t kw = 0; kw < k; ++kw) acc += kr[kw] * src[kw];
        o[ox] = acc;
      }
    }
  }
}

template <class T>
void conv_plane(const T* xp, const Geometry& g, const T* ker, T* out) {
  const auto s = g.stride;
  switch (g.k) {
    case 1:
      if (s == 1) return conv_plane_fixed<T, 1, 1>(xp, g.pw, ker, out, g.oh, g.ow);
      return conv_plane_fixed<T, 1, 2>(xp, g.pw, ker, out, g.oh, g.ow);
    case 3:
      if (s == 1) return conv_plane_fixed<T, 3, 1>(xp, g.pw, ker, out, g.oh, g.ow);
      return conv_plane_fixed<T, 3, 2>(xp, g.pw, ker, out, g.oh, g.ow);
    case 9:
      if (s == 1) return conv_plane_fixed<T, 9, 1>(xp, g.pw, ker, out, g.oh, g.ow);
      return conv_plane_fixed<T, 9, 2>(xp, g.pw, ker, out, g.oh, g.ow);
    default:
      return conv_plane_dyn(xp, g.pw, ker, g.k, s, out, g.oh, g.ow);
  }
}

// dxp[oy*s+kh][ox*s+kw] += ker[kh][kw] * dy[oy][ox]
template <class T>
void conv_plane_adjoint(const T* dy, const Geometry& g, const T* ker, T* dxp) {
  const std::size_t k = g.k;
  const auto s = static_cast<std::size_t>(g.stride);
  for (std::size_t oy = 0; oy < g.oh; ++oy) {
    const T* gr = dy + oy * g.ow;
    for (std::size_t kh = 0; kh < k; ++kh) {
      T* row = dxp + (oy * s + kh) * g.pw;
      const T* kr = ker + kh * k;
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        const T gv = gr[ox];
        T* dst = row + ox * s;
        for (std::size_t kw = 0; kw < k; ++kw) dst[kw] += kr[kw] * gv;
      }
    }
  }
}

// dk[kh][kw] += sum_{oy,ox} dy[oy][ox] * xp[oy*s+kh][ox*s+kw]
template <class T>
void conv_plane_kernel_grad(const T* xp, const T* dy, const Geometry& g, T* dk) {
  const std::size_t k = g.k;
  const auto s = static_cast<std::size_t>(g.stride);
  for (std::size_t kh = 0; kh < k; ++kh) {
    for (std::size_t kw = 0; kw < k; ++kw) {
      T acc = dk[kh * k + kw];
      for (std::size_t oy = 0; oy < g.oh; ++oy) {
        const T* row = xp + (oy * s + kh) * g.pw + kw;
        const T* gr = dy + oy * g.ow;
        for (std::size_t ox = 0; ox < g.ow; ++ox) acc += gr[ox] * row[ox * s];
      }
      dk[kh * k + kw] = acc;
    }
  }
}

template <class T>
void check_bias(const Tensor<T>& bias, std::size_t out_c, const char* op) {
  if (bias.shape() != Shape{out_c, 1, 1, 1})
    throw ShapeError(std::string(op) + ": bias shape " + bias.shape().str() + " does not match " +
                     std::to_string(out_c) + " output channels");
}

template <class T>
void check_square(const Tensor<T>& weight, const char* op) {
  if (weight.shape().h != weight.shape().w)
    throw ShapeError(std::string(op) + ": kernel must be square, got " + weight.shape().str());
}

template <class T>
void check_same(const Tensor<T>& a, const Shape& expected, const char* what) {
  if (a.shape() != expected)
    throw ShapeError(std::string(what) + ": expected shape " + expected.str() + ", got " + a.shape().str());
}

// ---- core conv kernels over whole tensors ----

/// weight (co, ci, k, k); bias may be null.
template <class T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias, int stride) {
  const Shape& xs = x.shape();
  const std::size_t co = weight.shape().n, ci = weight.shape().c, k = weight.shape().h;
  const Geometry g = geometry(xs.h, xs.w, k, stride);
  Tensor<T> out(Shape{xs.n, co, g.oh, g.ow});
  std::vector<T> buf;
  for (std::size_t n = 0; n < xs.n; ++n) {
    const T* xp = padded_sample(x, n, g, buf);
    parallel_for(0, co, [&](std::size_t oc) {
      T* o = out.plane(n, oc).data();
      std::fill(o, o + g.oh * g.ow, bias ? (*bias)[oc] : T(0));
      for (std::size_t ic = 0; ic < ci; ++ic)
        conv_plane(xp + ic * g.ph * g.pw, g, weight.ptr() + (oc * ci + ic) * k * k, o);
    });
  }
  return out;
}

template <class T>
Tensor<T> conv_input_grad(const Tensor<T>& up, const Tensor<T>& weight, int stride, std::size_t h,
                          std::size_t w) {
  const std::size_t co = weight.shape().n, ci = weight.shape().c, k = weight.shape().h;
  const Geometry g = geometry(h, w, k, stride);
  check_same(up, Shape{up.shape().n, co, g.oh, g.ow}, "conv input grad: upstream");
  Tensor<T> dx(Shape{up.shape().n, ci, h, w});
  for (std::size_t n = 0; n < up.shape().n; ++n) {
    parallel_for(0, ci, [&](std::size_t ic) {
      std::vector<T> dxp(g.ph * g.pw, T(0));
      for (std::size_t oc = 0; oc < co; ++oc)
        conv_plane_adjoint(up.plane(n, oc).data(), g, weight.ptr() + (oc * ci + ic) * k * k, dxp.data());
      fold_plane(dxp.data(), g, dx.plane(n, ic).data());
    });
  }
  return dx;
}

template <class T>
Tensor<T> conv_weight_grad(const Tensor<T>& x, const Tensor<T>& up, std::size_t k, int stride) {
  const Shape& xs = x.shape();
  const std::size_t co = up.shape().c, ci = xs.c;
  const Geometry g = geometry(xs.h, xs.w, k, stride);
  check_same(up, Shape{xs.n, co, g.oh, g.ow}, "conv weight grad: upstream");
  Tensor<T> dw(Shape{co, ci, k, k});
  std::vector<std::vector<T>> padded(xs.n);
  std::vector<const T*> xps(xs.n);
  for (std::size_t n = 0; n < xs.n; ++n) xps[n] = padded_sample(x, n, g, padded[n]);
  parallel_for(0, co, [&](std::size_t oc) {
    for (std::size_t ic = 0; ic < ci; ++ic) {
      T* dk = dw.ptr() + (oc * ci + ic) * k * k;
      for (std::size_t n = 0; n < xs.n; ++n)
        conv_plane_kernel_grad(xps[n] + ic * g.ph * g.pw, up.plane(n, oc).data(), g, dk);
    }
  });
  return dw;
}

template <class T>
Tensor<T> bias_grad(const Tensor<T>& up) {
  const Shape& s = up.shape();
  Tensor<T> db(Shape{s.c, 1, 1, 1});
  for (std::size_t c = 0; c < s.c; ++c) {
    double acc = 0.0;
    for (std::size_t n = 0; n < s.n; ++n)
      for (T v : up.plane(n, c)) acc += v;
    db[c] = static_cast<T>(acc);
  }
  return db;
}

// ---- depthwise kernels: channel q = ic*m + j sees input channel ic ----

template <class T>
Tensor<T> depthwise_forward(const Tensor<T>& x, const Tensor<T>& ker, std::size_t m, int stride) {
  const Shape& xs = x.shape();
  const std::size_t k = ker.shape().h;
  const Geometry g = geometry(xs.h, xs.w, k, stride);
  Tensor<T> out(Shape{xs.n, xs.c * m, g.oh, g.ow});
  std::vector<T> buf;
  for (std::size_t n = 0; n < xs.n; ++n) {
    const T* xp = padded_sample(x, n, g, buf);
    parallel_for(0, xs.c * m, [&](std::size_t q) {
      conv_plane(xp + (q / m) * g.ph * g.pw, g, ker.ptr() + q * k * k, out.plane(n, q).data());
    });
  }
  return out;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> depthwise_backward(const Tensor<T>& x, const Tensor<T>& ker, std::size_t m,
                                                   int stride, const Tensor<T>& up) {
  const Shape& xs = x.shape();
  const std::size_t k = ker.shape().h;
  const Geometry g = geometry(xs.h, xs.w, k, stride);
  check_same(up, Shape{xs.n, xs.c * m, g.oh, g.ow}, "depthwise backward: upstream");
  Tensor<T> dx(xs);
  Tensor<T> dk(ker.shape());
  std::vector<std::vector<T>> padded(xs.n);
  std::vector<const T*> xps(xs.n);
  for (std::size_t n = 0; n < xs.n; ++n) xps[n] = padded_sample(x, n, g, padded[n]);
  parallel_for(0, xs.c, [&](std::size_t ic) {
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t q = ic * m + j;
      for (std::size_t n = 0; n < xs.n; ++n)
        conv_plane_kernel_grad(xps[n] + ic * g.ph * g.pw, up.plane(n, q).data(), g, dk.ptr() + q * k * k);
    }
    std::vector<T> dxp(g.ph * g.pw);
    for (std::size_t n = 0; n < xs.n; ++n) {
      std::fill(dxp.begin(), dxp.end(), T(0));
      for (std::size_t j = 0; j < m; ++j) {
        const std::size_t q = ic * m + j;
        conv_plane_adjoint(up.plane(n, q).data(), g, ker.ptr() + q * k * k, dxp.data());
      }
      fold_plane(dxp.data(), g, dx.plane(n, ic).data());
    }
  });
  return {std::move(dx), std::move(dk)};
}

/// Adjoint of a channel-reducing depthwise conv: input (n, c, h, w) ->
/// (n, c*m, h*s, w*s), channel q = ic*m + j scatters input channel ic.
template <class T>
Tensor<T> depthwise_transposed_forward(const Tensor<T>& x, const Tensor<T>& ker, std::size_t m, int stride) {
  const Shape& xs = x.shape();
  const std::size_t k = ker.shape().h;
  const auto s = static_cast<std::size_t>(stride);
  const Geometry g = geometry(xs.h * s, xs.w * s, k, stride);
  Tensor<T> out(Shape{xs.n, xs.c * m, g.h, g.w});
  for (std::size_t n = 0; n < xs.n; ++n) {
    parallel_for(0, xs.c * m, [&](std::size_t q) {
      std::vector<T> buf(g.ph * g.pw, T(0));
      conv_plane_adjoint(x.plane(n, q / m).data(), g, ker.ptr() + q * k * k, buf.data());
      fold_plane(buf.data(), g, out.plane(n, q).data());
    });
  }
  return out;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> depthwise_transposed_backward(const Tensor<T>& x, const Tensor<T>& ker,
                                                              std::size_t m, int stride, const Tensor<T>& up) {
  const Shape& xs = x.shape();
  const std::size_t k = ker.shape().h;
  const auto s = static_cast<std::size_t>(stride);
  const Geometry g = geometry(xs.h * s, xs.w * s, k, stride);
  check_same(up, Shape{xs.n, xs.c * m, g.h, g.w}, "depthwise transposed backward: upstream");
  Tensor<T> dx(xs);
  Tensor<T> dk(ker.shape());
  for (std::size_t n = 0; n < xs.n; ++n) {
    std::vector<T> buf;
    const T* upp = padded_sample(up, n, g, buf);
    parallel_for(0, xs.c, [&](std::size_t ic) {
      T* d = dx.plane(n, ic).data();
      for (std::size_t j = 0; j < m; ++j) {
        const std::size_t q = ic * m + j;
        conv_plane(upp + q * g.ph * g.pw, g, ker.ptr() + q * k * k, d);
        conv_plane_kernel_grad(upp + q * g.ph * g.pw, x.plane(n, ic).data(), g, dk.ptr() + q * k * k);
      }
    });
  }
  return {std::move(dx), std::move(dk)};
}

template <class T>
void check_conv_input(const Tensor<T>& x, std::size_t in_c, const char* op) {
  if (x.shape().c != in_c)
    throw ShapeError(std::string(op) + ": input has " + std::to_string(x.shape().c) +
                     " channels, layer expects " + std::to_string(in_c));
}

template <class T>
void check_depsep(const DepSepParams<T>& p, const char* op) {
  const Shape& d = p.depthwise.shape();
  if (p.multiplier == 0 || d.n % p.multiplier != 0 || d.c != 1)
    throw ShapeError(std::string(op) + ": depthwise weight " + d.str() + " inconsistent with multiplier " +
                     std::to_string(p.multiplier));
  check_square(p.depthwise, op);
  const Shape& pw = p.pointwise.shape();
  if (pw.c != d.n || pw.h != 1 || pw.w != 1)
    throw ShapeError(std::string(op) + ": pointwise weight " + pw.str() + " does not follow depthwise " +
                     d.str());
  check_bias(p.bias, pw.n, op);
}

}  // namespace

// ---------------------------------------------------------------------------
// construction

template <class T>
ConvParams<T> make_conv(Rng& rng, std::size_t in_c, std::size_t out_c, std::size_t k, int stride) {
  return {he_init<T>(rng, Shape{out_c, in_c, k, k}, in_c * k * k), Tensor<T>(Shape{out_c, 1, 1, 1}), stride};
}

template <class T>
DepSepParams<T> make_depsep(Rng& rng, std::size_t in_c, std::size_t out_c, std::size_t k, int stride,
                            std::size_t multiplier) {
  DepSepParams<T> p;
  p.depthwise = he_init<T>(rng, Shape{in_c * multiplier, 1, k, k}, k * k);
  p.pointwise = he_init<T>(rng, Shape{out_c, in_c * multiplier, 1, 1}, in_c * multiplier);
  p.bias = Tensor<T>(Shape{out_c, 1, 1, 1});
  p.stride = stride;
  p.multiplier = multiplier;
  return p;
}

template <class T>
TransposedConvParams<T> make_transposed_conv(Rng& rng, std::size_t in_c, std::size_t out_c, std::size_t k,
                                             int stride) {
  return {he_init<T>(rng, Shape{in_c, out_c, k, k}, in_c * k * k), Tensor<T>(Shape{out_c, 1, 1, 1}), stride};
}

template <class T>
InstanceNormParams<T> make_instance_norm(std::size_t c) {
  return {full<T>(Shape{c, 1, 1, 1}, T(1)), Tensor<T>(Shape{c, 1, 1, 1}), 1e-5};
}

template <class T>
ResidualParams<T> make_residual(Rng& rng, std::size_t channels, std::size_t k, bool depthwise_separable,
                                std::size_t multiplier) {
  auto conv = [&]() -> SpatialConv<T> {
    if (depthwise_separable) return make_depsep<T>(rng, channels, channels, k, 1, multiplier);
    return make_conv<T>(rng, channels, channels, k, 1);
  };
  ResidualParams<T> p;
  p.conv1 = conv();
  p.norm1 = make_instance_norm<T>(channels);
  p.conv2 = conv();
  p.norm2 = make_instance_norm<T>(channels);
  return p;
}

// ---------------------------------------------------------------------------
// convolution

template <class T>
Tensor<T> conv2d_fwd(const Tensor<T>& x, const ConvParams<T>& p) {
  check_square(p.weight, "conv2d");
  check_conv_input(x, p.in_channels(), "conv2d");
  check_bias(p.bias, p.out_channels(), "conv2d");
  auto y = conv_forward(x, p.weight, &p.bias, p.stride);
  NST_DEBUG_CHECK_FINITE(y);
  return y;
}

template <class T>
GradPair<T, ConvParams<T>> conv2d_bwd(const Tensor<T>& x, const ConvParams<T>& p, const Tensor<T>& upstream) {
  check_square(p.weight, "conv2d");
  check_conv_input(x, p.in_channels(), "conv2d");
  check_bias(p.bias, p.out_channels(), "conv2d");
  GradPair<T, ConvParams<T>> g;
  g.input_grad = conv_input_grad(upstream, p.weight, p.stride, x.shape().h, x.shape().w);
  g.param_grads.weight = conv_weight_grad(x, upstream, p.kernel(), p.stride);
  g.param_grads.bias = bias_grad(upstream);
  g.param_grads.stride = p.stride;
  return g;
}

template <class T>
Tensor<T> conv2d_input_grad(const Tensor<T>& upstream, const Tensor<T>& weight, int stride, std::size_t in_h,
                            std::size_t in_w) {
  check_square(weight, "conv2d_input_grad");
  return conv_input_grad(upstream, weight, stride, in_h, in_w);
}

template <class T>
Tensor<T> depsep_conv_fwd(const Tensor<T>& x, const DepSepParams<T>& p) {
  check_depsep(p, "depsep_conv");
  check_conv_input(x, p.in_channels(), "depsep_conv");
  const auto d = depthwise_forward(x, p.depthwise, p.multiplier, p.stride);
  auto y = conv_forward(d, p.pointwise, &p.bias, 1);
  NST_DEBUG_CHECK_FINITE(y);
  return y;
}

template <class T>
GradPair<T, DepSepParams<T>> depsep_conv_bwd(const Tensor<T>& x, const DepSepParams<T>& p,
                                             const Tensor<T>& upstream) {
  check_depsep(p, "depsep_conv");
  check_conv_input(x, p.in_channels(), "depsep_conv");
  const auto d = depthwise_forward(x, p.depthwise, p.multiplier, p.stride);
  GradPair<T, DepSepParams<T>> g;
  const auto dd = conv_input_grad(upstream, p.pointwise, 1, d.shape().h, d.shape().w);
  g.param_grads.pointwise = conv_weight_grad(d, upstream, 1, 1);
  g.param_grads.bias = bias_grad(upstream);
  auto [dx, dk] = depthwise_backward(x, p.depthwise, p.multiplier, p.stride, dd);
  g.input_grad = std::move(dx);
  g.param_grads.depthwise = std::move(dk);
  g.param_grads.stride = p.stride;
  g.param_grads.multiplier = p.multiplier;
  return g;
}

template <class T>
Tensor<T> transposed_conv_fwd(const Tensor<T>& x, const TransposedConvParams<T>& p) {
  check_square(p.weight, "transposed_conv");
  check_conv_input(x, p.in_channels(), "transposed_conv");
  check_bias(p.bias, p.out_channels(), "transposed_conv");
  const auto s = static_cast<std::size_t>(p.stride);
  auto y = conv_input_grad(x, p.weight, p.stride, x.shape().h * s, x.shape().w * s);
  for (std::size_t n = 0; n < y.shape().n; ++n)
    for (std::size_t c = 0; c < y.shape().c; ++c)
      for (T& v : y.plane(n, c)) v += p.bias[c];
  NST_DEBUG_CHECK_FINITE(y);
  return y;
}

template <class T>
GradPair<T, TransposedConvParams<T>> transposed_conv_bwd(const Tensor<T>& x, const TransposedConvParams<T>& p,
                                                         const Tensor<T>& upstream) {
  check_square(p.weight, "transposed_conv");
  check_conv_input(x, p.in_channels(), "transposed_conv");
  check_bias(p.bias, p.out_channels(), "transposed_conv");
  const auto s = static_cast<std::size_t>(p.stride);
  check_same(upstream, Shape{x.shape().n, p.out_channels(), x.shape().h * s, x.shape().w * s},
             "transposed_conv: upstream");
  GradPair<T, TransposedConvParams<T>> g;
  // The forward map is the adjoint of conv(., weight); its adjoint is the conv itself.
  g.input_grad = conv_forward(upstream, p.weight, static_cast<const Tensor<T>*>(nullptr), p.stride);
  g.param_grads.weight = conv_weight_grad(upstream, x, p.kernel(), p.stride);
  g.param_grads.bias = bias_grad(upstream);
  g.param_grads.stride = p.stride;
  return g;
}

template <class T>
Tensor<T> depsep_transposed_conv_fwd(const Tensor<T>& x, const DepSepParams<T>& p) {
  check_depsep(p, "depsep_transposed_conv");
  check_conv_input(x, p.in_channels(), "depsep_transposed_conv");
  const auto d = depthwise_transposed_forward(x, p.depthwise, p.multiplier, p.stride);
  auto y = conv_forward(d, p.pointwise, &p.bias, 1);
  NST_DEBUG_CHECK_FINITE(y);
  return y;
}

template <class T>
GradPair<T, DepSepParams<T>> depsep_transposed_conv_bwd(const Tensor<T>& x, const DepSepParams<T>& p,
                                                        const Tensor<T>& upstream) {
  check_depsep(p, "depsep_transposed_conv");
  check_conv_input(x, p.in_channels(), "depsep_transposed_conv");
  const auto d = depthwise_transposed_forward(x, p.depthwise, p.multiplier, p.stride);
  GradPair<T, DepSepParams<T>> g;
  const auto dd = conv_input_grad(upstream, p.pointwise, 1, d.shape().h, d.shape().w);
  g.param_grads.pointwise = conv_weight_grad(d, upstream, 1, 1);
  g.param_grads.bias = bias_grad(upstream);
  auto [dx, dk] = depthwise_transposed_backward(x, p.depthwise, p.multiplier, p.stride, dd);
  g.input_grad = std::move(dx);
  g.param_grads.depthwise = std::move(dk);
  g.param_grads.stride = p.stride;
  g.param_grads.multiplier = p.multiplier;
  return g;
}

template <class T>
Tensor<T> spatial_conv_fwd(const Tensor<T>& x, const SpatialConv<T>& p) {
  if (const auto* c = std::get_if<ConvParams<T>>(&p)) return conv2d_fwd(x, *c);
  return depsep_conv_fwd(x, std::get<DepSepParams<T>>(p));
}

template <class T>
GradPair<T, SpatialConv<T>> spatial_conv_bwd(const Tensor<T>& x, const SpatialConv<T>& p,
                                             const Tensor<T>& upstream) {
  if (const auto* c = std::get_if<ConvParams<T>>(&p)) {
    auto g = conv2d_bwd(x, *c, upstream);
    return {std::move(g.input_grad), std::move(g.param_grads)};
  }
  auto g = depsep_conv_bwd(x, std::get<DepSepParams<T>>(p), upstream);
  return {std::move(g.input_grad), std::move(g.param_grads)};
}

// ---------------------------------------------------------------------------
// resampling

template <class T>
Tensor<T> nn_upsample_fwd(const Tensor<T>& x) {
  const Shape& s = x.shape();
  Tensor<T> out(Shape{s.n, s.c, 2 * s.h, 2 * s.w});
  const std::size_t ow = 2 * s.w;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* in = x.plane(n, c).data();
      T* o = out.plane(n, c).data();
      for (std::size_t y = 0; y < s.h; ++y) {
        T* r0 = o + (2 * y) * ow;
        for (std::size_t xx = 0; xx < s.w; ++xx) r0[2 * xx] = r0[2 * xx + 1] = in[y * s.w + xx];
        std::memcpy(r0 + ow, r0, ow * sizeof(T));
      }
    }
  }
  return out;
}

template <class T>
Tensor<T> nn_upsample_bwd(const Tensor<T>& upstream) {
  const Shape& s = upstream.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0)
    throw ShapeError("nn_upsample_bwd: upstream spatial dims must be even, got " + s.str());
  Tensor<T> dx(Shape{s.n, s.c, s.h / 2, s.w / 2});
  const std::size_t h = s.h / 2, w = s.w / 2;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* g = upstream.plane(n, c).data();
      T* d = dx.plane(n, c).data();
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) {
          const T* a = g + (2 * y) * s.w + 2 * xx;
          d[y * w + xx] = (a[0] + a[1]) + (a[s.w] + a[s.w + 1]);
        }
    }
  }
  return dx;
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double frac;  // weight of i1
};

/// Half-pixel-centre source taps for a x2 upscale of an axis of length n.
std::vector<Tap> bilinear_taps(std::size_t n) {
  std::vector<Tap> taps(2 * n);
  for (std::size_t d = 0; d < 2 * n; ++d) {
    double src = (static_cast<double>(d) + 0.5) / 2.0 - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(src);
    if (i0 > n - 1) i0 = n - 1;
    const std::size_t i1 = std::min(i0 + 1, n - 1);
    taps[d] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

template <class T>
Tensor<T> bilinear_upsample_fwd(const Tensor<T>& x) {
  const Shape& s = x.shape();
  const auto ty = bilinear_taps(s.h);
  const auto tx = bilinear_taps(s.w);
  Tensor<T> out(Shape{s.n, s.c, 2 * s.h, 2 * s.w});
  const std::size_t oh = 2 * s.h, ow = 2 * s.w;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* in = x.plane(n, c).data();
      T* o = out.plane(n, c).data();
      for (std::size_t y = 0; y < oh; ++y) {
        const T fy = static_cast<T>(ty[y].frac);
        const T* r0 = in + ty[y].i0 * s.w;
        const T* r1 = in + ty[y].i1 * s.w;
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const T fx = static_cast<T>(tx[xx].frac);
          const T top = (T(1) - fx) * r0[tx[xx].i0] + fx * r0[tx[xx].i1];
          const T bot = (T(1) - fx) * r1[tx[xx].i0] + fx * r1[tx[xx].i1];
          o[y * ow + xx] = (T(1) - fy) * top + fy * bot;
        }
      }
    }
  }
  return out;
}

template <class T>
Tensor<T> bilinear_upsample_bwd(const Tensor<T>& upstream) {
  const Shape& s = upstream.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0)
    throw ShapeError("bilinear_upsample_bwd: upstream spatial dims must be even, got " + s.str());
  const std::size_t h = s.h / 2, w = s.w / 2;
  const auto ty = bilinear_taps(h);
  const auto tx = bilinear_taps(w);
  Tensor<T> dx(Shape{s.n, s.c, h, w});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* g = upstream.plane(n, c).data();
      T* d = dx.plane(n, c).data();
      for (std::size_t y = 0; y < s.h; ++y) {
        const T fy = static_cast<T>(ty[y].frac);
        T* r0 = d + ty[y].i0 * w;
        T* r1 = d + ty[y].i1 * w;
        for (std::size_t xx = 0; xx < s.w; ++xx) {
          const T fx = static_cast<T>(tx[xx].frac);
          const T gv = g[y * s.w + xx];
          const T top = (T(1) - fy) * gv;
          const T bot = fy * gv;
          r0[tx[xx].i0] += (T(1) - fx) * top;
          r0[tx[xx].i1] += fx * top;
          r1[tx[xx].i0] += (T(1) - fx) * bot;
          r1[tx[xx].i1] += fx * bot;
        }
      }
    }
  }
  return dx;
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw ShapeError("concat_channels: batch/spatial mismatch " + sa.str() + " vs " + sb.str());
  Tensor<T> out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  for (std::size_t n = 0; n < sa.n; ++n) {
    auto dst = out.sample(n);
    std::copy(a.sample(n).begin(), a.sample(n).end(), dst.begin());
    std::copy(b.sample(n).begin(), b.sample(n).end(), dst.begin() + static_cast<std::ptrdiff_t>(sa.sample()));
  }
  return out;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, std::size_t first_channels) {
  const Shape& s = x.shape();
  if (first_channels == 0 || first_channels >= s.c)
    throw ShapeError("split_channels: split point " + std::to_string(first_channels) + " outside (0, " +
                     std::to_string(s.c) + ")");
  Tensor<T> a(Shape{s.n, first_channels, s.h, s.w});
  Tensor<T> b(Shape{s.n, s.c - first_channels, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    auto src = x.sample(n);
    const auto cut = static_cast<std::ptrdiff_t>(a.shape().sample());
    std::copy(src.begin(), src.begin() + cut, a.sample(n).begin());
    std::copy(src.begin() + cut, src.end(), b.sample(n).begin());
  }
  return {std::move(a), std::move(b)};
}

template <class T>
Tensor<T> nn_upsample_conv_fwd(const Tensor<T>& x, const ConvParams<T>& p) {
  return nn_upsample_fwd(conv2d_fwd(x, p));
}

template <class T>
GradPair<T, ConvParams<T>> nn_upsample_conv_bwd(const Tensor<T>& x, const ConvParams<T>& p,
                                                const Tensor<T>& upstream) {
  return conv2d_bwd(x, p, nn_upsample_bwd(upstream));
}

template <class T>
Tensor<T> concat_upsample_conv_fwd(const Tensor<T>& x, const ConvParams<T>& p) {
  return conv2d_fwd(concat_channels(nn_upsample_fwd(x), bilinear_upsample_fwd(x)), p);
}

template <class T>
GradPair<T, ConvParams<T>> concat_upsample_conv_bwd(const Tensor<T>& x, const ConvParams<T>& p,
                                                    const Tensor<T>& upstream) {
  const auto u = concat_channels(nn_upsample_fwd(x), bilinear_upsample_fwd(x));
  auto g = conv2d_bwd(u, p, upstream);
  auto [dn, db] = split_channels(g.input_grad, x.shape().c);
  g.input_grad = add(nn_upsample_bwd(dn), bilinear_upsample_bwd(db));
  return g;
}

// ---------------------------------------------------------------------------
// normalization and activations

namespace {

template <class T>
void check_norm(const Tensor<T>& x, const InstanceNormParams<T>& p) {
  const Shape& s = x.shape();
  if (s.plane() < 2)
    throw ShapeError("instance_norm: spatial slice must hold at least 2 values, got " + s.str());
  if (p.gamma.shape() != Shape{s.c, 1, 1, 1} || p.beta.shape() != Shape{s.c, 1, 1, 1})
    throw ShapeError("instance_norm: parameters do not match " + std::to_string(s.c) + " channels");
}

struct Moments {
  double mean;
  double inv_std;
};

template <class T>
Moments moments(std::span<const T> v, double eps) {
  double m = 0.0;
  for (T a : v) m += a;
  m /= static_cast<double>(v.size());
  double var = 0.0;
  for (T a : v) var += (a - m) * (a - m);
  var /= static_cast<double>(v.size());
  return {m, 1.0 / std::sqrt(var + eps)};
}

}  // namespace

template <class T>
Tensor<T> instance_norm_fwd(const Tensor<T>& x, const InstanceNormParams<T>& p) {
  check_norm(x, p);
  const Shape& s = x.shape();
  Tensor<T> y(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    parallel_for(0, s.c, [&](std::size_t c) {
      auto in = x.plane(n, c);
      const auto mo = moments(in, p.epsilon);
      const double ga = p.gamma[c], be = p.beta[c];
      auto out = y.plane(n, c);
      for (std::size_t i = 0; i < in.size(); ++i)
        out[i] = static_cast<T>(ga * ((in[i] - mo.mean) * mo.inv_std) + be);
    });
  }
  return y;
}

template <class T>
GradPair<T, InstanceNormParams<T>> instance_norm_bwd(const Tensor<T>& x, const InstanceNormParams<T>& p,
                                                     const Tensor<T>& upstream) {
  check_norm(x, p);
  check_same(upstream, x.shape(), "instance_norm: upstream");
  const Shape& s = x.shape();
  GradPair<T, InstanceNormParams<T>> g{Tensor<T>(s), zeros_like_params(p)};
  std::vector<double> dgamma(s.c, 0.0), dbeta(s.c, 0.0);
  for (std::size_t n = 0; n < s.n; ++n) {
    parallel_for(0, s.c, [&](std::size_t c) {
      auto in = x.plane(n, c);
      auto up = upstream.plane(n, c);
      const auto mo = moments(in, p.epsilon);
      const auto count = static_cast<double>(in.size());
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t i = 0; i < in.size(); ++i) {
        const double xh = (in[i] - mo.mean) * mo.inv_std;
        sum_g += up[i];
        sum_gx += up[i] * xh;
      }
      dbeta[c] += sum_g;
      dgamma[c] += sum_gx;
      const double k = p.gamma[c] * mo.inv_std;
      const double mg = sum_g / count, mgx = sum_gx / count;
      auto dx = g.input_grad.plane(n, c);
      for (std::size_t i = 0; i < in.size(); ++i) {
        const double xh = (in[i] - mo.mean) * mo.inv_std;
        dx[i] = static_cast<T>(k * (up[i] - mg - xh * mgx));
      }
    });
  }
  for (std::size_t c = 0; c < s.c; ++c) {
    g.param_grads.gamma[c] = static_cast<T>(dgamma[c]);
    g.param_grads.beta[c] = static_cast<T>(dbeta[c]);
  }
  return g;
}

template <class T>
Tensor<T> relu_fwd(const Tensor<T>& x) {
  return map(x, [](T v) { return v > T(0) ? v : T(0); });
}

template <class T>
Tensor<T> relu_bwd(const Tensor<T>& x, const Tensor<T>& upstream) {
  return zip(x, upstream, [](T v, T g) { return v > T(0) ? g : T(0); });
}

template <class T>
Tensor<T> tanh_out_fwd(const Tensor<T>& x) {
  return map(x, [](T v) { return (std::tanh(v) + T(1)) / T(2); });
}

template <class T>
Tensor<T> tanh_out_bwd(const Tensor<T>& x, const Tensor<T>& upstream) {
  return zip(x, upstream, [](T v, T g) {
    const T t = std::tanh(v);
    return g * (T(1) - t * t) / T(2);
  });
}

template <class T>
Tensor<T> residual_block_fwd(const Tensor<T>& x, const ResidualParams<T>& p) {
  const auto a1 = spatial_conv_fwd(x, p.conv1);
  if (a1.shape() != x.shape())
    throw ShapeError("residual_block: inner conv changes shape " + x.shape().str() + " -> " + a1.shape().str());
  const auto c1 = relu_fwd(instance_norm_fwd(a1, p.norm1));
  const auto b2 = instance_norm_fwd(spatial_conv_fwd(c1, p.conv2), p.norm2);
  return add(x, b2);
}

template <class T>
GradPair<T, ResidualParams<T>> residual_block_bwd(const Tensor<T>& x, const ResidualParams<T>& p,
                                                  const Tensor<T>& upstream) {
  const auto a1 = spatial_conv_fwd(x, p.conv1);
  if (a1.shape() != x.shape())
    throw ShapeError("residual_block: inner conv changes shape " + x.shape().str() + " -> " + a1.shape().str());
  const auto b1 = instance_norm_fwd(a1, p.norm1);
  const auto c1 = relu_fwd(b1);
  const auto a2 = spatial_conv_fwd(c1, p.conv2);

  auto gn2 = instance_norm_bwd(a2, p.norm2, upstream);
  auto gc2 = spatial_conv_bwd(c1, p.conv2, gn2.input_grad);
  const auto db1 = relu_bwd(b1, gc2.input_grad);
  auto gn1 = instance_norm_bwd(a1, p.norm1, db1);
  auto gc1 = spatial_conv_bwd(x, p.conv1, gn1.input_grad);

  GradPair<T, ResidualParams<T>> g;
  g.input_grad = add(upstream, gc1.input_grad);
  g.param_grads.conv1 = std::move(gc1.param_grads);
  g.param_grads.norm1 = std::move(gn1.param_grads);
  g.param_grads.conv2 = std::move(gc2.param_grads);
  g.param_grads.norm2 = std::move(gn2.param_grads);
  return g;
}

#define NST_OPS_INSTANTIATE(T)                                                                              \
  template ConvParams<T> make_conv<T>(Rng&, std::size_t, std::size_t, std::size_t, int);                    \
  template DepSepParams<T> make_depsep<T>(Rng&, std::size_t, std::size_t, std::size_t, int, std::size_t);   \
  template TransposedConvParams<T> make_transposed_conv<T>(Rng&, std::size_t, std::size_t, std::size_t, int); \
  template InstanceNormParams<T> make_instance_norm<T>(std::size_t);                                        \
  template ResidualParams<T> make_residual<T>(Rng&, std::size_t, std::size_t, bool, std::size_t);           \
  template Tensor<T> conv2d_fwd<T>(const Tensor<T>&, const ConvParams<T>&);                                 \
  template GradPair<T, ConvParams<T>> conv2d_bwd<T>(const Tensor<T>&, const ConvParams<T>&, const Tensor<T>&); \
  template Tensor<T> conv2d_input_grad<T>(const Tensor<T>&, const Tensor<T>&, int, std::size_t, std::size_t); \
  template Tensor<T> depsep_conv_fwd<T>(const Tensor<T>&, const DepSepParams<T>&);                          \
  template GradPair<T, DepSepParams<T>> depsep_conv_bwd<T>(const Tensor<T>&, const DepSepParams<T>&,        \
                                                           const Tensor<T>&);                               \
  template Tensor<T> transposed_conv_fwd<T>(const Tensor<T>&, const TransposedConvParams<T>&);              \
  template GradPair<T, TransposedConvParams<T>> transposed_conv_bwd<T>(                                     \
      const Tensor<T>&, const TransposedConvParams<T>&, const Tensor<T>&);                                  \
  template Tensor<T> depsep_transposed_conv_fwd<T>(const Tensor<T>&, const DepSepParams<T>&);               \
  template GradPair<T, DepSepParams<T>> depsep_transposed_conv_bwd<T>(const Tensor<T>&,                     \
                                                                      const DepSepParams<T>&,               \
                                                                      const Tensor<T>&);                    \
  template Tensor<T> spatial_conv_fwd<T>(const Tensor<T>&, const SpatialConv<T>&);                          \
  template GradPair<T, SpatialConv<T>> spatial_conv_bwd<T>(const Tensor<T>&, const SpatialConv<T>&,         \
                                                           const Tensor<T>&);                               \
  template Tensor<T> nn_upsample_fwd<T>(const Tensor<T>&);                                                  \
  template Tensor<T> nn_upsample_bwd<T>(const Tensor<T>&);                                                  \
  template Tensor<T> bilinear_upsample_fwd<T>(const Tensor<T>&);                                            \
  template Tensor<T> bilinear_upsample_bwd<T>(const Tensor<T>&);                                            \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template std::pair<Tensor<T>, Tensor<T>> split_channels<T>(const Tensor<T>&, std::size_t);                \
  template Tensor<T> nn_upsample_conv_fwd<T>(const Tensor<T>&, const ConvParams<T>&);                       \
  template GradPair<T, ConvParams<T>> nn_upsample_conv_bwd<T>(const Tensor<T>&, const ConvParams<T>&,       \
                                                              const Tensor<T>&);                            \
  template Tensor<T> concat_upsample_conv_fwd<T>(const Tensor<T>&, const ConvParams<T>&);                   \
  template GradPair<T, ConvParams<T>> concat_upsample_conv_bwd<T>(const Tensor<T>&, const ConvParams<T>&,   \
                                                                  const Tensor<T>&);                        \
  template Tensor<T> instance_norm_fwd<T>(const Tensor<T>&, const InstanceNormParams<T>&);                  \
  template GradPair<T, InstanceNormParams<T>> instance_norm_bwd<T>(const Tensor<T>&,                        \
                                                                   const InstanceNormParams<T>&,            \
                                                                   const Tensor<T>&);                       \
  template Tensor<T> relu_fwd<T>(const Tensor<T>&);                                                         \
  template Tensor<T> relu_bwd<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> tanh_out_fwd<T>(const Tensor<T>&);                                                     \
  template Tensor<T> tanh_out_bwd<T>(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> residual_block_fwd<T>(const Tensor<T>&, const ResidualParams<T>&);                     \
  template GradPair<T, ResidualParams<T>> residual_block_bwd<T>(const Tensor<T>&, const ResidualParams<T>&, \
                                                                const Tensor<T>&);

NST_OPS_INSTANTIATE(float)
NST_OPS_INSTANTIATE(double)

}  // namespace nst::ops
