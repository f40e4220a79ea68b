// Independent reference implementations used only by tests: plain loops with
// no shared code paths with the library kernels.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "nst/tensor.hpp"

namespace oracle {

using nst::Shape;
using nst::Tensor;

inline std::size_t reflect(long i, long n) {
  if (i < 0) i = -i;
  if (i >= n) i = 2 * (n - 1) - i;
  return static_cast<std::size_t>(i);
}

/// Triple loop, ascending inner index.
inline Tensor<double> matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t r = a.shape().h, k = a.shape().w, c = b.shape().w;
  Tensor<double> out(Shape{1, 1, r, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      double acc = 0;
      for (std::size_t t = 0; t < k; ++t) acc += a[i * k + t] * b[t * c + j];
      out[i * c + j] = acc;
    }
  return out;
}

/// Seven nested loops over (n, oc, oh, ow, ic, kh, kw) with reflection
/// padding k/2 and output size ceil(h / stride).
template <class T>
Tensor<T> conv(const Tensor<T>& x, const Tensor<T>& w, const std::vector<T>& bias, int stride) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  const long k = static_cast<long>(ws.h), pad = k / 2, s = stride;
  const std::size_t oh = (xs.h + s - 1) / s, ow = (xs.w + s - 1) / s;
  Tensor<T> y(Shape{xs.n, ws.n, oh, ow});
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t oc = 0; oc < ws.n; ++oc)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          T acc = bias.empty() ? T(0) : bias[oc];
          for (std::size_t ic = 0; ic < ws.c; ++ic)
            for (long a = 0; a < k; ++a)
              for (long b = 0; b < k; ++b) {
                const auto r = reflect(static_cast<long>(i) * s + a - pad, static_cast<long>(xs.h));
                const auto c = reflect(static_cast<long>(j) * s + b - pad, static_cast<long>(xs.w));
                acc += w.at(oc, ic, static_cast<std::size_t>(a), static_cast<std::size_t>(b)) * x.at(n, ic, r, c);
              }
          y.at(n, oc, i, j) = acc;
        }
  return y;
}

/// Transpose of the dense matrix of the (bias-free) conv above, applied to y.
/// Built column by column from unit inputs, so it never mirrors the adjoint
/// kernel's scatter logic.
inline Tensor<double> conv_transpose_apply(const Tensor<double>& y, const Tensor<double>& w, int stride,
                                           Shape in_shape) {
  Tensor<double> out(in_shape);
  Tensor<double> e(in_shape);
  for (std::size_t i = 0; i < e.size(); ++i) {
    e[i] = 1.0;
    const auto col = conv<double>(e, w, {}, stride);
    double acc = 0;
    for (std::size_t j = 0; j < col.size(); ++j) acc += col[j] * y[j];
    out[i] = acc;
    e[i] = 0.0;
  }
  return out;
}

/// G[i][j] = sum_p F[i][p] F[j][p] by a double loop over channel pairs.
inline Tensor<double> gram(const Tensor<double>& f) {
  const std::size_t c = f.shape().c, p = f.shape().plane();
  Tensor<double> g(Shape{1, 1, c, c});
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      double acc = 0;
      for (std::size_t q = 0; q < p; ++q) acc += f[i * p + q] * f[j * p + q];
      g[i * c + j] = acc;
    }
  return g;
}

/// Central differences of a scalar functional at every entry of `x`.
template <class F>
Tensor<double> numeric_grad(Tensor<double>& x, F loss, double h = 1e-5) {
  Tensor<double> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = x[i];
    x[i] = s + h;
    const double up = loss();
    x[i] = s - h;
    const double down = loss();
    x[i] = s;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double rel_err(const Tensor<double>& a, const Tensor<double>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double den = std::max(std::sqrt(na), std::sqrt(nb));
  return den == 0 ? std::sqrt(d) : std::sqrt(d) / den;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace oracle
