#include "nst/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace nst::losses {

Distance parse_distance(const std::string& s) {
  if (s == "mse") return Distance::mse();
  if (s == "char" || s == "charbonnier") return Distance::charbonnier();
  throw std::invalid_argument("unknown distance '" + s + "' (expected mse or char)");
}

void LossWeights::validate() const {
  if (alpha < 0 || beta < 0 || gamma < 0) throw std::invalid_argument("loss weights must be >= 0");
  auto check = [](const std::map<int, double>& m, const char* what) {
    bool any = false;
    for (const auto& [tag, w] : m) {
      if (w < 0) throw std::invalid_argument(std::string(what) + " weight for layer " + std::to_string(tag) +
                                             " is negative");
      any = any || w > 0;
    }
    if (!any) throw std::invalid_argument(std::string(what) + " layer weights are all zero");
  };
  check(style_layers, "style");
  check(content_layers, "content");
}

template <class T>
GramMatrix<T> gram(const Tensor<T>& f) {
  const Shape& s = f.shape();
  if (s.n != 1) throw ShapeError("gram: batch must be 1, got " + s.str());
  GramMatrix<T> g{matrix<T>(s.c, s.c), s};
  matmul_aat<T>(f.data(), s.c, s.plane(), g.values.data());
  return g;
}

template <class T>
ScalarGrad<T> distance(const Tensor<T>& a, const Tensor<T>& b, Distance kind) {
  if (a.shape() != b.shape())
    throw ShapeError("distance: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  if (kind.kind == Distance::Kind::Charbonnier && !(kind.epsilon > 0))
    throw std::invalid_argument("distance: Charbonnier epsilon must be > 0");
  const auto count = static_cast<double>(a.size());
  ScalarGrad<T> r{0.0, Tensor<T>(a.shape())};
  double acc = 0.0;
  if (kind.kind == Distance::Kind::MSE) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(a[i]) - b[i];
      acc += d * d;
      r.grad[i] = static_cast<T>(2.0 * d / count);
    }
  } else {
    const double e2 = kind.epsilon * kind.epsilon;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(a[i]) - b[i];
      const double root = std::sqrt(d * d + e2);
      acc += root;
      r.grad[i] = static_cast<T>(d / (count * root));
    }
  }
  r.value = acc / count;
  return r;
}

namespace {

template <class T>
const Tensor<T>& find_tap(const FeatureTaps<T>& taps, int tag, const char* which) {
  auto it = taps.find(tag);
  if (it == taps.end())
    throw std::invalid_argument(std::string(which) + " taps are missing layer " + std::to_string(tag));
  return it->second;
}

}  // namespace

template <class T>
TapLoss<T> style_loss(const FeatureTaps<T>& taps_y, const FeatureTaps<T>& taps_s, const LossWeights& weights,
                      Distance kind) {
  TapLoss<T> out;
  for (const auto& [tag, w] : weights.style_layers) {
    if (w == 0.0) continue;
    const auto& fy = find_tap(taps_y, tag, "style (generated)");
    const auto& fs = find_tap(taps_s, tag, "style (target)");
    if (fy.shape().c != fs.shape().c)
      throw ShapeError("style_loss: layer " + std::to_string(tag) + " channel mismatch");
    auto gy = gram(fy).values;
    auto gs = gram(fs).values;
    const double norm_y = weights.raw_gram ? 1.0 : static_cast<double>(fy.shape().numel());
    const double norm_s = weights.raw_gram ? 1.0 : static_cast<double>(fs.shape().numel());
    if (!weights.raw_gram) {
      gy = scale(gy, static_cast<T>(1.0 / norm_y));
      gs = scale(gs, static_cast<T>(1.0 / norm_s));
    }
    const auto d = distance(gy, gs, kind);
    out.value += w * d.value;

    // d/dF of D(F F^T / norm) = (g + g^T) F / norm
    const std::size_t c = fy.shape().c, hw = fy.shape().plane();
    auto sym = matrix<T>(c, c);
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j)
        sym[i * c + j] = static_cast<T>(w * (d.grad[i * c + j] + d.grad[j * c + i]) / norm_y);
    auto grad = matmul(sym, fy.reshaped(Shape{1, 1, c, hw})).reshaped(fy.shape());
    out.grads.emplace(tag, std::move(grad));
  }
  return out;
}

template <class T>
TapLoss<T> content_loss(const FeatureTaps<T>& taps_y, const FeatureTaps<T>& taps_n, const LossWeights& weights,
                        Distance kind) {
  TapLoss<T> out;
  for (const auto& [tag, w] : weights.content_layers) {
    if (w == 0.0) continue;
    const auto& fy = find_tap(taps_y, tag, "content (generated)");
    const auto& fn = find_tap(taps_n, tag, "content (target)");
    auto d = distance(fy, fn, kind);
    out.value += w * d.value;
    out.grads.emplace(tag, scale(d.grad, static_cast<T>(w)));
  }
  return out;
}

template <class T>
ScalarGrad<T> tv_loss(const Tensor<T>& x) {
  const Shape& s = x.shape();
  if (s.plane() < 2) throw ShapeError("tv_loss: image must have more than one pixel, got " + s.str());
  const auto count = static_cast<double>(s.numel());
  ScalarGrad<T> r{0.0, Tensor<T>(s)};
  double acc = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      auto p = x.plane(n, c);
      auto g = r.grad.plane(n, c);
      for (std::size_t i = 0; i < s.h; ++i) {
        for (std::size_t j = 0; j < s.w; ++j) {
          const std::size_t at = i * s.w + j;
          if (i + 1 < s.h) {
            const double d = static_cast<double>(p[at + s.w]) - p[at];
            acc += d * d;
            g[at + s.w] += static_cast<T>(2.0 * d / count);
            g[at] -= static_cast<T>(2.0 * d / count);
          }
          if (j + 1 < s.w) {
            const double d = static_cast<double>(p[at + 1]) - p[at];
            acc += d * d;
            g[at + 1] += static_cast<T>(2.0 * d / count);
            g[at] -= static_cast<T>(2.0 * d / count);
          }
        }
      }
    }
  }
  r.value = acc / count;
  return r;
}

template <class T>
TotalLoss<T> total_loss(const Tensor<T>& image_y, const FeatureTaps<T>& taps_y, const FeatureTaps<T>& taps_n,
                        const FeatureTaps<T>& taps_s, const LossWeights& weights, Distance content_kind,
                        Distance style_kind) {
  weights.validate();
  TotalLoss<T> out;
  const auto content = content_loss(taps_y, taps_n, weights, content_kind);
  const auto style = style_loss(taps_y, taps_s, weights, style_kind);
  const auto tv = tv_loss(image_y);
  out.content = content.value;
  out.style = style.value;
  out.tv = tv.value;
  out.total = weights.alpha * content.value + weights.beta * style.value + weights.gamma * tv.value;

  auto accumulate = [&](const FeatureTaps<T>& grads, double coeff) {
    for (const auto& [tag, g] : grads) {
      auto it = out.tap_grads.find(tag);
      if (it == out.tap_grads.end()) {
        out.tap_grads.emplace(tag, scale(g, static_cast<T>(coeff)));
      } else {
        axpy(static_cast<T>(coeff), g, it->second);
      }
    }
  };
  accumulate(content.grads, weights.alpha);
  accumulate(style.grads, weights.beta);
  out.image_grad = scale(tv.grad, static_cast<T>(weights.gamma));
  return out;
}

#define NST_LOSSES_INSTANTIATE(T)                                                                          \
  template GramMatrix<T> gram<T>(const Tensor<T>&);                                                        \
  template ScalarGrad<T> distance<T>(const Tensor<T>&, const Tensor<T>&, Distance);                        \
  template TapLoss<T> style_loss<T>(const FeatureTaps<T>&, const FeatureTaps<T>&, const LossWeights&,      \
                                    Distance);                                                             \
  template TapLoss<T> content_loss<T>(const FeatureTaps<T>&, const FeatureTaps<T>&, const LossWeights&,    \
                                      Distance);                                                           \
  template ScalarGrad<T> tv_loss<T>(const Tensor<T>&);                                                     \
  template TotalLoss<T> total_loss<T>(const Tensor<T>&, const FeatureTaps<T>&, const FeatureTaps<T>&,      \
                                      const FeatureTaps<T>&, const LossWeights&, Distance, Distance);

NST_LOSSES_INSTANTIATE(float)
NST_LOSSES_INSTANTIATE(double)

}  // namespace nst::losses
