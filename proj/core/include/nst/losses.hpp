#pragma once

#include <map>
#include <string>
#include <utility>

#include "nst/tensor.hpp"

namespace nst::losses {

/// Layer tag (1..5) -> feature map captured at that layer.
template <class T>
using FeatureTaps = std::map<int, Tensor<T>>;

/// c x c Gram matrix of a (1,c,h,w) feature map, stored as a (1,1,c,c) tensor.
template <class T>
struct GramMatrix {
  Tensor<T> values;
  Shape source;  // shape of the feature map it was computed from
};

struct Distance {
  enum class Kind { MSE, Charbonnier };
  Kind kind = Kind::MSE;
  double epsilon = 1e-3;  // Charbonnier only

  static Distance mse() { return {Kind::MSE, 1e-3}; }
  static Distance charbonnier(double eps = 1e-3) { return {Kind::Charbonnier, eps}; }
  std::string name() const { return kind == Kind::MSE ? "mse" : "char"; }
};

/// Parses "mse" or "char"/"charbonnier".
Distance parse_distance(const std::string& s);

struct LossWeights {
  double alpha = 7.5;    // content
  double beta = 100.0;   // style
  double gamma = 200.0;  // total variation
  std::map<int, double> style_layers{{1, 1.0}, {2, 1.0}, {3, 1.0}, {4, 1.0}, {5, 1.0}};
  std::map<int, double> content_layers{{4, 1.0}};
  /// Compare raw Grams instead of Grams divided by c*h*w.
  bool raw_gram = false;

  /// Throws std::invalid_argument on negative weights or an all-zero layer map.
  void validate() const;
};

template <class T>
struct ScalarGrad {
  double value = 0.0;
  Tensor<T> grad;
};

template <class T>
struct TapLoss {
  double value = 0.0;
  FeatureTaps<T> grads;  // one entry per tap that received gradient
};

template <class T>
GramMatrix<T> gram(const Tensor<T>& feature_map);

/// Mean distance over all elements and its gradient w.r.t. `a`.
template <class T>
ScalarGrad<T> distance(const Tensor<T>& a, const Tensor<T>& b, Distance kind);

/// Sum over tagged layers of w_l * distance(G(Y_l)/(chw), G(S_l)/(chw)).
template <class T>
TapLoss<T> style_loss(const FeatureTaps<T>& taps_y, const FeatureTaps<T>& taps_s, const LossWeights& weights,
                      Distance kind);

/// Sum over tagged layers of w_k * distance(Y_k, N_k) on raw feature maps.
template <class T>
TapLoss<T> content_loss(const FeatureTaps<T>& taps_y, const FeatureTaps<T>& taps_n, const LossWeights& weights,
                        Distance kind);

/// Squared-difference total variation normalized by n*c*h*w.
template <class T>
ScalarGrad<T> tv_loss(const Tensor<T>& image);

template <class T>
struct TotalLoss {
  double content = 0.0;  // unweighted
  double style = 0.0;    // unweighted
  double tv = 0.0;       // unweighted
  double total = 0.0;    // alpha*content + beta*style + gamma*tv
  FeatureTaps<T> tap_grads;  // d total / d tap, weighted
  Tensor<T> image_grad;      // d (gamma*tv) / d image
};

template <class T>
TotalLoss<T> total_loss(const Tensor<T>& image_y, const FeatureTaps<T>& taps_y, const FeatureTaps<T>& taps_n,
                        const FeatureTaps<T>& taps_s, const LossWeights& weights, Distance content_kind,
                        Distance style_kind);

}  // namespace nst::losses
