#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "nst/loss_network.hpp"
#include "nst/losses.hpp"
#include "nst/network.hpp"

namespace nst::optim {

/// Defaults use beta1 > beta2, the reverse of the usual (0.9, 0.999).
struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.999;
  double beta2 = 0.99;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  AdamConfig config;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t t = 0;
};

/// Zeroed moments shaped like `params`.
template <class T>
AdamState<T> adam_init(const std::vector<Tensor<T>*>& params, AdamConfig config = {});

/// One bias-corrected Adam update applied in place to every parameter.
template <class T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads,
               AdamState<T>& state);

// --- the perceptual objective ------------------------------------------------

struct Objective {
  losses::LossWeights weights;
  losses::Distance content_kind = losses::Distance::mse();
  losses::Distance style_kind = losses::Distance::mse();
};

template <class T>
struct Evaluation {
  losses::TotalLoss<T> loss;
  Tensor<T> image_grad;  // d total / d Y, through the extractor and the TV term
};

/// Loss of image Y against precomputed content and style taps, with its
/// gradient w.r.t. Y.
template <class T>
Evaluation<T> evaluate(const lossnet::FrozenExtractor<T>& extractor, const Tensor<T>& image_y,
                       const losses::FeatureTaps<T>& taps_n, const losses::FeatureTaps<T>& taps_s,
                       const Objective& objective);

struct LossRecord {
  std::size_t iteration = 0;
  double content = 0.0;
  double style = 0.0;
  double tv = 0.0;
  double total = 0.0;
};

/// Header "iteration,l_content,l_style,l_tv,l_total", one row per record.
void write_loss_csv(std::ostream& out, const std::vector<LossRecord>& history);

// --- feed-forward training -----------------------------------------------------

struct TrainOptions {
  net::Variant variant = net::Variant::Johnson;
  Objective objective;
  AdamConfig adam;
  std::size_t iterations = 50;
  std::uint64_t seed = 1;
  std::uint64_t extractor_seed = 0x5eed;
};

template <class T>
struct TrainResult {
  net::Network<T> network;
  std::vector<LossRecord> history;
};

/// Batch size 1; content images are visited in order, cycling. All images
/// must share one (1,3,h,w) shape; the style image may differ in size.
template <class T>
TrainResult<T> train(const std::vector<Tensor<T>>& content_images, const Tensor<T>& style_image,
                     const TrainOptions& options);

/// File-level training configuration (the `key = value` config keys plus the
/// settings that have no config key).
struct TrainConfig {
  std::string variant = "johnson";
  std::filesystem::path style;
  std::filesystem::path content_dir;
  losses::LossWeights weights;
  losses::Distance content_loss = losses::Distance::mse();
  losses::Distance style_loss = losses::Distance::mse();
  std::uint64_t seed = 1;
  std::size_t size = 32;
  std::size_t iters = 50;
  AdamConfig adam;
};

/// Parses a `key = value` config. Omitted keys keep the TrainConfig defaults.
/// Throws std::invalid_argument naming the offending key or line.
TrainConfig parse_config(std::istream& in, const std::string& source = "<config>");
TrainConfig load_config(const std::filesystem::path& path);

/// Reads every .ppm/.png in content_dir (sorted by file name) plus the style
/// image, checks that content images are size x size, and trains in f32.
TrainResult<float> train(const TrainConfig& config);

// --- iterative image optimization ------------------------------------------------

struct ImageOptions {
  enum class Init { Content, Noise };

  Objective objective = gatys_objective();
  AdamConfig adam{0.01, 0.999, 0.99, 1e-8};
  std::size_t steps = 200;
  Init init = Init::Content;
  std::uint64_t noise_seed = 7;
  std::uint64_t extractor_seed = 0x5eed;

  /// Default weights with the TV term switched off.
  static Objective gatys_objective() {
    Objective o;
    o.weights.gamma = 0.0;
    return o;
  }
};

template <class T>
struct ImageResult {
  Tensor<T> image;  // best-loss iterate, pixels clamped to [0,1]
  std::vector<LossRecord> history;  // record i is the loss of iterate i (0 = initialization)
  double initial_loss = 0.0;
  double best_loss = 0.0;
};

/// Adam directly on the pixels of Y. content and style must have the same shape.
template <class T>
ImageResult<T> optimize_image(const Tensor<T>& content, const Tensor<T>& style, const ImageOptions& options);

}  // namespace nst::optim
