#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "nst/losses.hpp"
#include "nst/ops.hpp"

namespace nst::lossnet {

/// Frozen feature extractor: five (3x3 stride-2 conv, ReLU) blocks with
/// widths 8, 16, 32, 64, 64, tapped after each block (tags 1..5). Weights are
/// fixed at construction and never change; there is no mutable access.
template <class T>
class FrozenExtractor {
 public:
  static constexpr std::array<std::size_t, 5> kWidths{8, 16, 32, 64, 64};
  static constexpr std::size_t kMinSize = 32;

  /// he_init weights drawn from `seed`, zero biases.
  explicit FrozenExtractor(std::uint64_t seed = 0x5eed);
  /// Loads weights from the weights file format (10 Conv records).
  static FrozenExtractor from_file(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// image (1,3,h,w) with h, w >= 32.
  losses::FeatureTaps<T> extract(const Tensor<T>& image) const;

  /// Chain rule from tap gradients back to the image. `taps` must be the
  /// extract() result for `image`. Parameter gradients are discarded.
  Tensor<T> backprop_taps(const Tensor<T>& image, const losses::FeatureTaps<T>& taps,
                          const losses::FeatureTaps<T>& tap_grads) const;

  /// FNV-1a over the raw weight bytes.
  std::uint64_t checksum() const;

  const std::array<ops::ConvParams<T>, 5>& blocks() const { return blocks_; }

 private:
  explicit FrozenExtractor(std::array<ops::ConvParams<T>, 5> blocks) : blocks_(std::move(blocks)) {}

  std::array<ops::ConvParams<T>, 5> blocks_;
};

}  // namespace nst::lossnet
