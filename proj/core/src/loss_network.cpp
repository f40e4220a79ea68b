#include "nst/loss_network.hpp"

#include <optional>

#include "nst/network.hpp"

namespace nst::lossnet {

template <class T>
FrozenExtractor<T>::FrozenExtractor(std::uint64_t seed) {
  Rng rng(seed);
  std::size_t in = 3;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i] = ops::make_conv<T>(rng, in, kWidths[i], 3, 2);
    in = kWidths[i];
  }
}

template <class T>
FrozenExtractor<T> FrozenExtractor<T>::from_file(const std::filesystem::path& path) {
  const auto records = net::read_weight_records(path);
  if (records.size() != 2 * kWidths.size())
    throw net::FormatError(path.string() + ": extractor weights need 10 records, found " +
                           std::to_string(records.size()));
  std::array<ops::ConvParams<T>, 5> blocks;
  std::size_t in = 3;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const Shape ws{kWidths[i], in, 3, 3};
    const Shape bs{kWidths[i], 1, 1, 1};
    const auto& w = records[2 * i];
    const auto& b = records[2 * i + 1];
    if (w.kind != net::LayerKind::Conv || b.kind != net::LayerKind::Conv || w.shape != ws || b.shape != bs)
      throw net::FormatError(path.string() + ": extractor block " + std::to_string(i + 1) +
                             " expects Conv records " + ws.str() + " and " + bs.str());
    blocks[i].weight = Tensor<T>(ws, std::vector<T>(w.data.begin(), w.data.end()));
    blocks[i].bias = Tensor<T>(bs, std::vector<T>(b.data.begin(), b.data.end()));
    blocks[i].stride = 2;
    in = kWidths[i];
  }
  return FrozenExtractor(std::move(blocks));
}

template <class T>
void FrozenExtractor<T>::save(const std::filesystem::path& path) const {
  std::vector<net::WeightRecord> records;
  for (const auto& b : blocks_) {
    for (const Tensor<T>* t : b.tensors())
      records.push_back({net::LayerKind::Conv, t->shape(), std::vector<float>(t->data().begin(), t->data().end())});
  }
  net::write_weight_records(path, records);
}

template <class T>
losses::FeatureTaps<T> FrozenExtractor<T>::extract(const Tensor<T>& image) const {
  const Shape& s = image.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("extract expects a (1,3,h,w) image, got " + s.str());
  if (s.h < kMinSize || s.w < kMinSize)
    throw ShapeError("extract needs h, w >= " + std::to_string(kMinSize) + ", got " + s.str());
  losses::FeatureTaps<T> taps;
  const Tensor<T>* cur = &image;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const int tag = static_cast<int>(i) + 1;
    taps[tag] = ops::relu_fwd(ops::conv2d_fwd(*cur, blocks_[i]));
    cur = &taps[tag];
  }
  return taps;
}

template <class T>
Tensor<T> FrozenExtractor<T>::backprop_taps(const Tensor<T>& image, const losses::FeatureTaps<T>& taps,
                                            const losses::FeatureTaps<T>& tap_grads) const {
  for (const auto& [tag, g] : tap_grads) {
    const auto it = taps.find(tag);
    if (it == taps.end()) throw std::invalid_argument("backprop_taps: no tap with tag " + std::to_string(tag));
    if (g.shape() != it->second.shape())
      throw ShapeError("backprop_taps: gradient for tap " + std::to_string(tag) + " has shape " + g.shape().str() +
                       ", tap has " + it->second.shape().str());
  }
  for (int tag = 1; tag <= 5; ++tag)
    if (!taps.count(tag)) throw std::invalid_argument("backprop_taps: missing tap " + std::to_string(tag));

  std::optional<Tensor<T>> grad;
  for (int tag = 5; tag >= 1; --tag) {
    const auto it = tap_grads.find(tag);
    if (it != tap_grads.end()) {
      if (grad) {
        axpy(T(1), it->second, *grad);
      } else {
        grad = it->second;
      }
    }
    if (!grad) continue;
    const Tensor<T>& tap = taps.at(tag);
    const Tensor<T>& in = tag == 1 ? image : taps.at(tag - 1);
    const Tensor<T> dpre = ops::relu_bwd(tap, *grad);
    const auto& b = blocks_[static_cast<std::size_t>(tag - 1)];
    grad = ops::conv2d_input_grad(dpre, b.weight, b.stride, in.shape().h, in.shape().w);
  }
  return grad ? std::move(*grad) : zeros_like(image);
}

template <class T>
std::uint64_t FrozenExtractor<T>::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& b : blocks_) {
    for (const Tensor<T>* t : b.tensors()) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(t->ptr());
      for (std::size_t i = 0; i < t->size() * sizeof(T); ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

template class FrozenExtractor<float>;
template class FrozenExtractor<double>;

}  // namespace nst::lossnet
