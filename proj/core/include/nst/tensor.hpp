#pragma once

#include <array>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nst {

/// Raised for any shape/argument contract violation. There is no implicit
/// broadcasting anywhere: mismatched shapes always end up here.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// (batch, channels, height, width). All dims are >= 1.
struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  /// Element count; throws ShapeError on a zero dim or size_t overflow.
  std::size_t numel() const;
  std::size_t plane() const { return h * w; }
  std::size_t sample() const { return c * h * w; }
  std::string str() const;

  bool operator==(const Shape&) const = default;
};

/// Dense row-major (n,c,h,w) tensor. Value type; copies are deep.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : shape_{}, data_(1, T(0)) {}
  explicit Tensor(Shape shape) : shape_(shape), data_(shape.numel(), T(0)) {}
  Tensor(Shape shape, std::vector<T> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[index(n, c, h, w)];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[index(n, c, h, w)];
  }

  /// Contiguous h*w slice of one (sample, channel).
  std::span<T> plane(std::size_t n, std::size_t c) {
    return {data_.data() + (n * shape_.c + c) * shape_.plane(), shape_.plane()};
  }
  std::span<const T> plane(std::size_t n, std::size_t c) const {
    return {data_.data() + (n * shape_.c + c) * shape_.plane(), shape_.plane()};
  }

  /// Contiguous c*h*w slice of one sample.
  std::span<T> sample(std::size_t n) {
    return {data_.data() + n * shape_.sample(), shape_.sample()};
  }
  std::span<const T> sample(std::size_t n) const {
    return {data_.data() + n * shape_.sample(), shape_.sample()};
  }

  /// Same data, new shape of equal element count.
  Tensor reshaped(Shape s) const;

  void fill(T v);

  bool operator==(const Tensor&) const = default;

 private:
  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    assert(n < shape_.n && c < shape_.c && h < shape_.h && w < shape_.w);
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

  Shape shape_;
  std::vector<T> data_;
};

/// Deterministic splitmix64 stream. Same seed gives the same stream on every
/// platform; distributions are implemented here rather than via <random>
/// because the standard distributions are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of mantissa.
  double uniform();
  /// Standard normal via Box-Muller (pairs cached).
  double normal();

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

template <class T> Tensor<T> zeros(Shape s) { return Tensor<T>(s); }
template <class T> Tensor<T> zeros_like(const Tensor<T>& x) { return Tensor<T>(x.shape()); }
template <class T> Tensor<T> full(Shape s, T v) {
  Tensor<T> t(s);
  t.fill(v);
  return t;
}

template <class T> Tensor<T> uniform_init(Rng& rng, Shape s, double lo, double hi);
/// Samples N(0, 2/fan_in).
template <class T> Tensor<T> he_init(Rng& rng, Shape s, std::size_t fan_in);

template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> scale(const Tensor<T>& a, T s);
template <class T> Tensor<T> sqrt(const Tensor<T>& a);

/// In place: y += s * x.
template <class T> void axpy(T s, const Tensor<T>& x, Tensor<T>& y);

/// Sum of products in ascending index order, accumulated in double.
template <class T> double dot(const Tensor<T>& a, const Tensor<T>& b);
template <class T> double sum(const Tensor<T>& a);
template <class T> double max_abs(const Tensor<T>& a);
template <class T> bool all_finite(const Tensor<T>& a);

template <class T, class F>
Tensor<T> map(const Tensor<T>& a, F f) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <class T, class F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, F f) {
  if (a.shape() != b.shape())
    throw ShapeError("zip: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

/// Matrices are tensors of shape (1,1,rows,cols).
template <class T> Tensor<T> matrix(std::size_t rows, std::size_t cols) {
  return Tensor<T>(Shape{1, 1, rows, cols});
}
template <class T> Tensor<T> identity(std::size_t n);

/// (1,1,R,C) x (1,1,C,K) -> (1,1,R,K). Each output element is reduced over
/// the inner index in ascending order.
template <class T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// out[r*rows+s] = sum_k a[r*cols+k] * a[s*cols+k] for a viewed as rows x cols.
/// Ascending-k reduction; the result is exactly symmetric.
template <class T>
void matmul_aat(std::span<const T> a, std::size_t rows, std::size_t cols, std::span<T> out);

#ifndef NDEBUG
#define NST_DEBUG_CHECK_FINITE(t) assert(::nst::all_finite(t))
#else
#define NST_DEBUG_CHECK_FINITE(t) ((void)0)
#endif

}  // namespace nst
