#include "nst/tensor.hpp"

#include <atomic>
#include <limits>
#include <numbers>

#include "nst/parallel.hpp"

namespace nst {

namespace {
std::atomic<unsigned> g_threads{1};

std::size_t checked_mul(std::size_t a, std::size_t b) {
  if (a != 0 && b > std::numeric_limits<std::size_t>::max() / a)
    throw ShapeError("shape element count overflows size_t");
  return a * b;
}
}  // namespace

void set_num_threads(unsigned n) { g_threads.store(n == 0 ? 1 : n); }
unsigned num_threads() { return g_threads.load(); }

std::size_t Shape::numel() const {
  if (n == 0 || c == 0 || h == 0 || w == 0)
    throw ShapeError("all dims must be >= 1, got " + str());
  return checked_mul(checked_mul(checked_mul(n, c), h), w);
}

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel())
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_.str());
}

template <class T>
Tensor<T> Tensor<T>::reshaped(Shape s) const {
  if (s.numel() != size())
    throw ShapeError("reshape " + shape_.str() + " -> " + s.str() + " changes element count");
  return Tensor<T>(s, data_);
}

template <class T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

std::uint64_t Rng::next_u64() {
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

template <class T>
Tensor<T> uniform_init(Rng& rng, Shape s, double lo, double hi) {
  if (!(lo <= hi)) throw ShapeError("uniform_init: lo must not exceed hi");
  Tensor<T> t(s);
  for (auto& v : t.data()) v = static_cast<T>(lo + (hi - lo) * rng.uniform());
  return t;
}

template <class T>
Tensor<T> he_init(Rng& rng, Shape s, std::size_t fan_in) {
  if (fan_in == 0) throw ShapeError("he_init: fan_in must be >= 1");
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  Tensor<T> t(s);
  for (auto& v : t.data()) v = static_cast<T>(sd * rng.normal());
  return t;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return zip(a, b, [](T x, T y) { return x + y; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return zip(a, b, [](T x, T y) { return x - y; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return zip(a, b, [](T x, T y) { return x * y; });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return map(a, [s](T x) { return x * s; });
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return map(a, [](T x) { return std::sqrt(x); });
}

template <class T>
void axpy(T s, const Tensor<T>& x, Tensor<T>& y) {
  if (x.shape() != y.shape())
    throw ShapeError("axpy: shape mismatch " + x.shape().str() + " vs " + y.shape().str());
  T* yp = y.ptr();
  const T* xp = x.ptr();
  for (std::size_t i = 0; i < y.size(); ++i) yp[i] += s * xp[i];
}

template <class T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("dot: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

template <class T>
double sum(const Tensor<T>& a) {
  double acc = 0.0;
  for (T v : a.data()) acc += v;
  return acc;
}

template <class T>
double max_abs(const Tensor<T>& a) {
  double m = 0.0;
  for (T v : a.data()) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

template <class T>
bool all_finite(const Tensor<T>& a) {
  for (T v : a.data())
    if (!std::isfinite(v)) return false;
  return true;
}

template <class T>
Tensor<T> identity(std::size_t n) {
  auto m = matrix<T>(n, n);
  for (std::size_t i = 0; i < n; ++i) m[i * n + i] = T(1);
  return m;
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != 1 || sa.c != 1 || sb.n != 1 || sb.c != 1)
    throw ShapeError("matmul expects (1,1,R,C) matrices");
  if (sa.w != sb.h)
    throw ShapeError("matmul: inner dims differ " + sa.str() + " x " + sb.str());
  const std::size_t rows = sa.h, inner = sa.w, cols = sb.w;
  auto out = matrix<T>(rows, cols);
  const T* ap = a.ptr();
  const T* bp = b.ptr();
  T* op = out.ptr();
  parallel_for(0, rows, [&](std::size_t r) {
    T* orow = op + r * cols;
    for (std::size_t k = 0; k < inner; ++k) {
      const T av = ap[r * inner + k];
      const T* brow = bp + k * cols;
      for (std::size_t j = 0; j < cols; ++j) orow[j] += av * brow[j];
    }
  });
  return out;
}

template <class T>
void matmul_aat(std::span<const T> a, std::size_t rows, std::size_t cols, std::span<T> out) {
  if (a.size() != rows * cols || out.size() != rows * rows)
    throw ShapeError("matmul_aat: buffer sizes do not match dimensions");
  for (std::size_t r = 0; r < rows; ++r) {
    const T* ar = a.data() + r * cols;
    for (std::size_t s = r; s < rows; ++s) {
      const T* as = a.data() + s * cols;
      T acc = 0;
      for (std::size_t k = 0; k < cols; ++k) acc += ar[k] * as[k];
      out[r * rows + s] = acc;
      out[s * rows + r] = acc;
    }
  }
}

#define NST_INSTANTIATE(T)                                                       \
  template class Tensor<T>;                                                      \
  template Tensor<T> uniform_init<T>(Rng&, Shape, double, double);               \
  template Tensor<T> he_init<T>(Rng&, Shape, std::size_t);                       \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                              \
  template Tensor<T> sqrt<T>(const Tensor<T>&);                                  \
  template void axpy<T>(T, const Tensor<T>&, Tensor<T>&);                        \
  template double dot<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template double sum<T>(const Tensor<T>&);                                      \
  template double max_abs<T>(const Tensor<T>&);                                  \
  template bool all_finite<T>(const Tensor<T>&);                                 \
  template Tensor<T> identity<T>(std::size_t);                                   \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);              \
  template void matmul_aat<T>(std::span<const T>, std::size_t, std::size_t, std::span<T>);

NST_INSTANTIATE(float)
NST_INSTANTIATE(double)

}  // namespace nst
