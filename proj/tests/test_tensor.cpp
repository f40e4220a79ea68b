#include <doctest.h>

#include <cmath>

#include "nst/tensor.hpp"
#include "oracles.hpp"

using namespace nst;

TEST_SUITE("tensor") {

TEST_CASE("zeros has the requested element count and is all zero") {
  CHECK(zeros<double>({1, 1, 2, 2}).data().size() == 4);
  const auto z = zeros<double>({2, 3, 4, 4});
  CHECK(z.size() == 96);
  CHECK(max_abs(z) == 0.0);
  const auto one = zeros<float>({1, 1, 1, 1});
  CHECK(one.size() == 1);
  CHECK(one[0] == 0.0f);
}

TEST_CASE("zero-sized dims are rejected") {
  CHECK_THROWS_AS(zeros<double>({1, 0, 2, 2}), ShapeError);
}

TEST_CASE("matmul small cases") {
  const Tensor<double> a({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(matmul(identity<double>(2), a) == a);
  CHECK(matmul(a, identity<double>(2)) == a);

  const Tensor<double> row({1, 1, 1, 2}, {1, 2});
  const Tensor<double> col({1, 1, 2, 1}, {3, 4});
  const auto p = matmul(row, col);
  CHECK(p.shape() == Shape{1, 1, 1, 1});
  CHECK(p[0] == 11.0);
}

TEST_CASE("matmul matches the triple-loop oracle bit-exactly") {
  Rng rng(3);
  const auto a = uniform_init<double>(rng, {1, 1, 5, 7}, -1, 1);
  const auto b = uniform_init<double>(rng, {1, 1, 7, 3}, -1, 1);
  CHECK(matmul(a, b) == oracle::matmul(a, b));
}

TEST_CASE("matmul rejects mismatched inner dims") {
  CHECK_THROWS_AS(matmul(matrix<double>(2, 3), matrix<double>(2, 3)), ShapeError);
}

TEST_CASE("elementwise identities") {
  Rng rng(4);
  const auto x = uniform_init<double>(rng, {2, 3, 4, 5}, -2, 2);
  CHECK(add(x, zeros_like(x)) == x);
  CHECK(scale(x, 1.0) == x);
  CHECK(sub(x, x) == zeros_like(x));
  const auto sq = sqrt(mul(x, x));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(sq[i] == doctest::Approx(std::abs(x[i])));
}

TEST_CASE("no implicit broadcasting") {
  const auto a = zeros<double>({1, 3, 4, 4});
  const auto b = zeros<double>({1, 1, 4, 4});
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(mul(a, b), ShapeError);
  CHECK_THROWS_AS(dot(a, b), ShapeError);
  auto y = zeros<double>({1, 1, 4, 4});
  CHECK_THROWS_AS(axpy(1.0, a, y), ShapeError);
}

TEST_CASE("initializers are deterministic") {
  Rng r1(42), r2(42);
  CHECK(uniform_init<float>(r1, {1, 2, 3, 3}, -1, 1) == uniform_init<float>(r2, {1, 2, 3, 3}, -1, 1));
  CHECK(he_init<double>(r1, {4, 2, 3, 3}, 18) == he_init<double>(r2, {4, 2, 3, 3}, 18));

  Rng r3(5);
  CHECK(max_abs(uniform_init<double>(r3, {1, 1, 3, 3}, 0, 0)) == 0.0);
}

TEST_CASE("he_init sample mean is within 3 sigma of zero") {
  Rng rng(99);
  const std::size_t n = 100000, fan_in = 8;
  const auto t = he_init<double>(rng, {1, 1, 1, n}, fan_in);
  const double sd = std::sqrt(2.0 / fan_in);
  const double mean = sum(t) / n;
  CHECK(std::abs(mean) < 3 * sd / std::sqrt(static_cast<double>(n)));
  double var = 0;
  for (double v : t.data()) var += (v - mean) * (v - mean);
  var /= n - 1;
  CHECK(var == doctest::Approx(sd * sd).epsilon(0.02));
}

TEST_CASE("bad init arguments") {
  Rng rng(1);
  CHECK_THROWS_AS(uniform_init<double>(rng, {1, 1, 1, 1}, 1, 0), ShapeError);
  CHECK_THROWS_AS(he_init<double>(rng, {1, 1, 1, 1}, 0), ShapeError);
}

TEST_CASE("reshape keeps data and rejects count changes") {
  const Tensor<double> a({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
  const auto r = a.reshaped({1, 6, 1, 1});
  CHECK(r.shape() == Shape{1, 6, 1, 1});
  CHECK(r[5] == 6.0);
  CHECK_THROWS_AS(a.reshaped({1, 1, 2, 2}), ShapeError);
  CHECK_THROWS_AS(Tensor<double>({1, 1, 2, 2}, {1, 2, 3}), ShapeError);
}

}  // TEST_SUITE
