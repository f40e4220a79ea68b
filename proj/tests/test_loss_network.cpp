#include <doctest.h>

#include <filesystem>

#include "nst/loss_network.hpp"
#include "oracles.hpp"

using namespace nst;
using nst::lossnet::FrozenExtractor;

TEST_SUITE("loss-network") {

TEST_CASE("extraction is deterministic") {
  const FrozenExtractor<double> ex;
  Rng rng(1);
  const auto img = uniform_init<double>(rng, {1, 3, 32, 32}, 0, 1);
  const auto a = ex.extract(img);
  const auto b = ex.extract(img);
  REQUIRE(a.size() == 5);
  for (int tag = 1; tag <= 5; ++tag) CHECK(a.at(tag) == b.at(tag));
  CHECK(FrozenExtractor<double>(0x5eed).checksum() == ex.checksum());
  CHECK(FrozenExtractor<double>(0x5eee).checksum() != ex.checksum());
}

TEST_CASE("tap dims halve per block") {
  const FrozenExtractor<float> ex;
  const auto taps = ex.extract(zeros<float>({1, 3, 64, 64}));
  const std::size_t side[] = {32, 16, 8, 4, 2};
  const std::size_t width[] = {8, 16, 32, 64, 64};
  for (int tag = 1; tag <= 5; ++tag) {
    CHECK(taps.at(tag).shape() == Shape{1, width[tag - 1], side[tag - 1], side[tag - 1]});
    // Zero biases make every tap of a zero image zero.
    CHECK(max_abs(taps.at(tag)) == 0.0f);
  }
  CHECK(taps.at(5).shape().plane() < taps.at(1).shape().plane());
}

TEST_CASE("inputs below the minimum size are rejected") {
  const FrozenExtractor<double> ex;
  CHECK_THROWS_AS(ex.extract(zeros<double>({1, 3, 16, 32})), ShapeError);
  CHECK_THROWS_AS(ex.extract(zeros<double>({1, 1, 32, 32})), ShapeError);
}

TEST_CASE("backprop_taps is linear in the tap gradients") {
  const FrozenExtractor<double> ex;
  Rng rng(2);
  const auto img = uniform_init<double>(rng, {1, 3, 32, 32}, 0, 1);
  const auto taps = ex.extract(img);
  losses::FeatureTaps<double> zero, g, g2;
  for (const auto& [tag, t] : taps) {
    zero.emplace(tag, zeros_like(t));
    g.emplace(tag, uniform_init<double>(rng, t.shape(), -1, 1));
    g2.emplace(tag, scale(g.at(tag), 2.0));
  }
  CHECK(max_abs(ex.backprop_taps(img, taps, zero)) == 0.0);
  const auto a = ex.backprop_taps(img, taps, g);
  const auto b = ex.backprop_taps(img, taps, g2);
  CHECK(oracle::rel_err(b, scale(a, 2.0)) < 1e-15);

  losses::FeatureTaps<double> bad = g;
  bad.at(2) = zeros<double>({1, 16, 9, 9});
  CHECK_THROWS_AS(ex.backprop_taps(img, taps, bad), ShapeError);
}

TEST_CASE("backprop_taps matches finite differences at 32x32") {
  const FrozenExtractor<double> ex;
  Rng rng(3);
  auto img = uniform_init<double>(rng, {1, 3, 32, 32}, 0, 1);
  losses::FeatureTaps<double> weights;
  for (const auto& [tag, t] : ex.extract(img)) weights.emplace(tag, uniform_init<double>(rng, t.shape(), -1, 1));
  auto functional = [&] {
    double acc = 0;
    for (const auto& [tag, t] : ex.extract(img)) acc += dot(t, weights.at(tag));
    return acc;
  };
  const auto analytic = ex.backprop_taps(img, ex.extract(img), weights);
  const auto num = oracle::numeric_grad(img, functional);
  CHECK(oracle::rel_err(analytic, num) < 1e-3);
}

TEST_CASE("weights file round trip") {
  const FrozenExtractor<float> ex(99);
  const auto path = std::filesystem::temp_directory_path() / "nst_test_extractor.nstw";
  ex.save(path);
  const auto back = FrozenExtractor<float>::from_file(path);
  CHECK(back.checksum() == ex.checksum());
  std::filesystem::remove(path);
}

}  // TEST_SUITE
