// Per-layer and per-network forward timings (f32, single thread).
#include <benchmark/benchmark.h>

#include "nst/network.hpp"
#include "nst/ops.hpp"

namespace {

using nst::Rng;
using nst::Tensor;
namespace ops = nst::ops;

Tensor<float> input(std::size_t c, std::size_t hw) {
  Rng rng(5);
  return nst::uniform_init<float>(rng, {1, c, hw, hw}, -1.0, 1.0);
}

void BM_Conv3x3(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const auto p = ops::make_conv<float>(rng, 128, 128, 3, 1);
  const auto x = input(128, hw);
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d_fwd(x, p));
}
BENCHMARK(BM_Conv3x3)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_DepSep3x3(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const auto p = ops::make_depsep<float>(rng, 128, 128, 3, 1, 4);
  const auto x = input(128, hw);
  for (auto _ : state) benchmark::DoNotOptimize(ops::depsep_conv_fwd(x, p));
}
BENCHMARK(BM_DepSep3x3)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_TransposedConv(benchmark::State& state) {
  Rng rng(1);
  const auto p = ops::make_transposed_conv<float>(rng, 128, 64, 3, 2);
  const auto x = input(128, 32);
  for (auto _ : state) benchmark::DoNotOptimize(ops::transposed_conv_fwd(x, p));
}
BENCHMARK(BM_TransposedConv)->Unit(benchmark::kMillisecond);

void BM_DepSepTransposedConv(benchmark::State& state) {
  Rng rng(1);
  const auto p = ops::make_depsep<float>(rng, 128, 64, 3, 2, 4);
  const auto x = input(128, 32);
  for (auto _ : state) benchmark::DoNotOptimize(ops::depsep_transposed_conv_fwd(x, p));
}
BENCHMARK(BM_DepSepTransposedConv)->Unit(benchmark::kMillisecond);

void BM_NNUpsampleConv(benchmark::State& state) {
  Rng rng(1);
  const auto p = ops::make_conv<float>(rng, 128, 64, 1, 1);
  const auto x = input(128, 32);
  for (auto _ : state) benchmark::DoNotOptimize(ops::nn_upsample_conv_fwd(x, p));
}
BENCHMARK(BM_NNUpsampleConv)->Unit(benchmark::kMillisecond);

void BM_ConcatUpsampleConv(benchmark::State& state) {
  Rng rng(1);
  const auto p = ops::make_conv<float>(rng, 256, 64, 1, 1);
  const auto x = input(128, 32);
  for (auto _ : state) benchmark::DoNotOptimize(ops::concat_upsample_conv_fwd(x, p));
}
BENCHMARK(BM_ConcatUpsampleConv)->Unit(benchmark::kMillisecond);

void BM_InstanceNorm(benchmark::State& state) {
  const auto p = ops::make_instance_norm<float>(64);
  const auto x = input(64, 64);
  for (auto _ : state) benchmark::DoNotOptimize(ops::instance_norm_fwd(x, p));
}
BENCHMARK(BM_InstanceNorm)->Unit(benchmark::kMicrosecond);

void BM_Network(benchmark::State& state) {
  const auto variant = nst::net::kVariants[static_cast<std::size_t>(state.range(0))];
  const auto net = nst::net::Network<float>::build(variant, 1);
  const auto x = input(3, static_cast<std::size_t>(state.range(1)));
  state.SetLabel(std::string(nst::net::variant_name(variant)));
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x));
}
BENCHMARK(BM_Network)->ArgsProduct({{0, 1, 2, 3}, {64, 128}})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
