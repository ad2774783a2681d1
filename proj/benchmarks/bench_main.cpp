// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.

#include <benchmark/benchmark.h>

#include "epsa/complexity.hpp"
#include "epsa/model.hpp"
#include "epsa/nn_ops.hpp"
#include "epsa/psa.hpp"

namespace epsa {
namespace {

// Grouped 3x3 convolution on a stage-3 sized feature map; range(0) is G.
void BM_Conv2dGrouped(benchmark::State& state) {
  const auto groups = static_cast<std::size_t>(state.range(0));
  const Conv2dParams p = Conv2dParams::make(64, 64, 3, 1, 1, groups, false, 1);
  const Tensor x = random_uniform({1, 64, 14, 14}, 2, -1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, p).output);
  state.SetItemsProcessed(state.iterations() * 64 * 64 / groups * 9 * 14 * 14);
}
BENCHMARK(BM_Conv2dGrouped)->Arg(1)->Arg(4)->Arg(16)->Unit(benchmark::kMicrosecond);

void BM_PsaForward(benchmark::State& state) {
  const auto channels = static_cast<std::size_t>(state.range(0));
  const PsaParams p = PsaParams::make(PsaConfig::pyramid(channels), 3);
  const Tensor x = random_uniform({1, channels, 14, 14}, 4, -1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(psa_forward(x, p));
}
BENCHMARK(BM_PsaForward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_PsaWithGrad(benchmark::State& state) {
  const PsaParams p = PsaParams::make(PsaConfig::pyramid(64), 5);
  const Tensor x = random_uniform({2, 64, 14, 14}, 6, -1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(psa_with_grad(x, p).output);
}
BENCHMARK(BM_PsaWithGrad)->Unit(benchmark::kMillisecond);

void BM_AnalyzeModel(benchmark::State& state) {
  const ModelSpec spec = model_spec("epsanet101_large");
  for (auto _ : state) benchmark::DoNotOptimize(analyze(spec));
}
BENCHMARK(BM_AnalyzeModel)->Unit(benchmark::kMicrosecond);

void BM_ToyForward(benchmark::State& state) {
  Model m = Model::build(toy_model_spec(4), 7);
  const Tensor x = random_uniform({8, 3, 64, 64}, 8, -1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(x, Mode::kBatchStats).output);
}
BENCHMARK(BM_ToyForward)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace epsa

BENCHMARK_MAIN();
