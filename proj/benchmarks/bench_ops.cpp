// Microbenchmarks for the numeric hot paths: convolution forward/backward,
// the feature pipeline, attention pooling, and the stochastic-order test.
#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "resadapt/dsp.hpp"
#include "resadapt/ops.hpp"
#include "resadapt/rng.hpp"
#include "resadapt/stats.hpp"
#include "resadapt/tensor.hpp"

using namespace resadapt;

namespace {

Tensor random_tensor(const std::vector<std::int64_t>& shape,
                     std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(shape);
  for (auto& v : t.data) v = static_cast<float>(rng.normal());
  return t;
}

}  // namespace

static void BM_Conv2dForward(benchmark::State& state) {
  const std::int64_t channels = state.range(0);
  const Tensor input = random_tensor({8, channels, 16, 40}, 1);
  const Tensor kernel = random_tensor({channels, channels, 3, 3}, 2);
  for (auto _ : state) {
    Tensor out = conv2d(input, kernel, 1, Padding::Same);
    benchmark::DoNotOptimize(out.data.data());
  }
  state.SetItemsProcessed(state.iterations() * input.numel());
}
BENCHMARK(BM_Conv2dForward)->Arg(8)->Arg(32)->Arg(64);

static void BM_Conv2dBackward(benchmark::State& state) {
  const std::int64_t channels = state.range(0);
  const Tensor input = random_tensor({8, channels, 16, 40}, 1);
  const Tensor kernel = random_tensor({channels, channels, 3, 3}, 2);
  const Tensor upstream = random_tensor({8, channels, 16, 40}, 3);
  for (auto _ : state) {
    Tensor grad_input, grad_kernel;
    conv2d_backward(upstream, input, kernel, 1, Padding::Same, grad_input,
                    grad_kernel);
    benchmark::DoNotOptimize(grad_input.data.data());
  }
  state.SetItemsProcessed(state.iterations() * input.numel());
}
BENCHMARK(BM_Conv2dBackward)->Arg(8)->Arg(32);

static void BM_FeaturePipeline(benchmark::State& state) {
  AudioClip clip;
  clip.samples.resize(static_cast<std::size_t>(state.range(0)) * 16000);
  for (std::size_t t = 0; t < clip.samples.size(); ++t)
    clip.samples[t] =
        static_cast<float>(0.3 * std::sin(0.35 * static_cast<double>(t)));
  Rng rng(7);
  for (auto _ : state) {
    Tensor mel = extract_features(clip, rng);
    benchmark::DoNotOptimize(mel.data.data());
  }
  state.SetItemsProcessed(state.iterations() * clip.samples.size());
}
BENCHMARK(BM_FeaturePipeline)->Arg(1)->Arg(3)->Arg(5);

static void BM_AttentionPool(benchmark::State& state) {
  const std::int64_t width = state.range(0);
  const Tensor features = random_tensor({8, 64, 8, width}, 4);
  std::vector<std::int64_t> lengths(8, width);
  lengths[1] = width / 2;
  AttentionParamsT<float> params(64);
  Rng rng(5);
  for (auto& v : params.w.data) v = static_cast<float>(0.1 * rng.normal());
  for (auto& v : params.v.data) v = static_cast<float>(0.1 * rng.normal());
  for (auto _ : state) {
    Tensor pooled = attention_pool(features, lengths, params);
    benchmark::DoNotOptimize(pooled.data.data());
  }
  state.SetItemsProcessed(state.iterations() * features.numel());
}
BENCHMARK(BM_AttentionPool)->Arg(8)->Arg(40);

static void BM_Aso(benchmark::State& state) {
  Rng rng(11);
  std::vector<double> a(static_cast<std::size_t>(state.range(0)));
  std::vector<double> b(a.size());
  for (auto& v : a) v = rng.normal(0.65, 0.05);
  for (auto& v : b) v = rng.normal(0.60, 0.05);
  for (auto _ : state) {
    AsoResult result = aso(a, b, 0.05, 1000, 1000, 42);
    benchmark::DoNotOptimize(result.eps_min);
  }
}
BENCHMARK(BM_Aso)->Arg(5)->Arg(20);

BENCHMARK_MAIN();
