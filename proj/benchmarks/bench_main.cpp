#include <benchmark/benchmark.h>

#include "mmfuse/cam.hpp"
#include "mmfuse/models.hpp"
#include "mmfuse/preprocess.hpp"
#include "oracles.hpp"

using namespace mmfuse;

namespace {

void BM_Conv2dForward(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  auto x = oracle::random_tensor<float>({4, 16, side, side}, rng);
  auto w = oracle::random_tensor<float>({32, 16, 3, 3}, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, w, Tensor<float>{}, {1, 1}));
  state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_Conv2dForward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state) {
  std::mt19937_64 rng(2);
  auto x = oracle::random_tensor<float>({4, 16, 32, 32}, rng);
  auto w = oracle::random_tensor<float>({32, 16, 3, 3}, rng);
  w.set_requires_grad(true);
  for (auto _ : state) {
    w.zero_grad();
    backward(ops::sum(ops::conv2d(x, w, Tensor<float>{}, {1, 1})));
  }
}
BENCHMARK(BM_Conv2dBackward)->Unit(benchmark::kMillisecond);

void BM_MmForwardAndCam(benchmark::State& state) {
  BackboneConfig cfg;
  cfg.input_side = 64;
  MmCnn<float> model(cfg, 3);
  model.set_training(false);
  std::mt19937_64 rng(3);
  auto a = oracle::random_tensor<float>({1, 3, 64, 64}, rng);
  auto b = oracle::random_tensor<float>({1, 3, 64, 64}, rng);
  NoGradGuard no_grad;
  for (auto _ : state) {
    auto out = model.forward(a, b);
    benchmark::DoNotOptimize(compute_cam_mm(out.cfp_features, out.oct_features, model.head.weight, 1));
  }
}
BENCHMARK(BM_MmForwardAndCam)->Unit(benchmark::kMillisecond);

void BM_Clahe(benchmark::State& state) {
  std::mt19937_64 rng(4);
  const auto side = static_cast<std::size_t>(state.range(0));
  auto img = oracle::random_image(side, side, 1, rng);
  for (auto _ : state) benchmark::DoNotOptimize(clahe(img));
}
BENCHMARK(BM_Clahe)->Arg(224)->Arg(448)->Unit(benchmark::kMillisecond);

void BM_Median3x3(benchmark::State& state) {
  std::mt19937_64 rng(5);
  const auto side = static_cast<std::size_t>(state.range(0));
  auto img = oracle::random_image(side, side, 3, rng);
  for (auto _ : state) benchmark::DoNotOptimize(median3x3(img));
}
BENCHMARK(BM_Median3x3)->Arg(224)->Arg(448)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
