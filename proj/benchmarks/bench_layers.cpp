#include <benchmark/benchmark.h>

#include "pcdnet/layers.hpp"

using namespace pcdnet;

namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(shape_size(shape));
  for (float& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  return Tensor<float>(std::move(shape), std::move(v));
}

void BM_GraphXDense(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  auto gx = GraphX<float>::learned(n, n, 96, 96, 0, Activation::kRelu, rng);
  auto f = random_tensor({n, 96}, 4);
  NoGradGuard guard;
  for (auto _ : state) {
    benchmark::DoNotOptimize(gx.forward(f).values().data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

void BM_GraphXFactored(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  auto gx = GraphX<float>::learned(n, n, 96, 96, 24, Activation::kRelu, rng);
  auto f = random_tensor({n, 96}, 4);
  NoGradGuard guard;
  for (auto _ : state) {
    benchmark::DoNotOptimize(gx.forward(f).values().data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

void BM_ImageEncoder(benchmark::State& state) {
  EncoderConfig cfg;
  cfg.channels = {16, 32, 64};
  cfg.image_h = cfg.image_w = 64;
  Rng rng(5);
  ImageEncoder<float> enc(cfg, rng);
  auto img = random_tensor({1, 64, 64}, 6);
  NoGradGuard guard;
  for (auto _ : state) {
    benchmark::DoNotOptimize(enc.forward(img).back().values().data());
  }
}

void BM_BilinearSample(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto map = random_tensor({64, 16, 16}, 7);
  Rng rng(8);
  std::vector<float> c(n * 2);
  for (float& x : c) x = static_cast<float>(rng.uniform(0, 15));
  Tensor<float> coords({n, 2}, std::move(c));
  NoGradGuard guard;
  for (auto _ : state) {
    benchmark::DoNotOptimize(bilinear_sample(map, coords).values().data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

}  // namespace

BENCHMARK(BM_GraphXDense)->Arg(500)->Arg(2000);
BENCHMARK(BM_GraphXFactored)->Arg(500)->Arg(2000);
BENCHMARK(BM_ImageEncoder);
BENCHMARK(BM_BilinearSample)->Arg(500)->Arg(2000);
