#include <benchmark/benchmark.h>

#include "pcdnet/losses.hpp"
#include "pcdnet/rng.hpp"

using namespace pcdnet;

namespace {

Tensor<float> random_cloud(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n * 3);
  for (float& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  return Tensor<float>({n, 3}, std::move(v));
}

void BM_ChamferBrute(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto x = random_cloud(n, 1);
  auto y = random_cloud(n, 2);
  NoGradGuard guard;
  for (auto _ : state) {
    benchmark::DoNotOptimize(chamfer(x, y, NNBackend::brute_force()).item());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ChamferGrid(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto x = random_cloud(n, 1);
  auto y = random_cloud(n, 2);
  NoGradGuard guard;
  for (auto _ : state) {
    benchmark::DoNotOptimize(chamfer(x, y, NNBackend::uniform_grid()).item());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_ChamferBrute)->Arg(512)->Arg(2048)->Arg(8192);
BENCHMARK(BM_ChamferGrid)->Arg(512)->Arg(2048)->Arg(8192)->Arg(40000);
