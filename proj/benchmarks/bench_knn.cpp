#include <benchmark/benchmark.h>

#include "csn/geometry.hpp"

using namespace csn;

namespace {

Tensor random_points(std::int64_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::zeros({n, 3});
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

}  // namespace

static void BM_KnnBrute(benchmark::State& state) {
  const Tensor pts = random_points(state.range(0), 11);
  for (auto _ : state) {
    auto idx = knn_indices(pts, 20, true, KnnBackend::brute_force);
    benchmark::DoNotOptimize(idx.data.data());
  }
}
BENCHMARK(BM_KnnBrute)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);

static void BM_KnnGrid(benchmark::State& state) {
  const Tensor pts = random_points(state.range(0), 11);
  for (auto _ : state) {
    auto idx = knn_indices(pts, 20, true, KnnBackend::grid);
    benchmark::DoNotOptimize(idx.data.data());
  }
}
BENCHMARK(BM_KnnGrid)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
