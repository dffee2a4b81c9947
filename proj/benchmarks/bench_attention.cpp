#include <benchmark/benchmark.h>

#include "csn/attention.hpp"

using namespace csn;

namespace {

Tensor random_tensor(std::vector<std::int64_t> shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

void run_layer(const Tensor& xm, const Tensor& xn, const Tensor& wq, const Tensor& wk, const Tensor& wv,
               std::optional<KeySubsample> sub) {
  Graph g;
  CsaParamRef p{g.leaf(wq), g.leaf(wk), g.leaf(wv)};
  const auto out = csa_layer(g, g.leaf(xm), g.leaf(xn), p, sub);
  benchmark::DoNotOptimize(g.value(out.features).data.data());
}

}  // namespace

// Mirrors the key-subsampling experiment: P_m = P_n = 2500, D = 64,
// keys reduced to 1000.
static void BM_CsaLayerFullKeys(benchmark::State& state) {
  const Tensor xm = random_tensor({2500, 64}, 1);
  const Tensor xn = random_tensor({2500, 64}, 2);
  const Tensor wq = random_tensor({64, 64}, 3), wk = random_tensor({64, 64}, 4), wv = random_tensor({64, 64}, 5);
  for (auto _ : state) run_layer(xm, xn, wq, wk, wv, std::nullopt);
}
BENCHMARK(BM_CsaLayerFullKeys)->Unit(benchmark::kMillisecond);

static void BM_CsaLayerSubsampledKeys(benchmark::State& state) {
  const Tensor xm = random_tensor({2500, 64}, 1);
  const Tensor xn = random_tensor({2500, 64}, 2);
  const Tensor wq = random_tensor({64, 64}, 3), wk = random_tensor({64, 64}, 4), wv = random_tensor({64, 64}, 5);
  for (auto _ : state) run_layer(xm, xn, wq, wk, wv, KeySubsample{1000, 7});
}
BENCHMARK(BM_CsaLayerSubsampledKeys)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
