#include <random>

#include <benchmark/benchmark.h>

#include "flexfuse/dfm.hpp"
#include "flexfuse/em.hpp"
#include "flexfuse/oracles/checks.hpp"
#include "flexfuse/oracles/dense.hpp"
#include "flexfuse/primitives.hpp"

using namespace flexfuse;

namespace {

Grid<float> random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return oracle::random_field(h, w, rng).cast<float>();
}

template <std::floating_point T>
Tensor<T> uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(d(rng));
  return t;
}

// Denoiser cost against token count: width grows, height fixed at 32.
void BM_Denoise(benchmark::State& state) {
  const auto params = oracle::jittered_params(DfmConfig::desk(), 1);
  const std::size_t w = static_cast<std::size_t>(state.range(0));
  const Grid<float> img = random_image(32, w, 2);
  for (auto _ : state) benchmark::DoNotOptimize(denoise(img, 50, params));
  state.counters["tokens"] = static_cast<double>((32 / 4) * (w / 4));
}
BENCHMARK(BM_Denoise)->Arg(16)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_KUpdate(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(3);
  const GradientOperator op(n, n);
  const Field x = oracle::random_field(n, n, rng);
  const GradientField u = oracle::random_gradient_field(n, n, rng);
  for (auto _ : state) benchmark::DoNotOptimize(k_update(x, u, op));
}
BENCHMARK(BM_KUpdate)->RangeMultiplier(2)->Range(16, 256)->Unit(benchmark::kMicrosecond);

void BM_EmCorrect(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(4);
  const GradientOperator op(n, n);
  const SourceStack stack{NormalizedImage(random_image(n, n, 5)), NormalizedImage(random_image(n, n, 6)),
                          std::nullopt};
  const SourceFields src = to_fields(stack);
  const Field f = oracle::random_field(n, n, rng);
  const EMConfig cfg;
  for (auto _ : state) {
    EMState s = EMState::fresh(cfg);
    benchmark::DoNotOptimize(em_correct(f, src, cfg, s, op));
  }
}
BENCHMARK(BM_EmCorrect)->RangeMultiplier(2)->Range(16, 256)->Unit(benchmark::kMicrosecond);

void BM_SsmScan(benchmark::State& state) {
  const std::size_t m = static_cast<std::size_t>(state.range(0)), e = 128, n = 16;
  std::mt19937_64 rng(7);
  const auto x = uniform<float>({m, e}, rng, -1, 1);
  const auto a = uniform<float>({m, e, n}, rng, 0.5, 0.99);
  const auto b = uniform<float>({m, e, n}, rng, -0.1, 0.1);
  const auto c = uniform<float>({m, n}, rng, -1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(nn::ssm_scan(x, a, b, c));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m));
}
BENCHMARK(BM_SsmScan)->RangeMultiplier(4)->Range(16, 1024)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
