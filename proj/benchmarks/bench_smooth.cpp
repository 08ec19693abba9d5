#include <benchmark/benchmark.h>

#include "markpoint/asymtest.hpp"
#include "markpoint/simgen.hpp"
#include "markpoint/smooth.hpp"

using namespace markpoint;

namespace {

ReplicatedSample data(std::size_t n) {
  SimConfig cfg;
  cfg.n = n;
  cfg.q = 0.5;
  cfg.seed = 17;
  return Simulator(cfg).simulate();
}

void BM_MeanNaive(benchmark::State& st) {
  const auto s = data(static_cast<std::size_t>(st.range(0)));
  const Grid g = Grid::uniform(s.window(), 101);
  for (auto _ : st) benchmark::DoNotOptimize(estimate_mean_naive(s, 0.1, g).values.data());
}

void BM_CovNaive(benchmark::State& st) {
  const auto s = data(static_cast<std::size_t>(st.range(0)));
  const Grid g = Grid::uniform(s.window(), 51);
  const auto mu = estimate_mean_naive(s, 0.1, g);
  for (auto _ : st) benchmark::DoNotOptimize(estimate_cov_naive(s, mu, 0.15, g).values.data());
}

void BM_CrossCov(benchmark::State& st) {
  const auto s = data(static_cast<std::size_t>(st.range(0)));
  const Grid g = Grid::uniform(s.window(), 51);
  const auto mu = estimate_mean_naive(s, 0.1, g);
  for (auto _ : st) benchmark::DoNotOptimize(estimate_crosscov(s, mu, 0.15, g).values.data());
}

void BM_Tn(benchmark::State& st) {
  const auto s = data(static_cast<std::size_t>(st.range(0)));
  Bandwidths bw{0.1, 0.15, 0.12, 0.15, 0.1, 0.08, 0.1};
  for (auto _ : st) benchmark::DoNotOptimize(tn_at_test_bandwidths(s, bw));
}

void BM_Simulate(benchmark::State& st) {
  SimConfig cfg;
  cfg.n = static_cast<std::size_t>(st.range(0));
  cfg.q = 0.5;
  const Simulator sim(cfg);
  for (auto _ : st) benchmark::DoNotOptimize(sim.simulate().size());
}

}  // namespace

BENCHMARK(BM_MeanNaive)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CovNaive)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CrossCov)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Tn)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Simulate)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
