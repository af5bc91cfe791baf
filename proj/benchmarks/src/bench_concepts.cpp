#include <benchmark/benchmark.h>

#include "bench_common.hpp"
#include "cblm/concepts.hpp"

namespace {

void BM_ComputeAllConcepts(benchmark::State& state) {
  auto registry = cblm::concepts::ConceptRegistry::builtin();
  auto seq = bench::random_protein(static_cast<int>(state.range(0)), 5);
  for (auto _ : state) {
    auto cv = cblm::concepts::compute_all(seq, registry);
    benchmark::DoNotOptimize(cv.values.data());
  }
}

void BM_FitNormalization(benchmark::State& state) {
  auto registry = cblm::concepts::ConceptRegistry::builtin();
  std::vector<cblm::concepts::ConceptVector> rows;
  for (int i = 0; i < 256; ++i) {
    rows.push_back(cblm::concepts::compute_all(bench::random_protein(40, 100 + i), registry));
  }
  for (auto _ : state) {
    auto stats = cblm::concepts::fit_normalization(rows);
    benchmark::DoNotOptimize(stats.min.data());
  }
}

}  // namespace

BENCHMARK(BM_ComputeAllConcepts)->Arg(30)->Arg(100)->Arg(300);
BENCHMARK(BM_FitNormalization);
