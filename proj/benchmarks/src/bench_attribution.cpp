#include <benchmark/benchmark.h>

#include "bench_common.hpp"
#include "cblm/intervene.hpp"
#include "cblm/seqio.hpp"

namespace {

// Occlusion re-encodes once per residue; the gradient path costs one
// forward plus one backward regardless of length. The gap between the two
// is the practical argument for the gradient estimate, so measure both.

void BM_OcclusionAttribution(benchmark::State& state) {
  auto cfg = bench::desk_config();
  cblm::model::CbModelF m(cfg);
  m.init_parameters(1);
  auto seq = cblm::seqio::tokenize(bench::random_protein(static_cast<int>(state.range(0)), 9),
                                   cfg.max_len);
  for (auto _ : state) {
    auto col = cblm::intervene::occlusion_attribution(m, seq, 0);
    benchmark::DoNotOptimize(col.scores.data());
  }
}

void BM_GradientAttribution(benchmark::State& state) {
  auto cfg = bench::desk_config();
  cblm::model::CbModelF m(cfg);
  m.init_parameters(1);
  auto seq = cblm::seqio::tokenize(bench::random_protein(static_cast<int>(state.range(0)), 9),
                                   cfg.max_len);
  for (auto _ : state) {
    auto col = cblm::intervene::gradient_attribution(
        m, seq, 0, cblm::intervene::AttributionMethod::grad_x_input_minus_mask);
    benchmark::DoNotOptimize(col.scores.data());
  }
}

}  // namespace

BENCHMARK(BM_OcclusionAttribution)->Arg(16)->Arg(48);
BENCHMARK(BM_GradientAttribution)->Arg(16)->Arg(48);
