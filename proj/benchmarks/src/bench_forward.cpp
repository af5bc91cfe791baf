#include <benchmark/benchmark.h>

#include "bench_common.hpp"
#include "cblm/seqio.hpp"
#include "cblm/vocab.hpp"

namespace {

using cblm::model::CbModelF;
using cblm::model::ForwardMode;
using cblm::model::ForwardOptions;

cblm::seqio::TokenSequence masked_copy(const cblm::seqio::TokenSequence& x, double rate,
                                       std::uint64_t seed) {
  auto out = x;
  cblm::Rng rng = cblm::Rng::derive(seed, "bench-mask", 0, 0);
  for (int i = 1; i + 1 < out.frame_length(); ++i) {
    if (rng.uniform() < rate) out.ids[i] = cblm::seqio::Vocabulary::kMask;
  }
  return out;
}

cblm::concepts::ConceptVector unit_targets(int k, std::uint64_t seed) {
  cblm::concepts::ConceptVector cv;
  cv.values.resize(k);
  cv.observed.assign(k, 1);
  cv.normalized = true;
  cblm::Rng rng = cblm::Rng::derive(seed, "bench-cv", 0, 0);
  for (auto& v : cv.values) v = rng.uniform();
  return cv;
}

void BM_EncodeInference(benchmark::State& state) {
  auto cfg = bench::desk_config();
  CbModelF m(cfg);
  m.init_parameters(1);
  auto seq = cblm::seqio::tokenize(bench::random_protein(static_cast<int>(state.range(0)), 7),
                                   cfg.max_len);
  for (auto _ : state) {
    auto h = m.encode(seq);
    benchmark::DoNotOptimize(h.v.data());
  }
}

void BM_TrainStepForwardBackward(benchmark::State& state) {
  auto cfg = bench::desk_config();
  CbModelF m(cfg);
  m.init_parameters(1);
  int len = static_cast<int>(state.range(0));
  auto target = cblm::seqio::tokenize(bench::random_protein(len, 7), cfg.max_len);
  auto masked = masked_copy(target, 0.25, 11);
  auto cv = unit_targets(cfg.k, 3);
  ForwardOptions<float> opt;
  opt.mode = ForwardMode::train_independent;
  opt.concepts = &cv;
  opt.build_losses = true;
  for (auto _ : state) {
    m.zero_grads();
    auto res = m.forward(masked, opt, &target);
    res.graph.backward(res.loss_total);
    benchmark::DoNotOptimize(res.total());
  }
}

void BM_DecodeLogits(benchmark::State& state) {
  auto cfg = bench::desk_config();
  CbModelF m(cfg);
  m.init_parameters(1);
  auto seq = cblm::seqio::tokenize(bench::random_protein(30, 7), cfg.max_len);
  auto h = m.encode(seq);
  auto chat = m.predict_concepts(h);
  auto z = m.known_embedding(chat);
  std::vector<float> row(cfg.d);
  for (int j = 0; j < cfg.d; ++j) row[j] = h.at(5, j);
  for (auto _ : state) {
    auto logits = m.decode_logits(z, row.data());
    benchmark::DoNotOptimize(logits.data());
  }
}

}  // namespace

BENCHMARK(BM_EncodeInference)->Arg(16)->Arg(32)->Arg(62);
BENCHMARK(BM_TrainStepForwardBackward)->Arg(16)->Arg(32)->Arg(62);
BENCHMARK(BM_DecodeLogits);

BENCHMARK_MAIN();
