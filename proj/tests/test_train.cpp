#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "cblm/checkpoint.hpp"
#include "cblm/corpus.hpp"
#include "cblm/errors.hpp"
#include "cblm/train.hpp"
#include "doctest.h"

using namespace cblm;
using model::ModelConfig;
using model::Variant;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

corpus::Corpus small_corpus(int n, std::uint64_t seed, int max_len, double concentration = 0.5) {
  auto seqs =
      seqio::generate_mixture_corpus(n, {8, 16}, seqio::uniform_profile(), concentration, seed);
  std::vector<seqio::FastaRecord> recs;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    recs.push_back({"seq" + std::to_string(i), seqs[i]});
  }
  auto data = corpus::build_corpus(recs, concepts::ConceptRegistry::builtin());
  auto stats = corpus::fit_stats(data);
  corpus::normalize_corpus(data, stats);
  corpus::tokenize_corpus(data, max_len);
  return data;
}

ModelConfig toy_config(Variant v = Variant::CB) {
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.d = 16;
  cfg.heads = 2;
  cfg.max_len = 32;
  cfg.k = 14;
  cfg.variant = v;
  return cfg;
}

}  // namespace

TEST_CASE("train: warmup schedule is exact") {
  train::TrainConfig cfg;
  cfg.learning_rate = 0.5;
  cfg.warmup_steps = 10;
  for (int s = 1; s <= 10; ++s) {
    CHECK(train::warmup_lr(s, cfg) == (static_cast<double>(s) / 10) * 0.5);
  }
  CHECK(train::warmup_lr(11, cfg) == 0.5);
  CHECK(train::warmup_lr(10000, cfg) == 0.5);

  cfg.warmup_steps = 0;
  CHECK(train::warmup_lr(1, cfg) == 0.5);
}

TEST_CASE("train: gradient clipping rescales to the bound") {
  std::vector<Param<float>> params;
  params.emplace_back("a", 1, 2);
  params[0].grad.v = {3.0f, 0.0f};
  params.emplace_back("b", 1, 1);
  params[1].grad.v = {4.0f};

  double pre = train::clip_gradients(params, 0.5);
  CHECK(pre == doctest::Approx(5.0));
  double post = std::sqrt(params[0].grad.v[0] * params[0].grad.v[0] +
                          params[1].grad.v[0] * params[1].grad.v[0]);
  CHECK(post == doctest::Approx(0.5).epsilon(1e-6));

  // Already within bound: untouched.
  params[0].grad.v = {0.1f, 0.0f};
  params[1].grad.v = {0.0f};
  double pre2 = train::clip_gradients(params, 0.5);
  CHECK(pre2 == doctest::Approx(0.1));
  CHECK(params[0].grad.v[0] == 0.1f);
}

TEST_CASE("train: one optimizer step matches the update rule by hand") {
  std::vector<Param<float>> params;
  params.emplace_back("w", 1, 1);
  params[0].value.v = {2.0f};
  params[0].grad.v = {1.0f};

  train::AdamW opt(params);
  opt.step(params, 0.1);

  // First step: mhat = g, vhat = g^2, so the Adam direction is sign(g).
  double expected = 2.0 - 0.1 * (1.0 / (1.0 + 1e-8) + 0.01 * 2.0);
  CHECK(params[0].value.v[0] == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("train: overfitting a fixed set drives the loss down") {
  // Low-entropy mixture profiles keep memorization within reach of a small model.
  auto data = small_corpus(50, 1234, 32, 0.1);
  auto mc = toy_config();
  mc.d = 32;
  mc.heads = 4;
  model::CbModelF m(mc);
  m.init_parameters(9);

  train::TrainConfig cfg;
  cfg.steps = 500;
  cfg.batch_size = 16;
  cfg.learning_rate = 1e-2;
  cfg.warmup_steps = 50;
  cfg.noise_sigma = 0.0;
  cfg.seed = 5;
  cfg.eval_every = 250;

  auto report = train::train(m, data, cfg);
  REQUIRE(report.records.size() == 500);

  double early = 0.0, late = 0.0;
  for (int i = 0; i < 10; ++i) early += report.records[static_cast<std::size_t>(i)].total;
  for (int i = 490; i < 500; ++i) late += report.records[static_cast<std::size_t>(i)].total;
  early /= 10;
  late /= 10;
  CHECK(late <= 0.5 * early);

  // Post-clip norm honors the bound at every step.
  for (const auto& r : report.records) {
    CHECK(r.clipped_norm <= cfg.clip_norm + 1e-6);
    CHECK(r.grad_norm >= r.clipped_norm - 1e-6);
  }

  // Recorded learning rates follow the warmup line exactly.
  for (const auto& r : report.records) {
    CHECK(r.lr == train::warmup_lr(r.step, cfg));
  }

  const auto& ev = report.last_eval();
  CHECK(ev.val_perplexity > 1.0);
  CHECK(ev.val_concept_mse.size() == 14);
}

TEST_CASE("train: same seed gives bitwise-identical parameters and checkpoints") {
  auto data = small_corpus(20, 77, 32);
  train::TrainConfig cfg;
  cfg.steps = 30;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-3;
  cfg.warmup_steps = 5;
  cfg.seed = 21;
  cfg.eval_every = 15;

  model::CbModelF a(toy_config()), b(toy_config());
  a.init_parameters(33);
  b.init_parameters(33);
  std::vector<double> maxa, maxb;
  auto ra = train::train(a, data, cfg, &maxa);
  auto rb = train::train(b, data, cfg, &maxb);

  for (std::size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params()[i].value.v == b.params()[i].value.v);
  }
  CHECK(maxa == maxb);
  REQUIRE(ra.records.size() == rb.records.size());
  CHECK(ra.records.back().total == rb.records.back().total);

  train::CheckpointExtras extras;
  extras.stats.min.assign(14, 0.0);
  extras.stats.max.assign(14, 1.0);
  extras.stats.degenerate.assign(14, 0);
  extras.max_activation = maxa;
  auto pa = temp_path("cblm_ckpt_a.bin");
  auto pb = temp_path("cblm_ckpt_b.bin");
  train::save_checkpoint(a, extras, pa);
  train::save_checkpoint(b, extras, pb);

  std::ifstream fa(pa, std::ios::binary), fb(pb, std::ios::binary);
  std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(ba == bb);
  std::remove(pa.c_str());
  std::remove(pb.c_str());
}

TEST_CASE("train: conditional and autoregressive variants run the same loop") {
  auto data = small_corpus(20, 99, 32);
  train::TrainConfig cfg;
  cfg.steps = 20;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-3;
  cfg.warmup_steps = 5;
  cfg.seed = 2;
  cfg.eval_every = 10;

  for (auto v : {Variant::C, Variant::CC, Variant::AR}) {
    CAPTURE(model::variant_name(v));
    model::CbModelF m(toy_config(v));
    m.init_parameters(4);
    std::vector<double> maxact;
    auto report = train::train(m, data, cfg, &maxact);
    CHECK(report.records.size() == 20);
    for (const auto& r : report.records) CHECK(std::isfinite(r.total));
    if (v == Variant::CC) {
      CHECK(maxact.size() == 14);
    } else {
      CHECK(maxact.empty());
    }
    const auto& ev = report.last_eval();
    CHECK(ev.val_perplexity > 1.0);
  }
}

TEST_CASE("train: divergence raises with the step index") {
  auto data = small_corpus(20, 3, 32);
  model::CbModelF m(toy_config());
  m.init_parameters(1);

  train::TrainConfig cfg;
  cfg.steps = 10;
  cfg.batch_size = 2;
  cfg.learning_rate = 1e20;
  cfg.warmup_steps = 0;
  cfg.seed = 1;

  CHECK_THROWS_AS(train::train(m, data, cfg), DivergenceError);
}

TEST_CASE("train: config validation") {
  train::TrainConfig cfg;
  cfg.mask_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.mask_rate = 0.25;
  cfg.clip_norm = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.clip_norm = 0.5;
  cfg.validate();

  model::CbModelF m(toy_config());
  m.init_parameters(1);
  CHECK_THROWS_AS(train::train(m, {}, cfg), EmptyAfterFilterError);

  auto data = small_corpus(20, 3, 32);
  auto raw = data;
  for (auto& ls : raw) ls.concepts.normalized = false;
  CHECK_THROWS_AS(train::train(m, raw, cfg), ConfigError);

  auto untokenized = data;
  for (auto& ls : untokenized) ls.tokens.ids.clear();
  CHECK_THROWS_AS(train::train(m, untokenized, cfg), ConfigError);
}

TEST_CASE("corpus: persistence round-trips") {
  auto data = small_corpus(12, 8, 32);
  auto names = concepts::ConceptRegistry::builtin().names();

  auto cpath = temp_path("cblm_corpus.jsonl");
  corpus::write_corpus(cpath, data, names);
  std::vector<std::string> names2;
  auto back = corpus::read_corpus(cpath, &names2);
  REQUIRE(back.size() == data.size());
  CHECK(names2 == names);
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(back[i].id == data[i].id);
    CHECK(back[i].sequence == data[i].sequence);
    CHECK(back[i].concepts.values == data[i].concepts.values);
    CHECK(back[i].concepts.observed == data[i].concepts.observed);
  }
  std::remove(cpath.c_str());

  concepts::NormalizationStats stats;
  stats.min = {0.0, -1.5};
  stats.max = {2.0, 3.25};
  stats.degenerate = {0, 0};
  auto spath = temp_path("cblm_stats.json");
  corpus::write_stats(spath, stats, {"a", "b"});
  std::vector<std::string> snames;
  auto sback = corpus::read_stats(spath, &snames);
  CHECK(sback.min == stats.min);
  CHECK(sback.max == stats.max);
  CHECK(snames == std::vector<std::string>{"a", "b"});
  std::remove(spath.c_str());

  CHECK_THROWS_AS(corpus::read_corpus(temp_path("definitely_missing.jsonl")), IoError);

  auto [tr, va] = corpus::split_validation(data);
  CHECK(tr.size() == 11);
  CHECK(va.size() == 1);
  CHECK(va[0].id == data.back().id);
}

TEST_CASE("checkpoint: round-trip restores everything bitwise") {
  auto cfg = toy_config(Variant::CC);
  cfg.k = 15;  // one categorical concept on top of the built-ins
  model::CbModelF m(cfg);
  m.init_parameters(41);

  train::CheckpointExtras extras;
  extras.registry.add_categorical("family_kinase");
  extras.stats.min.assign(15, -2.0);
  extras.stats.max.assign(15, 2.0);
  extras.stats.degenerate.assign(15, 0);
  extras.stats.degenerate[3] = 1;
  extras.max_activation.assign(15, 0.9);

  auto path = temp_path("cblm_ckpt_rt.bin");
  train::save_checkpoint(m, extras, path);
  auto loaded = train::load_checkpoint(path);

  CHECK(loaded.model.config().variant == Variant::CC);
  CHECK(loaded.model.config().k == 15);
  CHECK(loaded.model.config().d == cfg.d);
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    CHECK(loaded.model.params()[i].name == m.params()[i].name);
    CHECK(loaded.model.params()[i].value.v == m.params()[i].value.v);
  }
  CHECK(loaded.extras.registry.k() == 15);
  CHECK(loaded.extras.registry.info(14).name == "family_kinase");
  CHECK(loaded.extras.stats.min == extras.stats.min);
  CHECK(loaded.extras.stats.max == extras.stats.max);
  CHECK(loaded.extras.stats.degenerate == extras.stats.degenerate);
  CHECK(loaded.extras.max_activation == extras.max_activation);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint: corruption and version guards") {
  model::CbModelF m(toy_config());
  m.init_parameters(6);
  train::CheckpointExtras extras;
  extras.stats.min.assign(14, 0.0);
  extras.stats.max.assign(14, 1.0);
  extras.stats.degenerate.assign(14, 0);

  auto path = temp_path("cblm_ckpt_bad.bin");
  train::save_checkpoint(m, extras, path);

  SUBCASE("truncated payload") {
    auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 64);
    CHECK_THROWS_AS(train::load_checkpoint(path), CorruptCheckpointError);
  }

  SUBCASE("bad magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("NOTACKPT", 8);
    f.close();
    CHECK_THROWS_AS(train::load_checkpoint(path), CorruptCheckpointError);
  }

  SUBCASE("future version is refused with a message") {
    std::ifstream in(path, std::ios::binary);
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    auto pos = blob.find("\"format_version\":1");
    REQUIRE(pos != std::string::npos);
    blob[pos + std::string("\"format_version\":").size()] = '9';
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    out.close();
    try {
      train::load_checkpoint(path);
      FAIL("expected a version refusal");
    } catch (const CorruptCheckpointError& err) {
      CHECK(std::string(err.what()).find("version") != std::string::npos);
    }
  }

  SUBCASE("missing file") {
    CHECK_THROWS_AS(train::load_checkpoint(temp_path("ckpt_not_here.bin")), IoError);
  }

  std::remove(path.c_str());
}

TEST_CASE("checkpoint: model config text mapping rejects unknown keys") {
  auto cfg = toy_config(Variant::AR);
  cfg.final_norm = false;
  cfg.concept_pool = model::ConceptPool::mean;
  auto text = train::render_model_config(cfg);
  auto back = train::parse_model_config(text);
  CHECK(back.variant == Variant::AR);
  CHECK(back.final_norm == false);
  CHECK(back.concept_pool == model::ConceptPool::mean);
  CHECK(back.d == cfg.d);

  CHECK_THROWS_AS(train::parse_model_config("{\"layres\": 2}"), ConfigError);
  CHECK_THROWS_AS(train::parse_model_config("not json"), ConfigError);
  CHECK_THROWS_AS(train::parse_model_config("{\"variant\": \"XX\"}"), ConfigError);
}

TEST_CASE("train: report JSON lines round-trip") {
  train::TrainReport report;
  train::TrainRecord r1;
  r1.step = 1;
  r1.lr = 0.01;
  r1.mlm = 3.2;
  r1.concept_term = 0.4;
  r1.orth = 0.2;
  r1.total = 3.62;
  r1.grad_norm = 2.0;
  r1.clipped_norm = 0.5;
  train::TrainRecord r2 = r1;
  r2.step = 2;
  r2.has_eval = true;
  r2.val_concept_mse = {0.1, 0.2};
  r2.val_perplexity = 12.5;
  report.records = {r1, r2};

  auto path = temp_path("cblm_report.jsonl");
  report.write_jsonl(path);
  auto back = train::TrainReport::read_jsonl(path);
  REQUIRE(back.records.size() == 2);
  CHECK(back.records[0].step == 1);
  CHECK(back.records[0].has_eval == false);
  CHECK(back.records[1].val_concept_mse == std::vector<double>{0.1, 0.2});
  CHECK(back.records[1].val_perplexity == 12.5);
  CHECK(back.last_eval().step == 2);
  std::remove(path.c_str());
}
