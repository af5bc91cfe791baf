#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cblm/errors.hpp"
#include "cblm/evaluate.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace cblm;
using evaluate::ScoredIntervention;
using intervene::Direction;
using model::ModelConfig;
using model::Variant;

namespace {

ModelConfig tiny_config(Variant v = Variant::CB) {
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.d = 16;
  cfg.heads = 2;
  cfg.max_len = 48;
  cfg.k = 14;
  cfg.variant = v;
  return cfg;
}

corpus::Corpus make_corpus(int n, std::uint64_t seed, int max_len, double concentration = 0.4) {
  auto seqs =
      seqio::generate_mixture_corpus(n, {10, 18}, seqio::uniform_profile(), concentration, seed);
  std::vector<seqio::FastaRecord> recs;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    recs.push_back({"s" + std::to_string(i), seqs[i]});
  }
  auto data = corpus::build_corpus(recs, concepts::ConceptRegistry::builtin());
  auto stats = corpus::fit_stats(data);
  corpus::normalize_corpus(data, stats);
  corpus::tokenize_corpus(data, max_len);
  return data;
}

void zero_decoder(model::CbModelF& m) {
  const char* name = m.config().variant == Variant::CB ? "decoder.w" : "out.w";
  auto& p = m.param(name).value;
  std::fill(p.v.begin(), p.v.end(), 0.0f);
}

}  // namespace

TEST_CASE("perplexity: uniform logits give exactly the vocabulary size") {
  auto data = make_corpus(12, 5, 48);
  for (auto v : {Variant::CB, Variant::C, Variant::CC, Variant::AR}) {
    CAPTURE(model::variant_name(v));
    model::CbModelF m(tiny_config(v));
    m.init_parameters(2);
    zero_decoder(m);
    double ppl = evaluate::perplexity(m, data, 0.25, 7);
    CHECK(std::abs(ppl - 33.0) <= 1e-6);
  }
}

TEST_CASE("perplexity: an oracle model approaches 1") {
  // Constant-A corpus plus a decoder wired to put logit 40 on A: the truth
  // gets probability 1 up to 32 exp(-40).
  std::vector<seqio::FastaRecord> recs;
  for (int i = 0; i < 6; ++i) {
    recs.push_back({"a" + std::to_string(i), std::string(10 + i, 'A')});
  }
  auto data = corpus::build_corpus(recs, concepts::ConceptRegistry::builtin());
  auto stats = corpus::fit_stats(data);
  corpus::normalize_corpus(data, stats);
  corpus::tokenize_corpus(data, 48);

  model::CbModelF m(tiny_config());
  m.init_parameters(2);
  for (const char* name : {"decoder.w", "orth.w2", "orth.b2"}) {
    auto& p = m.param(name).value;
    std::fill(p.v.begin(), p.v.end(), 0.0f);
  }
  m.param("orth.b2").value.v[0] = 1.0f;  // h_tilde = e_1 at every position
  int kc = m.config().concept_cols();
  m.param("decoder.w").value.at(4, kc) = 40.0f;  // token A reads that coordinate

  double ppl = evaluate::perplexity(m, data, 0.25, 3);
  CHECK(ppl == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("perplexity: corpus order does not matter") {
  auto data = make_corpus(10, 11, 48);
  model::CbModelF m(tiny_config());
  m.init_parameters(4);
  double a = evaluate::perplexity(m, data, 0.25, 7);
  std::reverse(data.begin(), data.end());
  double b = evaluate::perplexity(m, data, 0.25, 7);
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
  CHECK_THROWS_AS(evaluate::perplexity(m, {}, 0.25, 7), EmptyAfterFilterError);
}

TEST_CASE("naturalness: uniform model scores ln(1/33) and ignores padding") {
  model::CbModelF ar(tiny_config(Variant::AR));
  ar.init_parameters(2);
  zero_decoder(ar);
  auto x = seqio::tokenize("MKWVTF", 48);
  double n = evaluate::naturalness(ar, x);
  CHECK(n == doctest::Approx(std::log(1.0 / 33.0)).epsilon(1e-12));

  model::CbModelF ar2(tiny_config(Variant::AR));
  ar2.init_parameters(6);
  auto short_pad = seqio::tokenize("MKWVTF", 12);
  auto long_pad = seqio::tokenize("MKWVTF", 48);
  CHECK(evaluate::naturalness(ar2, short_pad) == evaluate::naturalness(ar2, long_pad));
  CHECK(evaluate::naturalness(ar2, x) == evaluate::naturalness(ar2, x));

  auto fn = evaluate::naturalness_fn(ar2);
  CHECK(fn(x) == evaluate::naturalness(ar2, x));
}

TEST_CASE("accuracy and shift: direction rules") {
  std::vector<ScoredIntervention> runs = {
      {Direction::increase, 0.4},
      {Direction::increase, 0.1},
      {Direction::decrease, -0.3},
      {Direction::decrease, -0.2},
  };
  auto acc = evaluate::intervention_accuracy(runs);
  CHECK(acc.positive == 1.0);
  CHECK(acc.negative == 1.0);
  CHECK(acc.mean == 1.0);

  runs = {{Direction::increase, 0.4}, {Direction::increase, 0.0},
          {Direction::decrease, 0.5}, {Direction::decrease, 0.0}};
  acc = evaluate::intervention_accuracy(runs);
  CHECK(acc.positive == 0.5);  // zero change is a failure
  CHECK(acc.negative == 0.0);
  CHECK(acc.mean == 0.25);

  runs = {{Direction::increase, 1.0}, {Direction::decrease, 1.0}};
  acc = evaluate::intervention_accuracy(runs);
  CHECK(acc.mean == 0.5);

  CHECK(evaluate::mean_concept_shift({}) == 0.0);
  runs = {{Direction::increase, 0.0}, {Direction::decrease, 0.0}};
  CHECK(evaluate::mean_concept_shift(runs) == 0.0);
  // A decrease that decreases counts positively.
  runs = {{Direction::increase, 0.3}, {Direction::decrease, -0.6}, {Direction::increase, -0.3}};
  CHECK(evaluate::mean_concept_shift(runs) == doctest::Approx((0.3 + 0.6 - 0.3) / 3.0));
}

TEST_CASE("eval set: quantile tails per direction") {
  corpus::Corpus data(5);
  std::vector<double> vals = {5.0, 1.0, 3.0, 2.0, 4.0};
  for (std::size_t i = 0; i < 5; ++i) {
    data[i].id = "x" + std::to_string(i);
    data[i].concepts.values.assign(14, 0.0);
    data[i].concepts.observed.assign(14, 1);
    data[i].concepts.values[2] = vals[i];
  }

  auto low = evaluate::select_eval_set(data, 2, Direction::increase, 0.4);
  CHECK(low == std::vector<int>{1, 3});
  auto high = evaluate::select_eval_set(data, 2, Direction::decrease, 0.4);
  CHECK(high == std::vector<int>{0, 4});
  auto one = evaluate::select_eval_set(data, 2, Direction::increase, 0.01);
  CHECK(one == std::vector<int>{1});

  data[1].concepts.observed[2] = 0;
  auto skipping = evaluate::select_eval_set(data, 2, Direction::increase, 0.5);
  CHECK(skipping == std::vector<int>{3, 2});

  for (auto& ls : data) ls.concepts.observed[2] = 0;
  CHECK_THROWS_AS(evaluate::select_eval_set(data, 2, Direction::increase, 0.4),
                  EmptyAfterFilterError);
}

TEST_CASE("ground truth correlation: structure and the aromatic helix link") {
  auto data = make_corpus(200, 17, 48);
  auto corr = evaluate::ground_truth_concept_correlation(data);
  REQUIRE(corr.size() == 14);
  for (int i = 0; i < 14; ++i) {
    CHECK(corr[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] == 1.0);
    for (int j = 0; j < 14; ++j) {
      CHECK(corr[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] ==
            doctest::Approx(corr[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)]));
      CHECK(std::abs(corr[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) <= 1.0 + 1e-12);
    }
  }

  // Aromatic residues sit inside the helix-former set, so uniform random
  // sequences must correlate the two concepts positively.
  auto big = seqio::generate_synthetic_corpus(10000, {20, 60}, seqio::uniform_profile(), 99);
  std::vector<seqio::FastaRecord> recs;
  for (std::size_t i = 0; i < big.size(); ++i) recs.push_back({"r" + std::to_string(i), big[i]});
  auto reg = concepts::ConceptRegistry::builtin();
  auto uniform_data = corpus::build_corpus(recs, reg);
  auto ucorr = evaluate::ground_truth_concept_correlation(uniform_data);
  int aromaticity = reg.index_of("aromaticity");
  int helix = reg.index_of("helix_fraction");
  CHECK(ucorr[static_cast<std::size_t>(aromaticity)][static_cast<std::size_t>(helix)] > 0.0);
}

TEST_CASE("intervention study: bounds, identity, and concept filtering") {
  auto data = make_corpus(15, 23, 48);
  auto stats = corpus::fit_stats(make_corpus(15, 23, 48));
  model::CbModelF m(tiny_config());
  m.init_parameters(13);
  auto registry = concepts::ConceptRegistry::builtin();

  evaluate::StudyOptions opt;
  opt.max_per_direction = 2;
  opt.mask_fraction = 0.2;
  opt.seed = 3;
  opt.concept_indices = {1, 4};

  auto study = evaluate::intervention_correlation(m, registry, stats, data, opt);
  REQUIRE(study.matrix.size() == 14);
  CHECK(study.runs_per_concept == 4);
  CHECK(study.distribution.size() == 8);  // two concepts, two directions, two runs

  for (int i : {1, 4}) {
    auto ii = static_cast<std::size_t>(i);
    for (int j = 0; j < 14; ++j) {
      CHECK(std::abs(study.matrix[ii][static_cast<std::size_t>(j)]) <= 1.0);
    }
    CHECK(study.matrix[ii][ii] ==
          doctest::Approx(2.0 * study.accuracy_mean[ii] - 1.0).epsilon(1e-12));
    CHECK(study.accuracy_mean[ii] ==
          doctest::Approx((study.accuracy_pos[ii] + study.accuracy_neg[ii]) / 2.0));
  }
  for (int i : {0, 2, 3, 5, 13}) {
    auto ii = static_cast<std::size_t>(i);
    CHECK(study.accuracy_mean[ii] == 0.0);
    for (double v : study.matrix[ii]) CHECK(v == 0.0);
  }

  SUBCASE("conditional variants run the same study") {
    model::CbModelF c(tiny_config(Variant::CC));
    c.init_parameters(13);
    auto cstudy = evaluate::intervention_correlation(c, registry, stats, data, opt);
    CHECK(cstudy.runs_per_concept == 4);
    CHECK(std::abs(cstudy.matrix[1][1]) <= 1.0);
  }

  SUBCASE("guards") {
    auto bad = opt;
    bad.concept_indices = {99};
    CHECK_THROWS_AS(evaluate::intervention_correlation(m, registry, stats, data, bad),
                    ConfigError);
    bad = opt;
    bad.max_per_direction = 0;
    CHECK_THROWS_AS(evaluate::intervention_correlation(m, registry, stats, data, bad),
                    ConfigError);
  }
}

TEST_CASE("evaluate_model: report and distribution export") {
  auto data = make_corpus(15, 29, 48);
  auto stats = corpus::fit_stats(make_corpus(15, 29, 48));
  model::CbModelF m(tiny_config());
  m.init_parameters(19);
  model::CbModelF ar(tiny_config(Variant::AR));
  ar.init_parameters(20);
  auto registry = concepts::ConceptRegistry::builtin();

  evaluate::EvalOptions opt;
  opt.seed = 9;
  opt.study.max_per_direction = 1;
  opt.study.concept_indices = {4};

  auto report = evaluate::evaluate_model(m, registry, stats, data, opt, &ar);
  CHECK(report.perplexity > 1.0);
  CHECK(report.study.runs_per_concept == 2);
  CHECK(report.ground_truth_correlation.size() == 14);

  auto parsed = nlohmann::json::parse(report.to_json(registry.names()));
  CHECK(parsed["perplexity"].is_number());
  CHECK(parsed["accuracy"]["mean"].size() == 14);
  CHECK(parsed["intervention_correlation"].size() == 14);

  auto path = (std::filesystem::temp_directory_path() / "cblm_dist.csv").string();
  evaluate::write_distribution_csv(path, report.study.distribution, registry.names());
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "concept,direction,delta_concept,delta_naturalness");
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 2);
  in.close();
  std::remove(path.c_str());

  SUBCASE("interventions can be skipped") {
    auto quick = opt;
    quick.run_interventions = false;
    auto r2 = evaluate::evaluate_model(m, registry, stats, data, quick);
    CHECK(r2.study.runs_per_concept == 0);
    CHECK(r2.perplexity == doctest::Approx(report.perplexity));
  }
}
