#include <cmath>
#include <set>
#include <vector>

#include "cblm/errors.hpp"
#include "cblm/model.hpp"
#include "cblm/seqio.hpp"
#include "doctest.h"

using namespace cblm;
using model::CbModelF;
using model::ForwardMode;
using model::ForwardOptions;
using model::ModelConfig;
using model::Variant;

namespace {

ModelConfig tiny_config(Variant v = Variant::CB) {
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.d = 8;
  cfg.heads = 2;
  cfg.max_len = 16;
  cfg.k = 3;
  cfg.concept_emb_dim = 2;
  cfg.variant = v;
  return cfg;
}

concepts::ConceptVector targets3() {
  concepts::ConceptVector cv;
  cv.values = {0.3, 0.7, 0.45};
  cv.observed = {1, 1, 1};
  cv.normalized = true;
  return cv;
}

seqio::TokenSequence masked_peptide(int max_len, seqio::TokenSequence* orig = nullptr) {
  auto ts = seqio::tokenize("ACDEF", max_len);
  if (orig != nullptr) *orig = ts;
  seqio::MaskPlan plan;
  plan.positions = {2, 4};
  return seqio::apply_mask(ts, plan).first;
}

std::vector<float> logits_row(const model::ForwardResult<float>& res, int row) {
  const auto& t = res.graph.val(res.logits);
  return std::vector<float>(t.row(row), t.row(row) + t.cols);
}

}  // namespace

TEST_CASE("model: parameter inventory follows the config") {
  CbModelF cb(tiny_config());
  CHECK(cb.param("tok_emb").value.rows == 33);
  CHECK(cb.param("tok_emb").value.cols == 8);
  CHECK(cb.param("concept_head.w").value.rows == 3);
  CHECK(cb.param("concept_emb").value.cols == 2);
  CHECK(cb.param("decoder.w").value.rows == 33);
  CHECK(cb.param("decoder.w").value.cols == 3 * 2 + 8);
  CHECK(cb.param("enc0.ff.w1").value.rows == 32);
  CHECK(cb.has_param("orth.w2"));
  CHECK_FALSE(cb.has_param("out.w"));
  CHECK_FALSE(cb.has_param("enc1.ln1.g"));
  CHECK_THROWS_AS(cb.param("nope"), ConfigError);

  CbModelF c(tiny_config(Variant::C));
  CHECK(c.has_param("tag.emb"));
  CHECK(c.has_param("out.w"));
  CHECK_FALSE(c.has_param("concept_head.w"));
  CHECK_FALSE(c.has_param("decoder.w"));

  CbModelF cc(tiny_config(Variant::CC));
  CHECK(cc.has_param("tag.proj"));
  CHECK(cc.has_param("concept_head.b"));

  CbModelF ar(tiny_config(Variant::AR));
  CHECK(ar.has_param("out.w"));
  CHECK_FALSE(ar.has_param("tag.emb"));

  std::size_t n = 0;
  for (const auto& p : cb.params()) n += p.value.size();
  CHECK(cb.parameter_count() == n);
}

TEST_CASE("model: initialization is deterministic and respects roles") {
  auto cfg = tiny_config();
  CbModelF a(cfg), b(cfg);
  a.init_parameters(42);
  b.init_parameters(42);
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params()[i].value.v == b.params()[i].value.v);
  }
  for (float v : a.param("enc0.ln1.g").value.v) CHECK(v == 1.0f);
  for (float v : a.param("concept_head.b").value.v) CHECK(v == 0.0f);
  for (float v : a.param("orth.b1").value.v) CHECK(v == 0.0f);

  CbModelF c(cfg);
  c.init_parameters(43);
  CHECK(a.param("tok_emb").value.v != c.param("tok_emb").value.v);
}

TEST_CASE("model: encode shape, padding, and determinism") {
  auto cfg = tiny_config();
  CbModelF m(cfg);
  m.init_parameters(5);

  auto ts = seqio::tokenize("ACD", cfg.max_len);
  auto H1 = m.encode(ts);
  CHECK(H1.rows == ts.length());
  CHECK(H1.cols == cfg.d);
  for (int r = ts.frame_length(); r < H1.rows; ++r) {
    for (int c = 0; c < H1.cols; ++c) CHECK(H1.at(r, c) == 0.0f);
  }

  auto H2 = m.encode(ts);
  CHECK(H1.v == H2.v);

  // States inside the frame cannot depend on what sits in the padding.
  auto altered = ts;
  altered.ids[ts.frame_length()] = seqio::Vocabulary::kUnk;
  auto H3 = m.encode(altered);
  for (int r = 0; r < ts.frame_length(); ++r) {
    for (int c = 0; c < H1.cols; ++c) CHECK(H1.at(r, c) == H3.at(r, c));
  }
}

TEST_CASE("model: concept head and embedding algebra") {
  auto cfg = tiny_config();
  CbModelF m(cfg);
  m.init_parameters(5);

  Tensor<float> h0(1, cfg.d);
  for (int j = 0; j < cfg.d; ++j) h0.at(0, j) = 0.1f * static_cast<float>(j);

  SUBCASE("zero head weights return the bias") {
    m.param("concept_head.w").value.fill(0.0f);
    auto& b = m.param("concept_head.b").value;
    b.v = {0.5f, -0.25f, 2.0f};
    auto chat = m.predict_concepts(h0);
    REQUIRE(chat.size() == 3);
    CHECK(chat[0] == 0.5f);
    CHECK(chat[1] == -0.25f);
    CHECK(chat[2] == 2.0f);
  }

  SUBCASE("known embedding scales rows by chat") {
    auto z0 = m.known_embedding({0.0f, 0.0f, 0.0f});
    for (float v : z0.v) CHECK(v == 0.0f);

    auto z1 = m.known_embedding({1.0f, 1.0f, 1.0f});
    CHECK(z1.v == m.param("concept_emb").value.v);

    auto za = m.known_embedding({0.2f, -0.4f, 0.9f});
    auto zb = m.known_embedding({0.4f, -0.8f, 1.8f});
    for (std::size_t i = 0; i < za.v.size(); ++i) {
      CHECK(zb.v[i] == doctest::Approx(2.0f * za.v[i]));
    }
  }

  SUBCASE("unknown embedding is position-wise") {
    Tensor<float> H(3, cfg.d);
    Rng rng = Rng::derive(9, "hrows");
    for (auto& v : H.v) v = static_cast<float>(rng.gaussian());
    auto ha = m.unknown_embedding(H);
    CHECK(ha.rows == 3);
    CHECK(ha.cols == cfg.d);
    auto hb = m.unknown_embedding(H);
    CHECK(ha.v == hb.v);

    for (int c = 0; c < cfg.d; ++c) H.at(1, c) += 1.0f;
    auto hc = m.unknown_embedding(H);
    for (int c = 0; c < cfg.d; ++c) {
      CHECK(hc.at(0, c) == ha.at(0, c));
      CHECK(hc.at(2, c) == ha.at(2, c));
      CHECK(hc.at(1, c) != ha.at(1, c));
    }
  }
}

TEST_CASE("model: decoder is linear pre-softmax") {
  auto cfg = tiny_config();
  CbModelF m(cfg);
  m.init_parameters(5);

  Tensor<float> z(1, cfg.concept_cols());
  std::vector<float> h(static_cast<std::size_t>(cfg.d));
  Rng rng = Rng::derive(31, "dec");
  for (auto& v : z.v) v = static_cast<float>(rng.gaussian());
  for (auto& v : h) v = static_cast<float>(rng.gaussian());
  Tensor<float> z0(1, cfg.concept_cols());
  std::vector<float> h0(static_cast<std::size_t>(cfg.d), 0.0f);

  auto full = m.decode_logits(z, h.data());
  auto zonly = m.decode_logits(z, h0.data());
  auto honly = m.decode_logits(z0, h.data());
  auto none = m.decode_logits(z0, h0.data());
  for (int t = 0; t < cfg.vocab_size; ++t) {
    auto i = static_cast<std::size_t>(t);
    CHECK(full[i] == doctest::Approx(zonly[i] + honly[i] - none[i]).epsilon(1e-5));
    CHECK(none[i] == 0.0f);
  }

  SUBCASE("zero decoder gives the uniform distribution") {
    m.param("decoder.w").value.fill(0.0f);
    auto probs = m.decode_probs(z, h.data());
    for (float p : probs) CHECK(p == doctest::Approx(1.0f / 33.0f));
  }

  SUBCASE("probabilities normalize") {
    auto probs = m.decode_probs(z, h.data());
    float sum = 0.0f;
    for (float p : probs) sum += p;
    CHECK(sum == doctest::Approx(1.0f).epsilon(1e-6));
  }
}

TEST_CASE("model: CB forward modes") {
  auto cfg = tiny_config();
  CbModelF m(cfg);
  m.init_parameters(21);

  seqio::TokenSequence orig;
  auto masked = masked_peptide(cfg.max_len, &orig);
  auto cv = targets3();
  int frame = masked.frame_length();

  ForwardOptions<float> inf;
  auto a = m.forward(masked, inf);
  CHECK(a.frame == frame);
  CHECK(a.position_shift == 0);
  CHECK(a.graph.val(a.logits).rows == frame);
  CHECK(a.graph.val(a.logits).cols == cfg.vocab_size);
  CHECK(a.graph.val(a.chat).cols == cfg.k);
  CHECK(a.graph.val(a.z).rows == cfg.k);
  CHECK(a.graph.val(a.z).cols == cfg.concept_emb_dim);
  CHECK(a.graph.val(a.h_tilde).rows == frame);
  CHECK(a.masked_rows == std::vector<int>{2, 4});
  for (float v : a.chat_effective) CHECK(std::isfinite(v));

  // Softmax over each logits row normalizes.
  for (int r = 0; r < frame; ++r) {
    auto row = logits_row(a, r);
    float mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (float l : row) sum += std::exp(static_cast<double>(l - mx));
    double total = 0.0;
    for (float l : row) total += std::exp(static_cast<double>(l - mx)) / sum;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  }

  SUBCASE("deterministic") {
    auto b = m.forward(masked, inf);
    CHECK(a.graph.val(a.logits).v == b.graph.val(b.logits).v);
  }

  SUBCASE("intervened with the model's own chat reproduces inference") {
    std::vector<double> own(a.chat_effective.begin(), a.chat_effective.end());
    ForwardOptions<float> opt;
    opt.mode = ForwardMode::intervened;
    opt.chat_override = &own;
    auto b = m.forward(masked, opt);
    CHECK(a.graph.val(a.logits).v == b.graph.val(b.logits).v);
  }

  SUBCASE("h_tilde ignores the concept pathway") {
    ForwardOptions<float> ti;
    ti.mode = ForwardMode::train_independent;
    ti.concepts = &cv;
    auto b = m.forward(masked, ti, &orig);
    std::vector<double> zeros(static_cast<std::size_t>(cfg.k), 0.0);
    ForwardOptions<float> iv;
    iv.mode = ForwardMode::intervened;
    iv.chat_override = &zeros;
    auto c = m.forward(masked, iv);
    CHECK(a.graph.val(a.h_tilde).v == b.graph.val(b.h_tilde).v);
    CHECK(a.graph.val(a.h_tilde).v == c.graph.val(c.h_tilde).v);
  }

  SUBCASE("fully observed training logits bypass the concept head") {
    ForwardOptions<float> ti;
    ti.mode = ForwardMode::train_independent;
    ti.concepts = &cv;
    auto before = m.forward(masked, ti, &orig);
    m.param("concept_head.w").value.fill(7.5f);
    m.param("concept_head.b").value.fill(-3.0f);
    auto after = m.forward(masked, ti, &orig);
    CHECK(before.graph.val(before.logits).v == after.graph.val(after.logits).v);
    CHECK(before.chat_effective == after.chat_effective);
  }

  SUBCASE("partially observed training mixes targets with predictions") {
    concepts::ConceptVector pv = cv;
    pv.observed = {1, 0, 1};
    ForwardOptions<float> ti;
    ti.mode = ForwardMode::train_independent;
    ti.concepts = &pv;
    auto b = m.forward(masked, ti, &orig);
    CHECK(b.chat_effective[0] == doctest::Approx(0.3f));
    CHECK(b.chat_effective[2] == doctest::Approx(0.45f));
    CHECK(b.chat_effective[1] == b.graph.val(b.chat).v[1]);
  }

  SUBCASE("error paths") {
    ForwardOptions<float> ti;
    ti.mode = ForwardMode::train_independent;
    CHECK_THROWS_AS(m.forward(masked, ti, &orig), MissingConceptsError);

    ForwardOptions<float> losses;
    losses.build_losses = true;
    CHECK_THROWS_AS(m.forward(orig, losses, &orig), EmptyLossError);

    seqio::TokenSequence tooLong;
    tooLong.ids.assign(static_cast<std::size_t>(cfg.max_len) + 2, 4);
    tooLong.ids[0] = seqio::Vocabulary::kCls;
    tooLong.ids.back() = seqio::Vocabulary::kEos;
    CHECK_THROWS_AS(m.forward(tooLong, inf), LengthError);

    concepts::ConceptVector raw = cv;
    raw.normalized = false;
    ForwardOptions<float> tr;
    tr.mode = ForwardMode::train_independent;
    tr.concepts = &raw;
    CHECK_THROWS_AS(m.forward(masked, tr, &orig), ConfigError);

    CbModelF cmodel(tiny_config(Variant::C));
    cmodel.init_parameters(3);
    CHECK_THROWS_AS(cmodel.forward(masked, inf), VariantError);
  }
}

TEST_CASE("model: independent training cuts MLM gradients to the head") {
  auto cfg = tiny_config();
  CbModelF m(cfg);
  m.init_parameters(77);

  seqio::TokenSequence orig;
  auto masked = masked_peptide(cfg.max_len, &orig);
  concepts::ConceptVector cv = targets3();
  cv.observed = {1, 0, 1};  // a live chat entry feeds the decoder as data

  ForwardOptions<float> opt;
  opt.mode = ForwardMode::train_independent;
  opt.concepts = &cv;
  opt.build_losses = true;

  m.zero_grads();
  auto res = m.forward(masked, opt, &orig);
  res.graph.backward(res.loss_mlm);

  for (float gextra : m.param("concept_head.w").grad.v) CHECK(gextra == 0.0f);
  for (float gextra : m.param("concept_head.b").grad.v) CHECK(gextra == 0.0f);

  // The decoder and concept embeddings still learn from the MLM term.
  float decoder_norm = 0.0f, emb_norm = 0.0f, tok_norm = 0.0f;
  for (float gv : m.param("decoder.w").grad.v) decoder_norm += gv * gv;
  for (float gv : m.param("concept_emb").grad.v) emb_norm += gv * gv;
  for (float gv : m.param("tok_emb").grad.v) tok_norm += gv * gv;
  CHECK(decoder_norm > 0.0f);
  CHECK(emb_norm > 0.0f);
  CHECK(tok_norm > 0.0f);

  // Attribution needs the gradient at the token embeddings themselves.
  CHECK(res.graph.grad(res.emb).rows == res.frame);
  float emb_in_norm = 0.0f;
  for (float gv : res.graph.grad(res.emb).v) emb_in_norm += gv * gv;
  CHECK(emb_in_norm > 0.0f);

  // The concept loss is what trains the head.
  m.zero_grads();
  auto res2 = m.forward(masked, opt, &orig);
  res2.graph.backward(res2.loss_concept);
  float head_norm = 0.0f;
  for (float gv : m.param("concept_head.w").grad.v) head_norm += gv * gv;
  CHECK(head_norm > 0.0f);
}

TEST_CASE("model: conditional variants inject concept tags") {
  auto cfg = tiny_config(Variant::C);
  CbModelF m(cfg);
  m.init_parameters(55);

  seqio::TokenSequence orig;
  auto masked = masked_peptide(cfg.max_len, &orig);
  auto cv = targets3();
  int frame = masked.frame_length();

  ForwardOptions<float> opt;
  auto a = m.forward_conditional(masked, cv, opt);
  CHECK(a.frame == frame + cfg.k);
  CHECK(a.position_shift == cfg.k);
  CHECK(a.graph.val(a.logits).rows == frame + cfg.k);
  CHECK(a.masked_rows == std::vector<int>{2 + cfg.k, 4 + cfg.k});
  CHECK(a.chat == -1);

  SUBCASE("observed concepts condition the logits") {
    auto cv2 = cv;
    cv2.values[1] = 0.05;
    auto b = m.forward_conditional(masked, cv2, opt);
    CHECK(a.graph.val(a.logits).v != b.graph.val(b.logits).v);
  }

  SUBCASE("unobserved concepts fall back to the sentinel") {
    auto cv2 = cv;
    cv2.observed[1] = 0;
    cv2.values[1] = 123.0;
    auto b = m.forward_conditional(masked, cv2, opt);
    auto cv3 = cv;
    cv3.observed[1] = 0;
    cv3.values[1] = -55.0;
    auto c = m.forward_conditional(masked, cv3, opt);
    CHECK(b.graph.val(b.logits).v == c.graph.val(c.logits).v);
  }

  SUBCASE("masked losses map rows back to sequence positions") {
    ForwardOptions<float> lo;
    lo.build_losses = true;
    auto b = m.forward_conditional(masked, cv, lo, &orig);
    CHECK(b.loss_mlm >= 0);
    CHECK(b.loss_concept == -1);
    CHECK(b.total() == doctest::Approx(b.mlm()));
  }

  SUBCASE("the concept-supervised variant also predicts concepts") {
    CbModelF cc(tiny_config(Variant::CC));
    cc.init_parameters(56);
    ForwardOptions<float> lo;
    lo.build_losses = true;
    auto b = cc.forward_conditional(masked, cv, lo, &orig);
    CHECK(b.chat >= 0);
    CHECK(b.graph.val(b.chat).cols == cfg.k);
    CHECK(b.loss_concept >= 0);
    CHECK(b.total() == doctest::Approx(b.mlm() + 1.0 * b.concept_term()));
  }

  SUBCASE("variant guards") {
    CbModelF cb(tiny_config(Variant::CB));
    cb.init_parameters(3);
    CHECK_THROWS_AS(cb.forward_conditional(masked, cv, opt), VariantError);
    CHECK_THROWS_AS(m.forward_autoregressive(orig, false), VariantError);
  }
}

TEST_CASE("model: autoregressive forward is causal") {
  auto cfg = tiny_config(Variant::AR);
  CbModelF m(cfg);
  m.init_parameters(66);

  auto x1 = seqio::tokenize("ACDEF", cfg.max_len);
  auto x2 = seqio::tokenize("ACDWY", cfg.max_len);  // shared prefix CLS A C D

  auto a = m.forward_autoregressive(x1, true);
  auto b = m.forward_autoregressive(x2, true);
  const auto& la = a.graph.val(a.logits);
  const auto& lb = b.graph.val(b.logits);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < la.cols; ++c) CHECK(la.at(r, c) == lb.at(r, c));
  }
  bool row4_differs = false;
  for (int c = 0; c < la.cols; ++c) row4_differs |= la.at(4, c) != lb.at(4, c);
  CHECK(row4_differs);

  CHECK(a.loss_mlm >= 0);
  CHECK(a.total() > 0.0);

  auto c = m.forward_autoregressive(x1, false);
  CHECK(a.graph.val(a.logits).v == c.graph.val(c.logits).v);

  auto single = seqio::tokenize("A", cfg.max_len);
  single.ids.resize(2);  // only CLS + residue would still frame with EOS; force short
  CHECK_THROWS(m.forward_autoregressive(single, true));

  CbModelF cb(tiny_config(Variant::CB));
  cb.init_parameters(1);
  CHECK_THROWS_AS(cb.forward_autoregressive(x1, true), VariantError);
}

TEST_CASE("model: embedding noise statistics") {
  Rng rng = Rng::derive(3, "noise-test");
  auto zero = model::embedding_noise<float>(4, 8, 0.0, rng);
  for (float v : zero.v) CHECK(v == 0.0f);

  const int n = 100000;
  const double sigma = 0.02;
  Rng rng2 = Rng::derive(3, "noise-test-2");
  auto big = model::embedding_noise<double>(n / 100, 100, sigma, rng2);
  double mean = 0.0;
  for (double v : big.v) mean += v;
  mean /= n;
  CHECK(std::abs(mean) <= 3.0 * sigma / std::sqrt(static_cast<double>(n)));
  double var = 0.0;
  for (double v : big.v) var += (v - mean) * (v - mean);
  var /= n - 1;
  CHECK(std::sqrt(var) == doctest::Approx(sigma).epsilon(0.02));

  // Noise perturbs the forward pass only when the caller supplies it.
  auto cfg = tiny_config();
  CbModelF m(cfg);
  m.init_parameters(8);
  auto masked = masked_peptide(cfg.max_len, nullptr);
  ForwardOptions<float> plain;
  auto a = m.forward(masked, plain);
  auto b = m.forward(masked, plain);
  CHECK(a.graph.val(a.logits).v == b.graph.val(b.logits).v);

  Rng rng3 = Rng::derive(9, "noise-test-3");
  auto noise = model::embedding_noise<float>(masked.frame_length(), cfg.d, 0.05, rng3);
  ForwardOptions<float> noisy;
  noisy.embedding_noise = &noise;
  auto c = m.forward(masked, noisy);
  CHECK(a.graph.val(a.logits).v != c.graph.val(c.logits).v);
}
