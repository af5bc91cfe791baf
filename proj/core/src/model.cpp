#include "cblm/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cblm/errors.hpp"
#include "cblm/vocab.hpp"

using cblm::seqio::Vocabulary;

namespace cblm::model {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::CB: return "CB";
    case Variant::C: return "C";
    case Variant::CC: return "CC";
    case Variant::AR: return "AR";
  }
  return "?";
}

Variant variant_from_name(const std::string& name) {
  if (name == "CB") return Variant::CB;
  if (name == "C") return Variant::C;
  if (name == "CC") return Variant::CC;
  if (name == "AR") return Variant::AR;
  throw ConfigError("unknown model variant: " + name);
}

void ModelConfig::validate() const {
  if (layers < 0) throw ConfigError("layers must be >= 0");
  if (d <= 0 || heads <= 0 || d % heads != 0) {
    throw ConfigError("hidden dim must be a positive multiple of heads");
  }
  if ((d / heads) % 2 != 0) throw ConfigError("head dim must be even (rotary pairs)");
  if (max_len < 3) throw ConfigError("max_len must be at least 3");
  if (vocab_size < 5) throw ConfigError("vocab too small");
  if (k < 1) throw ConfigError("concept count must be >= 1");
  if (concept_emb_dim < 1) throw ConfigError("concept_emb_dim must be >= 1");
  if (embedding_noise_sigma < 0.0) throw ConfigError("noise sigma must be >= 0");
}

namespace {

bool ends_with(const std::string& s, const char* suffix) {
  std::string suf(suffix);
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

void check_frame(const seqio::TokenSequence& ts, const ModelConfig& cfg, int extra_rows) {
  if (ts.length() > cfg.max_len) {
    throw LengthError("sequence length " + std::to_string(ts.length()) + " exceeds max_len");
  }
  if (ts.ids.empty() || ts.ids[0] != Vocabulary::kCls) {
    throw InvalidSequenceError("sequence must start with [CLS]");
  }
  for (int id : ts.ids) {
    if (id < 0 || id >= cfg.vocab_size) throw InvalidSequenceError("token id out of range");
  }
  if (ts.frame_length() + extra_rows > cfg.max_len) {
    throw LengthError("frame plus tag rows exceeds max_len");
  }
}

}  // namespace

template <typename S>
CbModel<S>::CbModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  add_param("tok_emb", cfg_.vocab_size, cfg_.d);
  for (int l = 0; l < cfg_.layers; ++l) {
    std::string base = "enc" + std::to_string(l);
    add_param(base + ".ln1.g", 1, cfg_.d);
    add_param(base + ".ln1.b", 1, cfg_.d);
    add_param(base + ".attn.wqkv", 3 * cfg_.d, cfg_.d);
    add_param(base + ".attn.wo", cfg_.d, cfg_.d);
    add_param(base + ".ln2.g", 1, cfg_.d);
    add_param(base + ".ln2.b", 1, cfg_.d);
    add_param(base + ".ff.w1", cfg_.intermediate_dim(), cfg_.d);
    add_param(base + ".ff.w2", cfg_.d, cfg_.intermediate_dim());
  }
  if (cfg_.final_norm) {
    add_param("final_ln.g", 1, cfg_.d);
    add_param("final_ln.b", 1, cfg_.d);
  }
  switch (cfg_.variant) {
    case Variant::CB:
      add_param("concept_head.w", cfg_.k, cfg_.d);
      add_param("concept_head.b", 1, cfg_.k);
      add_param("concept_emb", cfg_.k, cfg_.concept_emb_dim);
      add_param("orth.w1", cfg_.d, cfg_.d);
      add_param("orth.b1", 1, cfg_.d);
      add_param("orth.w2", cfg_.d, cfg_.d);
      add_param("orth.b2", 1, cfg_.d);
      add_param("decoder.w", cfg_.vocab_size, cfg_.concept_cols() + cfg_.d);
      break;
    case Variant::C:
      add_param("tag.emb", cfg_.k, cfg_.d);
      add_param("tag.proj", cfg_.k, cfg_.d);
      add_param("out.w", cfg_.vocab_size, cfg_.d);
      break;
    case Variant::CC:
      add_param("tag.emb", cfg_.k, cfg_.d);
      add_param("tag.proj", cfg_.k, cfg_.d);
      add_param("concept_head.w", cfg_.k, cfg_.d);
      add_param("concept_head.b", 1, cfg_.k);
      add_param("out.w", cfg_.vocab_size, cfg_.d);
      break;
    case Variant::AR:
      add_param("out.w", cfg_.vocab_size, cfg_.d);
      break;
  }
}

template <typename S>
void CbModel<S>::add_param(const std::string& name, int rows, int cols) {
  index_[name] = static_cast<int>(params_.size());
  params_.emplace_back(name, rows, cols);
}

template <typename S>
Param<S>& CbModel<S>::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no such parameter: " + name);
  return params_[static_cast<std::size_t>(it->second)];
}

template <typename S>
const Param<S>& CbModel<S>::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no such parameter: " + name);
  return params_[static_cast<std::size_t>(it->second)];
}

template <typename S>
bool CbModel<S>::has_param(const std::string& name) const {
  return index_.count(name) > 0;
}

template <typename S>
std::size_t CbModel<S>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename S>
void CbModel<S>::zero_grads() {
  for (auto& p : params_) p.zero_grad();
}

template <typename S>
void CbModel<S>::init_parameters(std::uint64_t seed) {
  cfg_.seed = seed;
  for (auto& p : params_) {
    if (ends_with(p.name, ".g")) {
      p.value.fill(S(1));
      continue;
    }
    if (ends_with(p.name, ".b") || ends_with(p.name, ".b1") || ends_with(p.name, ".b2")) {
      p.value.fill(S(0));
      continue;
    }
    // Concept embeddings start at unit scale so the bilinear chat*e pathway
    // carries usable gradient from the first steps.
    double stddev = p.name == "concept_emb" ? 1.0 : 0.02;
    Rng rng = Rng::derive(seed, "init:" + p.name);
    for (auto& v : p.value.v) v = static_cast<S>(rng.gaussian() * stddev);
  }
  zero_grads();
}

template <typename S>
int CbModel<S>::encode_from(Graph<S>& g, int x, bool causal) {
  int h = x;
  for (int l = 0; l < cfg_.layers; ++l) {
    std::string base = "enc" + std::to_string(l);
    int g1 = g.param(param(base + ".ln1.g"));
    int b1 = g.param(param(base + ".ln1.b"));
    int ln1 = g.layer_norm(h, g1, b1, S(cfg_.ln_eps));
    int qkv = g.linear_nt(ln1, g.param(param(base + ".attn.wqkv")));
    int att = g.attention(qkv, cfg_.heads, S(cfg_.rope_base), causal);
    int proj = g.linear_nt(att, g.param(param(base + ".attn.wo")));
    h = g.add(h, proj);
    int g2 = g.param(param(base + ".ln2.g"));
    int b2 = g.param(param(base + ".ln2.b"));
    int ln2 = g.layer_norm(h, g2, b2, S(cfg_.ln_eps));
    int f1 = g.linear_nt(ln2, g.param(param(base + ".ff.w1")));
    int act = g.gelu(f1);
    int f2 = g.linear_nt(act, g.param(param(base + ".ff.w2")));
    h = g.add(h, f2);
  }
  if (cfg_.final_norm) {
    int gf = g.param(param("final_ln.g"));
    int bf = g.param(param("final_ln.b"));
    h = g.layer_norm(h, gf, bf, S(cfg_.ln_eps));
  }
  return h;
}

template <typename S>
ForwardResult<S> CbModel<S>::forward(const seqio::TokenSequence& masked,
                                     const ForwardOptions<S>& opt,
                                     const seqio::TokenSequence* targets) {
  if (cfg_.variant != Variant::CB) {
    throw VariantError("forward requires the CB variant; checkpoint is " +
                       std::string(variant_name(cfg_.variant)));
  }
  check_frame(masked, cfg_, 0);
  int frame = masked.frame_length();
  int eos = masked.eos_index();

  ForwardResult<S> res;
  Graph<S>& g = res.graph;
  res.frame = frame;
  res.position_shift = 0;

  std::vector<int> ids(masked.ids.begin(), masked.ids.begin() + frame);
  int table = g.param(param("tok_emb"));
  int emb = g.gather_rows(table, ids);
  res.emb = emb;
  int x = emb;
  if (opt.embedding_noise != nullptr && !opt.embedding_noise->empty()) {
    if (opt.embedding_noise->rows != frame || opt.embedding_noise->cols != cfg_.d) {
      throw ConfigError("embedding noise shape mismatch");
    }
    x = g.add(x, g.leaf(*opt.embedding_noise));
  }

  int H = encode_from(g, x, false);
  res.H = H;

  int h0;
  if (cfg_.concept_pool == ConceptPool::cls) {
    h0 = g.pick_row(H, 0);
  } else {
    std::vector<int> residues;
    for (int i = 1; i < eos; ++i) residues.push_back(i);
    if (residues.empty()) residues.push_back(0);
    h0 = g.mean_rows(H, residues);
  }
  res.h0 = h0;

  int chat = g.bias_add(g.linear_nt(h0, g.param(param("concept_head.w"))),
                        g.param(param("concept_head.b")));
  res.chat = chat;

  int t1 = g.bias_add(g.linear_nt(H, g.param(param("orth.w1"))), g.param(param("orth.b1")));
  int h_tilde = g.bias_add(g.linear_nt(g.gelu(t1), g.param(param("orth.w2"))),
                           g.param(param("orth.b2")));
  res.h_tilde = h_tilde;

  // The decoder consumes chat_effective as data, never as a differentiable
  // function of the concept head: the head learns from the concept loss only.
  std::vector<S> ce(static_cast<std::size_t>(cfg_.k));
  {
    const Tensor<S>& cv = g.val(chat);
    switch (opt.mode) {
      case ForwardMode::inference:
        for (int i = 0; i < cfg_.k; ++i) ce[static_cast<std::size_t>(i)] = cv.v[static_cast<std::size_t>(i)];
        break;
      case ForwardMode::train_independent: {
        if (opt.concepts == nullptr) {
          throw MissingConceptsError("train_independent mode needs concept targets");
        }
        if (opt.concepts->k() != cfg_.k) throw ConfigError("concept vector width mismatch");
        if (!opt.concepts->normalized) throw ConfigError("concepts must be normalized");
        for (int i = 0; i < cfg_.k; ++i) {
          auto idx = static_cast<std::size_t>(i);
          ce[idx] = opt.concepts->observed[idx] ? static_cast<S>(opt.concepts->values[idx])
                                                : cv.v[idx];
        }
        break;
      }
      case ForwardMode::intervened: {
        if (opt.chat_override == nullptr ||
            static_cast<int>(opt.chat_override->size()) != cfg_.k) {
          throw ConfigError("intervened mode needs a full chat override");
        }
        for (int i = 0; i < cfg_.k; ++i) {
          ce[static_cast<std::size_t>(i)] = static_cast<S>((*opt.chat_override)[static_cast<std::size_t>(i)]);
        }
        break;
      }
    }
  }
  res.chat_effective = ce;

  Tensor<S> cecol(cfg_.k, 1);
  for (int i = 0; i < cfg_.k; ++i) cecol.at(i, 0) = ce[static_cast<std::size_t>(i)];
  int celeaf = g.leaf(std::move(cecol));
  int z = g.row_scale(g.param(param("concept_emb")), celeaf);
  res.z = z;
  int zrow = g.reshape_row(z);
  int zpad = g.pad_cols(zrow, cfg_.d);
  res.z_pad = zpad;

  int dec_in = g.concat_cols(g.broadcast_row(zrow, frame), h_tilde);
  int logits = g.linear_nt(dec_in, g.param(param("decoder.w")));
  res.logits = logits;

  for (int i = 0; i < frame; ++i) {
    if (ids[static_cast<std::size_t>(i)] == Vocabulary::kMask) res.masked_rows.push_back(i);
  }

  if (opt.build_losses) {
    if (res.masked_rows.empty()) throw EmptyLossError("no masked positions in sequence");
    if (targets == nullptr) throw ConfigError("targets required when building losses");
    std::vector<std::pair<int, int>> tg;
    for (int r : res.masked_rows) tg.push_back({r, targets->ids[static_cast<std::size_t>(r)]});
    res.loss_mlm = g.cross_entropy(logits, tg);

    if (opt.concepts != nullptr) {
      std::vector<S> ct(static_cast<std::size_t>(cfg_.k));
      for (int i = 0; i < cfg_.k; ++i) ct[static_cast<std::size_t>(i)] = static_cast<S>(opt.concepts->values[static_cast<std::size_t>(i)]);
      res.loss_concept = g.mse_masked(chat, ct, opt.concepts->observed);
    }

    std::vector<int> all_rows(static_cast<std::size_t>(frame));
    std::iota(all_rows.begin(), all_rows.end(), 0);
    res.loss_orth = g.cos_orth(zpad, h_tilde, all_rows, S(losses::kCosEps));

    int total = res.loss_mlm;
    if (res.loss_concept >= 0) {
      total = g.add(total, g.scale(res.loss_concept, S(opt.weights.alpha)));
    }
    total = g.add(total, g.scale(res.loss_orth, S(opt.weights.beta)));
    res.loss_total = total;
  }
  return res;
}

template <typename S>
ForwardResult<S> CbModel<S>::forward_conditional(const seqio::TokenSequence& masked,
                                                 const concepts::ConceptVector& c,
                                                 const ForwardOptions<S>& opt,
                                                 const seqio::TokenSequence* targets) {
  if (cfg_.variant != Variant::C && cfg_.variant != Variant::CC) {
    throw VariantError("forward_conditional requires the C or CC variant");
  }
  check_frame(masked, cfg_, cfg_.k);
  if (c.k() != cfg_.k) throw ConfigError("concept vector width mismatch");
  if (!c.normalized) throw ConfigError("concepts must be normalized");
  int frame = masked.frame_length();

  ForwardResult<S> res;
  Graph<S>& g = res.graph;
  res.frame = frame + cfg_.k;
  res.position_shift = cfg_.k;

  std::vector<int> ids(masked.ids.begin(), masked.ids.begin() + frame);
  int emb = g.gather_rows(g.param(param("tok_emb")), ids);
  res.emb = emb;
  int x = emb;
  if (opt.embedding_noise != nullptr && !opt.embedding_noise->empty()) {
    if (opt.embedding_noise->rows != frame || opt.embedding_noise->cols != cfg_.d) {
      throw ConfigError("embedding noise shape mismatch");
    }
    x = g.add(x, g.leaf(*opt.embedding_noise));
  }

  // Unobserved concepts condition at the sentinel value 0.
  Tensor<S> cvals(cfg_.k, 1);
  for (int i = 0; i < cfg_.k; ++i) {
    auto idx = static_cast<std::size_t>(i);
    cvals.at(i, 0) = c.observed[idx] ? static_cast<S>(c.values[idx]) : S(0);
  }
  int tags = g.add(g.param(param("tag.emb")),
                   g.row_scale(g.param(param("tag.proj")), g.leaf(std::move(cvals))));
  int with_tags = g.concat_rows(g.concat_rows(g.slice_rows(x, 0, 1), tags),
                                g.slice_rows(x, 1, frame));

  int H = encode_from(g, with_tags, false);
  res.H = H;
  int logits = g.linear_nt(H, g.param(param("out.w")));
  res.logits = logits;

  if (cfg_.variant == Variant::CC) {
    res.h0 = g.pick_row(H, 0);
    res.chat = g.bias_add(g.linear_nt(res.h0, g.param(param("concept_head.w"))),
                          g.param(param("concept_head.b")));
  }

  for (int i = 1; i < frame; ++i) {
    if (ids[static_cast<std::size_t>(i)] == Vocabulary::kMask) {
      res.masked_rows.push_back(i + cfg_.k);
    }
  }

  if (opt.build_losses) {
    if (res.masked_rows.empty()) throw EmptyLossError("no masked positions in sequence");
    if (targets == nullptr) throw ConfigError("targets required when building losses");
    std::vector<std::pair<int, int>> tg;
    for (int r : res.masked_rows) {
      tg.push_back({r, targets->ids[static_cast<std::size_t>(r - cfg_.k)]});
    }
    res.loss_mlm = g.cross_entropy(logits, tg);
    int total = res.loss_mlm;
    if (cfg_.variant == Variant::CC) {
      std::vector<S> ct(static_cast<std::size_t>(cfg_.k));
      for (int i = 0; i < cfg_.k; ++i) ct[static_cast<std::size_t>(i)] = static_cast<S>(c.values[static_cast<std::size_t>(i)]);
      res.loss_concept = g.mse_masked(res.chat, ct, c.observed);
      total = g.add(total, g.scale(res.loss_concept, S(opt.weights.alpha)));
    }
    res.loss_total = total;
  }
  return res;
}

template <typename S>
ForwardResult<S> CbModel<S>::forward_autoregressive(const seqio::TokenSequence& x,
                                                    bool build_loss,
                                                    const Tensor<S>* noise) {
  if (cfg_.variant != Variant::AR) {
    throw VariantError("forward_autoregressive requires the AR variant");
  }
  check_frame(x, cfg_, 0);
  int frame = x.frame_length();

  ForwardResult<S> res;
  Graph<S>& g = res.graph;
  res.frame = frame;

  std::vector<int> ids(x.ids.begin(), x.ids.begin() + frame);
  int emb = g.gather_rows(g.param(param("tok_emb")), ids);
  res.emb = emb;
  int xin = emb;
  if (noise != nullptr && !noise->empty()) {
    if (noise->rows != frame || noise->cols != cfg_.d) {
      throw ConfigError("embedding noise shape mismatch");
    }
    xin = g.add(xin, g.leaf(*noise));
  }
  int H = encode_from(g, xin, true);
  res.H = H;
  int logits = g.linear_nt(H, g.param(param("out.w")));
  res.logits = logits;

  if (build_loss) {
    if (frame < 2) throw EmptyLossError("nothing to predict");
    std::vector<std::pair<int, int>> tg;
    for (int t = 0; t + 1 < frame; ++t) tg.push_back({t, ids[static_cast<std::size_t>(t + 1)]});
    res.loss_mlm = g.cross_entropy(logits, tg);
    res.loss_total = res.loss_mlm;
  }
  return res;
}

template <typename S>
Tensor<S> CbModel<S>::encode(const seqio::TokenSequence& x) {
  check_frame(x, cfg_, 0);
  int frame = x.frame_length();
  Graph<S> g;
  std::vector<int> ids(x.ids.begin(), x.ids.begin() + frame);
  int emb = g.gather_rows(g.param(param("tok_emb")), ids);
  int H = encode_from(g, emb, cfg_.variant == Variant::AR);
  Tensor<S> out(x.length(), cfg_.d);
  const Tensor<S>& h = g.val(H);
  std::copy(h.v.begin(), h.v.end(), out.v.begin());
  return out;
}

template <typename S>
std::vector<S> CbModel<S>::predict_concepts(const Tensor<S>& h0) const {
  if (cfg_.variant != Variant::CB && cfg_.variant != Variant::CC) {
    throw VariantError("this variant has no concept head");
  }
  const Tensor<S>& w = param("concept_head.w").value;
  const Tensor<S>& b = param("concept_head.b").value;
  std::vector<S> out(static_cast<std::size_t>(cfg_.k));
  for (int i = 0; i < cfg_.k; ++i) {
    S acc = b.v[static_cast<std::size_t>(i)];
    const S* wr = w.row(i);
    for (int c = 0; c < cfg_.d; ++c) acc += wr[c] * h0.v[static_cast<std::size_t>(c)];
    out[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

template <typename S>
Tensor<S> CbModel<S>::known_embedding(const std::vector<S>& chat) const {
  if (cfg_.variant != Variant::CB) throw VariantError("known_embedding is CB-only");
  const Tensor<S>& e = param("concept_emb").value;
  Tensor<S> z(cfg_.k, cfg_.concept_emb_dim);
  for (int i = 0; i < cfg_.k; ++i) {
    for (int j = 0; j < cfg_.concept_emb_dim; ++j) {
      z.at(i, j) = chat[static_cast<std::size_t>(i)] * e.at(i, j);
    }
  }
  return z;
}

template <typename S>
Tensor<S> CbModel<S>::unknown_embedding(const Tensor<S>& H) const {
  if (cfg_.variant != Variant::CB) throw VariantError("unknown_embedding is CB-only");
  const Tensor<S>& w1 = param("orth.w1").value;
  const Tensor<S>& b1 = param("orth.b1").value;
  const Tensor<S>& w2 = param("orth.w2").value;
  const Tensor<S>& b2 = param("orth.b2").value;
  int d = cfg_.d;
  Tensor<S> out(H.rows, d);
  std::vector<S> hidden(static_cast<std::size_t>(d));
  for (int r = 0; r < H.rows; ++r) {
    const S* hr = H.row(r);
    for (int o = 0; o < d; ++o) {
      S acc = b1.v[static_cast<std::size_t>(o)];
      const S* wr = w1.row(o);
      for (int c = 0; c < d; ++c) acc += wr[c] * hr[c];
      hidden[static_cast<std::size_t>(o)] =
          S(0.5) * acc * (S(1) + std::erf(acc / S(std::sqrt(2.0))));
    }
    S* orow = out.row(r);
    for (int o = 0; o < d; ++o) {
      S acc = b2.v[static_cast<std::size_t>(o)];
      const S* wr = w2.row(o);
      for (int c = 0; c < d; ++c) acc += wr[c] * hidden[static_cast<std::size_t>(c)];
      orow[o] = acc;
    }
  }
  return out;
}

template <typename S>
std::vector<S> CbModel<S>::decode_logits(const Tensor<S>& z, const S* h_tilde_row) const {
  if (cfg_.variant != Variant::CB) throw VariantError("decode_logits is CB-only");
  const Tensor<S>& w = param("decoder.w").value;
  int kc = cfg_.concept_cols();
  std::vector<S> logits(static_cast<std::size_t>(cfg_.vocab_size));
  for (int t = 0; t < cfg_.vocab_size; ++t) {
    const S* wr = w.row(t);
    S acc = S(0);
    for (int j = 0; j < kc; ++j) acc += wr[j] * z.v[static_cast<std::size_t>(j)];
    for (int j = 0; j < cfg_.d; ++j) acc += wr[kc + j] * h_tilde_row[j];
    logits[static_cast<std::size_t>(t)] = acc;
  }
  return logits;
}

template <typename S>
std::vector<S> CbModel<S>::decode_probs(const Tensor<S>& z, const S* h_tilde_row) const {
  std::vector<S> logits = decode_logits(z, h_tilde_row);
  S mx = *std::max_element(logits.begin(), logits.end());
  S denom = S(0);
  for (auto& l : logits) {
    l = std::exp(l - mx);
    denom += l;
  }
  for (auto& l : logits) l /= denom;
  return logits;
}

template <typename S>
Tensor<S> embedding_noise(int rows, int cols, double sigma, Rng& rng) {
  Tensor<S> out(rows, cols);
  if (sigma == 0.0) return out;
  for (auto& v : out.v) v = static_cast<S>(rng.gaussian() * sigma);
  return out;
}

template class CbModel<float>;
template class CbModel<double>;
template Tensor<float> embedding_noise<float>(int, int, double, Rng&);
template Tensor<double> embedding_noise<double>(int, int, double, Rng&);

}  // namespace cblm::model
