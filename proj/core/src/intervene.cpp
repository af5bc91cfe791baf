#include "cblm/intervene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "cblm/errors.hpp"
#include "cblm/rng.hpp"
#include "json.hpp"

namespace cblm::intervene {

using model::CbModelF;
using model::ForwardMode;
using ForwardOptionsF = model::ForwardOptions<float>;
using seqio::TokenSequence;
using seqio::Vocabulary;

const char* attribution_method_name(AttributionMethod m) {
  switch (m) {
    case AttributionMethod::occlusion: return "occlusion";
    case AttributionMethod::gradient: return "gradient";
    case AttributionMethod::grad_x_input: return "grad_x_input";
    case AttributionMethod::grad_x_input_minus_mask: return "grad_x_input_minus_mask";
    case AttributionMethod::random: return "random";
  }
  throw ConfigError("unknown attribution method");
}

AttributionMethod attribution_method_from_name(const std::string& name) {
  for (auto m : {AttributionMethod::occlusion, AttributionMethod::gradient,
                 AttributionMethod::grad_x_input, AttributionMethod::grad_x_input_minus_mask,
                 AttributionMethod::random}) {
    if (name == attribution_method_name(m)) return m;
  }
  throw ConfigError("unknown attribution method: " + name);
}

const char* direction_name(Direction d) {
  return d == Direction::increase ? "+" : "-";
}

Direction direction_from_name(const std::string& name) {
  if (name == "+" || name == "increase") return Direction::increase;
  if (name == "-" || name == "decrease") return Direction::decrease;
  throw ConfigError("unknown direction: " + name);
}

namespace {

void check_concept_index(const CbModelF& m, int i) {
  if (i < 0 || i >= m.config().k) throw ConfigError("concept index out of range");
}

void check_registry(const CbModelF& m, const concepts::ConceptRegistry& registry) {
  if (registry.k() != m.config().k) {
    throw ConfigError("registry width does not match the model");
  }
}

void require_real_concept(const concepts::ConceptRegistry& registry, int i) {
  if (registry.info(i).kind == concepts::ConceptKind::categorical) {
    throw UnsupportedConceptError("cannot intervene on categorical concept " +
                                  registry.info(i).name);
  }
}

// chat for one sequence through the plain helpers: encode, pool, head.
std::vector<float> chat_of(CbModelF& m, const TokenSequence& x) {
  auto H = m.encode(x);
  const auto& cfg = m.config();
  Tensor<float> h0(1, cfg.d);
  if (cfg.concept_pool == model::ConceptPool::cls) {
    std::copy(H.row(0), H.row(0) + cfg.d, h0.v.begin());
  } else {
    int eos = x.eos_index();
    int n = eos - 1;
    if (n <= 0) {
      std::copy(H.row(0), H.row(0) + cfg.d, h0.v.begin());
    } else {
      for (int r = 1; r < eos; ++r) {
        for (int c = 0; c < cfg.d; ++c) h0.v[static_cast<std::size_t>(c)] += H.at(r, c);
      }
      for (int c = 0; c < cfg.d; ++c) h0.v[static_cast<std::size_t>(c)] /= static_cast<float>(n);
    }
  }
  return m.predict_concepts(h0);
}

int residues_of(const TokenSequence& x) { return x.residue_count(); }

}  // namespace

AttributionColumn occlusion_attribution(CbModelF& m, const TokenSequence& x, int concept_index) {
  check_concept_index(m, concept_index);
  AttributionColumn col;
  col.method = AttributionMethod::occlusion;
  int n = residues_of(x);
  col.scores.resize(static_cast<std::size_t>(n), 0.0);
  if (n == 0) return col;

  double base = chat_of(m, x)[static_cast<std::size_t>(concept_index)];
  TokenSequence probe = x;
  for (int r = 0; r < n; ++r) {
    int p = r + 1;
    if (x.ids[static_cast<std::size_t>(p)] == Vocabulary::kMask) continue;
    probe.ids[static_cast<std::size_t>(p)] = Vocabulary::kMask;
    col.scores[static_cast<std::size_t>(r)] =
        base - chat_of(m, probe)[static_cast<std::size_t>(concept_index)];
    probe.ids[static_cast<std::size_t>(p)] = x.ids[static_cast<std::size_t>(p)];
  }
  return col;
}

AttributionColumn gradient_attribution(CbModelF& m, const TokenSequence& x, int concept_index,
                                       AttributionMethod method) {
  if (m.config().variant != model::Variant::CB) {
    throw VariantError("gradient attribution needs the concept-bottleneck variant");
  }
  check_concept_index(m, concept_index);
  if (method != AttributionMethod::gradient && method != AttributionMethod::grad_x_input &&
      method != AttributionMethod::grad_x_input_minus_mask) {
    throw ConfigError("not a gradient-based attribution method");
  }

  AttributionColumn col;
  col.method = method;
  int n = residues_of(x);
  col.scores.resize(static_cast<std::size_t>(n), 0.0);
  if (n == 0) return col;

  ForwardOptionsF opt;
  opt.mode = ForwardMode::inference;
  auto res = m.forward(x, opt);
  int scalar = res.graph.pick(res.chat, 0, concept_index);
  res.graph.backward(scalar);
  const Tensor<float>& g = res.graph.grad(res.emb);

  const Tensor<float>& emb = m.param("tok_emb").value;
  const float* mask_row = emb.row(Vocabulary::kMask);
  int d = m.config().d;
  for (int r = 0; r < n; ++r) {
    int p = r + 1;
    const float* grad = g.row(p);
    const float* tok = emb.row(x.ids[static_cast<std::size_t>(p)]);
    double acc = 0.0;
    switch (method) {
      case AttributionMethod::gradient:
        for (int c = 0; c < d; ++c) acc += std::abs(static_cast<double>(grad[c]));
        break;
      case AttributionMethod::grad_x_input:
        for (int c = 0; c < d; ++c) acc += static_cast<double>(grad[c]) * tok[c];
        break;
      default:
        for (int c = 0; c < d; ++c) {
          acc += static_cast<double>(grad[c]) * (static_cast<double>(tok[c]) - mask_row[c]);
        }
        break;
    }
    col.scores[static_cast<std::size_t>(r)] = acc;
  }
  return col;
}

AttributionColumn random_attribution(const TokenSequence& x, std::uint64_t seed) {
  AttributionColumn col;
  col.method = AttributionMethod::random;
  int n = residues_of(x);
  col.scores.resize(static_cast<std::size_t>(n));
  Rng rng = Rng::derive(seed, "random-attribution");
  for (auto& s : col.scores) s = rng.uniform();
  return col;
}

AttributionColumn attribute(CbModelF& m, const TokenSequence& x, int concept_index,
                            AttributionMethod method, std::uint64_t seed) {
  switch (method) {
    case AttributionMethod::occlusion: return occlusion_attribution(m, x, concept_index);
    case AttributionMethod::random: return random_attribution(x, seed);
    default: return gradient_attribution(m, x, concept_index, method);
  }
}

std::vector<int> select_coordinates(const AttributionColumn& a, Direction direction,
                                    double fraction) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw ConfigError("mask fraction must be in (0, 1]");
  }
  int n = static_cast<int>(a.scores.size());
  if (n == 0) throw NothingToMaskError("no residues to select from");

  int count = std::max(1, static_cast<int>(std::llround(fraction * n)));
  count = std::min(count, n);

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  // Stable sort keeps the lower index first among equal scores.
  if (direction == Direction::increase) {
    std::stable_sort(order.begin(), order.end(), [&](int lhs, int rhs) {
      return a.scores[static_cast<std::size_t>(lhs)] < a.scores[static_cast<std::size_t>(rhs)];
    });
  } else {
    std::stable_sort(order.begin(), order.end(), [&](int lhs, int rhs) {
      return a.scores[static_cast<std::size_t>(lhs)] > a.scores[static_cast<std::size_t>(rhs)];
    });
  }
  order.resize(static_cast<std::size_t>(count));
  return order;
}

void InterventionRequest::validate() const {
  if (!(mask_fraction > 0.0) || mask_fraction > 1.0) {
    throw ConfigError("mask_fraction must be in (0, 1]");
  }
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
}

namespace {

// Greedy argmax (or tempered sampling) over the canonical amino-acid logits.
int choose_token(const std::vector<float>& logits, bool greedy, double temperature, Rng* rng) {
  const int lo = 4, hi = 24;  // token ids of the 20 canonical amino acids
  if (greedy) {
    int best = lo;
    for (int t = lo + 1; t < hi; ++t) {
      if (logits[static_cast<std::size_t>(t)] > logits[static_cast<std::size_t>(best)]) best = t;
    }
    return best;
  }
  double mx = -1e300;
  for (int t = lo; t < hi; ++t) {
    mx = std::max(mx, static_cast<double>(logits[static_cast<std::size_t>(t)]) / temperature);
  }
  double denom = 0.0;
  std::array<double, 20> w{};
  for (int t = lo; t < hi; ++t) {
    w[static_cast<std::size_t>(t - lo)] =
        std::exp(static_cast<double>(logits[static_cast<std::size_t>(t)]) / temperature - mx);
    denom += w[static_cast<std::size_t>(t - lo)];
  }
  double u = rng->uniform() * denom;
  for (int t = lo; t < hi; ++t) {
    u -= w[static_cast<std::size_t>(t - lo)];
    if (u <= 0.0) return t;
  }
  return hi - 1;
}

// One attribute -> mask -> regenerate pass for the bottleneck variant. The
// decoder sees the model's own chat except at the steered index.
std::vector<int> cb_iteration(CbModelF& m, TokenSequence& current, const InterventionRequest& req,
                              int iteration) {
  std::uint64_t attr_seed =
      Rng::derive(req.seed, "attr", static_cast<std::uint64_t>(iteration)).next_u64();
  auto col = attribute(m, current, req.concept_index, req.method, attr_seed);
  auto selected = select_coordinates(col, req.direction, req.mask_fraction);

  TokenSequence masked = current;
  for (int r : selected) {
    masked.ids[static_cast<std::size_t>(r + 1)] = Vocabulary::kMask;
  }

  ForwardOptionsF opt;
  opt.mode = ForwardMode::inference;
  auto res = m.forward(masked, opt);
  const Tensor<float>& chat = res.graph.val(res.chat);
  std::vector<float> steered(chat.v.begin(), chat.v.end());
  steered[static_cast<std::size_t>(req.concept_index)] = static_cast<float>(req.target_value());

  // The decoder is plain linear in [z | h], so swapping z under the already
  // computed h_tilde rows reproduces the intervened forward exactly.
  auto z = m.known_embedding(steered);
  const Tensor<float>& h_tilde = res.graph.val(res.h_tilde);

  Rng decode_rng = Rng::derive(req.seed, "decode", static_cast<std::uint64_t>(iteration));
  std::vector<int> positions = selected;
  std::sort(positions.begin(), positions.end());
  for (int r : positions) {
    auto logits = m.decode_logits(z, h_tilde.row(r + 1));
    current.ids[static_cast<std::size_t>(r + 1)] =
        choose_token(logits, req.greedy, req.temperature, &decode_rng);
  }
  return positions;
}

concepts::ConceptVector recompute(const TokenSequence& ts,
                                  const concepts::ConceptRegistry& registry) {
  return concepts::compute_all(seqio::detokenize(ts), registry);
}

InterventionResult begin_result(const TokenSequence& x, const concepts::ConceptRegistry& registry,
                                const NaturalnessFn& naturalness) {
  InterventionResult out;
  out.input = seqio::detokenize(x);
  out.concepts_before = recompute(x, registry);
  if (naturalness) {
    out.has_naturalness = true;
    out.naturalness_before = naturalness(x);
  }
  return out;
}

void finish_result(InterventionResult& out, const TokenSequence& final_tokens,
                   const concepts::ConceptRegistry& registry, const NaturalnessFn& naturalness) {
  out.concepts_after = recompute(final_tokens, registry);
  if (naturalness) out.naturalness_after = naturalness(final_tokens);
}

TokenSequence run_single(CbModelF& m, const concepts::ConceptRegistry& registry,
                         const TokenSequence& x, const InterventionRequest& req,
                         InterventionResult& out) {
  if (m.config().variant != model::Variant::CB) {
    throw VariantError("interventions need the concept-bottleneck variant");
  }
  req.validate();
  check_concept_index(m, req.concept_index);
  check_registry(m, registry);
  require_real_concept(registry, req.concept_index);

  TokenSequence current = x;
  for (int it = 1; it <= req.iterations; ++it) {
    auto positions = cb_iteration(m, current, req, it);
    out.iterations.push_back({seqio::detokenize(current), std::move(positions)});
  }
  return current;
}

}  // namespace

InterventionResult intervene_single(CbModelF& m, const concepts::ConceptRegistry& registry,
                                    const TokenSequence& x, const InterventionRequest& req,
                                    const NaturalnessFn& naturalness) {
  auto out = begin_result(x, registry, naturalness);
  auto final_tokens = run_single(m, registry, x, req, out);
  finish_result(out, final_tokens, registry, naturalness);
  return out;
}

InterventionResult intervene_multi(CbModelF& m, const concepts::ConceptRegistry& registry,
                                   const TokenSequence& x,
                                   const std::vector<InterventionRequest>& requests,
                                   const NaturalnessFn& naturalness) {
  auto out = begin_result(x, registry, naturalness);
  TokenSequence current = x;
  for (const auto& req : requests) {
    current = run_single(m, registry, current, req, out);
  }
  finish_result(out, current, registry, naturalness);
  return out;
}

InterventionResult clamp_concept(CbModelF& m, const concepts::ConceptRegistry& registry,
                                 const TokenSequence& x, int concept_index, double factor,
                                 const std::vector<double>& max_activation, std::uint64_t seed,
                                 const NaturalnessFn& naturalness) {
  if (static_cast<int>(max_activation.size()) != m.config().k) {
    throw ConfigError("max activation record does not match the model");
  }
  check_concept_index(m, concept_index);
  double peak = max_activation[static_cast<std::size_t>(concept_index)];
  if (!std::isfinite(peak)) throw ConfigError("no recorded activation for this concept");

  InterventionRequest req;
  req.concept_index = concept_index;
  req.direction = Direction::increase;
  req.target = factor * peak;
  req.mask_fraction = 0.25;
  req.method = AttributionMethod::random;
  req.seed = seed;
  return intervene_single(m, registry, x, req, naturalness);
}

InterventionResult steer_conditional(CbModelF& m, const concepts::ConceptRegistry& registry,
                                     const concepts::NormalizationStats& stats,
                                     const TokenSequence& x, const InterventionRequest& req,
                                     const NaturalnessFn& naturalness) {
  if (m.config().variant != model::Variant::C && m.config().variant != model::Variant::CC) {
    throw VariantError("steering needs a conditional variant");
  }
  req.validate();
  check_concept_index(m, req.concept_index);
  check_registry(m, registry);
  if (stats.k() != m.config().k) throw ConfigError("stats width does not match the model");
  require_real_concept(registry, req.concept_index);

  auto out = begin_result(x, registry, naturalness);
  TokenSequence current = x;
  for (int it = 1; it <= req.iterations; ++it) {
    std::uint64_t pick_seed =
        Rng::derive(req.seed, "steer", static_cast<std::uint64_t>(it)).next_u64();
    auto col = random_attribution(current, pick_seed);
    auto selected = select_coordinates(col, req.direction, req.mask_fraction);

    TokenSequence masked = current;
    for (int r : selected) masked.ids[static_cast<std::size_t>(r + 1)] = Vocabulary::kMask;

    // Tags carry the current sequence's own computed concepts with the
    // steered entry pinned to the target.
    auto tags = concepts::normalize(recompute(current, registry), stats, true);
    tags.values[static_cast<std::size_t>(req.concept_index)] = req.target_value();
    tags.observed[static_cast<std::size_t>(req.concept_index)] = 1;

    ForwardOptionsF opt;
    opt.mode = ForwardMode::inference;
    auto res = m.forward_conditional(masked, tags, opt);
    const Tensor<float>& logits = res.graph.val(res.logits);

    Rng decode_rng = Rng::derive(req.seed, "decode", static_cast<std::uint64_t>(it));
    std::sort(selected.begin(), selected.end());
    for (int r : selected) {
      int row = r + 1 + res.position_shift;
      std::vector<float> row_logits(logits.row(row), logits.row(row) + m.config().vocab_size);
      current.ids[static_cast<std::size_t>(r + 1)] =
          choose_token(row_logits, req.greedy, req.temperature, &decode_rng);
    }
    out.iterations.push_back({seqio::detokenize(current), selected});
  }
  finish_result(out, current, registry, naturalness);
  return out;
}

std::string InterventionResult::to_json(const concepts::ConceptRegistry& registry) const {
  nlohmann::json j;
  j["input"] = input;
  j["output"] = output();
  j["iterations"] = nlohmann::json::array();
  for (const auto& it : iterations) {
    j["iterations"].push_back({{"sequence", it.sequence}, {"masked_positions", it.masked_positions}});
  }
  auto concept_obj = [&](const concepts::ConceptVector& cv) {
    nlohmann::json obj = nlohmann::json::object();
    for (int i = 0; i < cv.k(); ++i) {
      const auto& name = registry.info(i).name;
      if (cv.observed[static_cast<std::size_t>(i)]) {
        obj[name] = cv.values[static_cast<std::size_t>(i)];
      } else {
        obj[name] = nullptr;
      }
    }
    return obj;
  };
  j["concepts_before"] = concept_obj(concepts_before);
  j["concepts_after"] = concept_obj(concepts_after);
  if (has_naturalness) {
    j["naturalness_before"] = naturalness_before;
    j["naturalness_after"] = naturalness_after;
  }
  return j.dump(2);
}

}  // namespace cblm::intervene
