#include "cblm/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "cblm/errors.hpp"
#include "cblm/rng.hpp"
#include "json.hpp"

namespace cblm::evaluate {

using corpus::Corpus;
using intervene::Direction;
using model::CbModelF;
using model::Variant;
using seqio::TokenSequence;

namespace {

double row_nll(const float* row, int n, int target) {
  double mx = row[0];
  for (int t = 1; t < n; ++t) mx = std::max(mx, static_cast<double>(row[t]));
  double denom = 0.0;
  for (int t = 0; t < n; ++t) denom += std::exp(static_cast<double>(row[t]) - mx);
  return -(static_cast<double>(row[target]) - mx - std::log(denom));
}

std::uint64_t content_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Sign-preserving affine map to [0,1]-scale units; deliberately unclipped so
// changes at the corpus extremes keep their direction.
double normalized_value(double v, const concepts::NormalizationStats& stats, int j) {
  auto idx = static_cast<std::size_t>(j);
  if (stats.degenerate[idx]) return 0.0;
  return (v - stats.min[idx]) / (stats.max[idx] - stats.min[idx]);
}

}  // namespace

double perplexity(CbModelF& m, const Corpus& data, double mask_rate, std::uint64_t seed) {
  if (data.empty()) throw EmptyAfterFilterError("nothing to evaluate");
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& ls : data) {
    if (ls.tokens.ids.empty()) throw ConfigError("corpus is not tokenized");
    if (m.config().variant == Variant::AR) {
      auto res = m.forward_autoregressive(ls.tokens, false);
      const Tensor<float>& logits = res.graph.val(res.logits);
      int frame = ls.tokens.frame_length();
      for (int t = 0; t + 1 < frame; ++t) {
        nll += row_nll(logits.row(t), m.config().vocab_size,
                       ls.tokens.ids[static_cast<std::size_t>(t + 1)]);
        ++count;
      }
      continue;
    }

    std::uint64_t mask_seed =
        Rng::derive(seed, "eval-mask", content_hash(ls.sequence)).next_u64();
    auto [masked, plan] = seqio::apply_mask(ls.tokens, mask_rate, mask_seed);

    model::ForwardOptions<float> opt;
    opt.mode = model::ForwardMode::inference;
    model::ForwardResult<float> res;
    if (m.config().variant == Variant::CB) {
      res = m.forward(masked, opt);
    } else {
      if (!ls.concepts.normalized) throw ConfigError("conditional evaluation needs normalized concepts");
      res = m.forward_conditional(masked, ls.concepts, opt);
    }
    const Tensor<float>& logits = res.graph.val(res.logits);
    for (int r : res.masked_rows) {
      int target = ls.tokens.ids[static_cast<std::size_t>(r - res.position_shift)];
      nll += row_nll(logits.row(r), m.config().vocab_size, target);
      ++count;
    }
  }
  if (count == 0) throw EmptyLossError("no masked positions across the corpus");
  return std::exp(nll / static_cast<double>(count));
}

double naturalness(CbModelF& ar_model, const TokenSequence& x) {
  auto res = ar_model.forward_autoregressive(x, false);
  const Tensor<float>& logits = res.graph.val(res.logits);
  int frame = x.frame_length();
  double acc = 0.0;
  int n = 0;
  for (int t = 0; t + 1 < frame; ++t) {
    acc -= row_nll(logits.row(t), ar_model.config().vocab_size,
                   x.ids[static_cast<std::size_t>(t + 1)]);
    ++n;
  }
  return acc / n;
}

intervene::NaturalnessFn naturalness_fn(CbModelF& ar_model) {
  return [&ar_model](const TokenSequence& x) { return naturalness(ar_model, x); };
}

AccuracySummary intervention_accuracy(const std::vector<ScoredIntervention>& runs) {
  int pos_n = 0, pos_ok = 0, neg_n = 0, neg_ok = 0;
  for (const auto& r : runs) {
    if (r.direction == Direction::increase) {
      ++pos_n;
      if (r.delta > 0.0) ++pos_ok;
    } else {
      ++neg_n;
      if (r.delta < 0.0) ++neg_ok;
    }
  }
  AccuracySummary out;
  out.positive = pos_n > 0 ? static_cast<double>(pos_ok) / pos_n : 0.0;
  out.negative = neg_n > 0 ? static_cast<double>(neg_ok) / neg_n : 0.0;
  out.mean = (out.positive + out.negative) / 2.0;
  return out;
}

double mean_concept_shift(const std::vector<ScoredIntervention>& runs) {
  if (runs.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& r : runs) {
    acc += r.direction == Direction::increase ? r.delta : -r.delta;
  }
  return acc / static_cast<double>(runs.size());
}

std::vector<int> select_eval_set(const Corpus& data, int concept_index, Direction direction,
                                 double fraction) {
  if (!(fraction > 0.0) || fraction > 1.0) throw ConfigError("fraction must be in (0, 1]");
  std::vector<std::pair<double, int>> observed;
  for (std::size_t idx = 0; idx < data.size(); ++idx) {
    const auto& cv = data[idx].concepts;
    if (concept_index < 0 || concept_index >= cv.k()) {
      throw ConfigError("concept index out of range");
    }
    if (cv.observed[static_cast<std::size_t>(concept_index)]) {
      observed.emplace_back(cv.values[static_cast<std::size_t>(concept_index)],
                            static_cast<int>(idx));
    }
  }
  if (observed.empty()) throw EmptyAfterFilterError("no observed values for this concept");

  std::stable_sort(observed.begin(), observed.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  int n = static_cast<int>(observed.size());
  int count = std::min(n, std::max(1, static_cast<int>(std::llround(fraction * n))));

  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(count));
  if (direction == Direction::increase) {
    for (int i = 0; i < count; ++i) out.push_back(observed[static_cast<std::size_t>(i)].second);
  } else {
    for (int i = 0; i < count; ++i) {
      out.push_back(observed[static_cast<std::size_t>(n - 1 - i)].second);
    }
  }
  return out;
}

std::vector<std::vector<double>> ground_truth_concept_correlation(const Corpus& data) {
  if (data.empty()) throw EmptyAfterFilterError("empty corpus");
  int k = data[0].concepts.k();
  std::vector<std::vector<double>> out(static_cast<std::size_t>(k),
                                       std::vector<double>(static_cast<std::size_t>(k), 0.0));
  for (int i = 0; i < k; ++i) {
    out[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 1.0;
    for (int j = i + 1; j < k; ++j) {
      double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
      int n = 0;
      for (const auto& ls : data) {
        const auto& cv = ls.concepts;
        if (!cv.observed[static_cast<std::size_t>(i)] || !cv.observed[static_cast<std::size_t>(j)])
          continue;
        double x = cv.values[static_cast<std::size_t>(i)];
        double y = cv.values[static_cast<std::size_t>(j)];
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
        ++n;
      }
      double r = 0.0;
      if (n >= 2) {
        double cov = sxy - sx * sy / n;
        double vx = sxx - sx * sx / n;
        double vy = syy - sy * sy / n;
        if (vx > 0.0 && vy > 0.0) r = cov / std::sqrt(vx * vy);
      }
      out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = r;
      out[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = r;
    }
  }
  return out;
}

InterventionStudy intervention_correlation(CbModelF& m,
                                           const concepts::ConceptRegistry& registry,
                                           const concepts::NormalizationStats& stats,
                                           const Corpus& data, const StudyOptions& opt,
                                           const intervene::NaturalnessFn& nat) {
  int k = m.config().k;
  if (registry.k() != k || stats.k() != k) {
    throw ConfigError("registry or stats width does not match the model");
  }
  if (opt.max_per_direction < 1) throw ConfigError("max_per_direction must be >= 1");

  std::vector<int> studied;
  if (opt.concept_indices.empty()) {
    for (int i = 0; i < k; ++i) {
      if (registry.info(i).kind == concepts::ConceptKind::real_valued) studied.push_back(i);
    }
  } else {
    for (int i : opt.concept_indices) {
      if (i < 0 || i >= k) throw ConfigError("concept index out of range");
      studied.push_back(i);
    }
  }

  InterventionStudy study;
  study.matrix.assign(static_cast<std::size_t>(k),
                      std::vector<double>(static_cast<std::size_t>(k), 0.0));
  study.accuracy_pos.assign(static_cast<std::size_t>(k), 0.0);
  study.accuracy_neg.assign(static_cast<std::size_t>(k), 0.0);
  study.accuracy_mean.assign(static_cast<std::size_t>(k), 0.0);
  study.mean_shift.assign(static_cast<std::size_t>(k), 0.0);

  bool conditional = m.config().variant == Variant::C || m.config().variant == Variant::CC;

  for (int i : studied) {
    auto pos_set = select_eval_set(data, i, Direction::increase, opt.eval_fraction);
    auto neg_set = select_eval_set(data, i, Direction::decrease, opt.eval_fraction);
    // Equal run counts per direction keep the diagonal identity with the
    // mean accuracy exact.
    int per_dir = std::min({static_cast<int>(pos_set.size()), static_cast<int>(neg_set.size()),
                            opt.max_per_direction});
    pos_set.resize(static_cast<std::size_t>(per_dir));
    neg_set.resize(static_cast<std::size_t>(per_dir));

    std::vector<int> with(static_cast<std::size_t>(k), 0), seen(static_cast<std::size_t>(k), 0);
    int pos_ok = 0, neg_ok = 0;
    double shift = 0.0;

    for (auto direction : {Direction::increase, Direction::decrease}) {
      const auto& set = direction == Direction::increase ? pos_set : neg_set;
      for (int idx : set) {
        intervene::InterventionRequest req;
        req.concept_index = i;
        req.direction = direction;
        req.mask_fraction = opt.mask_fraction;
        req.iterations = opt.iterations;
        req.method = opt.method;
        req.seed = Rng::derive(opt.seed, "study", static_cast<std::uint64_t>(i),
                               static_cast<std::uint64_t>(idx) * 2 +
                                   (direction == Direction::decrease ? 1 : 0))
                       .next_u64();

        auto result = conditional
                          ? intervene::steer_conditional(m, registry, stats, data[static_cast<std::size_t>(idx)].tokens,
                                                         req, nat)
                          : intervene::intervene_single(m, registry, data[static_cast<std::size_t>(idx)].tokens, req,
                                                        nat);

        for (int j = 0; j < k; ++j) {
          auto ji = static_cast<std::size_t>(j);
          if (!result.concepts_before.observed[ji] || !result.concepts_after.observed[ji]) continue;
          double dn = normalized_value(result.concepts_after.values[ji], stats, j) -
                      normalized_value(result.concepts_before.values[ji], stats, j);
          bool moved_with = direction == Direction::increase ? dn > 0.0 : dn < 0.0;
          ++seen[ji];
          if (moved_with) ++with[ji];
          if (j == i) {
            if (moved_with) {
              if (direction == Direction::increase) ++pos_ok; else ++neg_ok;
            }
            shift += direction == Direction::increase ? dn : -dn;
            DistributionRow row;
            row.concept_index = i;
            row.direction = direction;
            row.delta_concept = dn;
            row.delta_naturalness =
                result.has_naturalness ? result.naturalness_after - result.naturalness_before : 0.0;
            study.distribution.push_back(row);
          }
        }
      }
    }

    auto ii = static_cast<std::size_t>(i);
    if (per_dir > 0) {
      study.accuracy_pos[ii] = static_cast<double>(pos_ok) / per_dir;
      study.accuracy_neg[ii] = static_cast<double>(neg_ok) / per_dir;
      study.accuracy_mean[ii] = (study.accuracy_pos[ii] + study.accuracy_neg[ii]) / 2.0;
      study.mean_shift[ii] = shift / (2.0 * per_dir);
      study.runs_per_concept = 2 * per_dir;
    }
    for (int j = 0; j < k; ++j) {
      auto ji = static_cast<std::size_t>(j);
      if (seen[ji] > 0) {
        study.matrix[ii][ji] =
            (2.0 * with[ji] - seen[ji]) / static_cast<double>(seen[ji]);
      }
    }
  }
  return study;
}

EvalReport evaluate_model(CbModelF& m, const concepts::ConceptRegistry& registry,
                          const concepts::NormalizationStats& stats, const Corpus& data,
                          const EvalOptions& opt, CbModelF* ar_model) {
  EvalReport report;
  report.perplexity = perplexity(m, data, opt.mask_rate, opt.seed);
  report.ground_truth_correlation = ground_truth_concept_correlation(data);
  if (opt.run_interventions && m.config().variant != Variant::AR) {
    intervene::NaturalnessFn nat;
    if (ar_model != nullptr) nat = naturalness_fn(*ar_model);
    report.study = intervention_correlation(m, registry, stats, data, opt.study, nat);
  }
  return report;
}

std::string EvalReport::to_json(const std::vector<std::string>& concept_names) const {
  nlohmann::json j;
  j["perplexity"] = perplexity;
  j["concepts"] = concept_names;
  j["accuracy"] = {{"positive", study.accuracy_pos},
                   {"negative", study.accuracy_neg},
                   {"mean", study.accuracy_mean}};
  j["mean_shift"] = study.mean_shift;
  j["runs_per_concept"] = study.runs_per_concept;
  j["intervention_correlation"] = study.matrix;
  j["ground_truth_correlation"] = ground_truth_correlation;
  return j.dump(2);
}

void write_distribution_csv(const std::string& path, const std::vector<DistributionRow>& rows,
                            const std::vector<std::string>& concept_names) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "concept,direction,delta_concept,delta_naturalness\n";
  for (const auto& r : rows) {
    out << concept_names.at(static_cast<std::size_t>(r.concept_index)) << ','
        << intervene::direction_name(r.direction) << ',' << r.delta_concept << ','
        << r.delta_naturalness << '\n';
  }
}

}  // namespace cblm::evaluate
