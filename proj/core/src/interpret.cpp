#include "cblm/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "cblm/errors.hpp"
#include "json.hpp"

namespace cblm::interpret {

using model::CbModelF;
using seqio::Vocabulary;

EffectiveWeightMatrix export_decoder_weights(const CbModelF& m) {
  if (m.config().variant != model::Variant::CB) {
    throw VariantError("decoder weights need the concept-bottleneck variant");
  }
  const auto& cfg = m.config();
  const Tensor<float>& w = m.param("decoder.w").value;
  const Tensor<float>& e = m.param("concept_emb").value;

  EffectiveWeightMatrix out;
  out.m.assign(static_cast<std::size_t>(cfg.k),
               std::vector<double>(static_cast<std::size_t>(cfg.vocab_size), 0.0));
  for (int i = 0; i < cfg.k; ++i) {
    for (int t = 0; t < cfg.vocab_size; ++t) {
      double acc = 0.0;
      for (int j = 0; j < cfg.concept_emb_dim; ++j) {
        acc += static_cast<double>(w.at(t, i * cfg.concept_emb_dim + j)) * e.at(i, j);
      }
      out.m[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] = acc;
    }
  }
  return out;
}

std::vector<std::vector<double>> concept_contribution(const CbModelF& m,
                                                      const model::ForwardResult<float>& trace,
                                                      int position) {
  if (trace.chat_effective.empty()) {
    throw ConfigError("trace carries no decoder concept values");
  }
  if (position < 0 || position >= trace.frame) throw ConfigError("position out of frame");
  auto weights = export_decoder_weights(m);
  int k = m.config().k;
  int vocab = m.config().vocab_size;
  std::vector<std::vector<double>> out(static_cast<std::size_t>(k),
                                       std::vector<double>(static_cast<std::size_t>(vocab), 0.0));
  for (int i = 0; i < k; ++i) {
    double chat = static_cast<double>(trace.chat_effective[static_cast<std::size_t>(i)]);
    for (int t = 0; t < vocab; ++t) {
      out[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] = chat * weights.at(i, t);
    }
  }
  return out;
}

std::vector<int> counterfactual_rank(const CbModelF& m, int concept_index, bool increase) {
  if (concept_index < 0 || concept_index >= m.config().k) {
    throw ConfigError("concept index out of range");
  }
  auto weights = export_decoder_weights(m);
  std::vector<int> ids(20);
  std::iota(ids.begin(), ids.end(), 4);  // the canonical amino-acid tokens
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    double wa = weights.at(concept_index, a);
    double wb = weights.at(concept_index, b);
    return increase ? wa > wb : wa < wb;
  });
  return ids;
}

std::vector<int> DebugReport::flagged() const {
  std::vector<int> out;
  for (const auto& e : entries) {
    if (e.flagged) out.push_back(e.concept_index);
  }
  return out;
}

DebugReport debug_report(const CbModelF& m, const EffectiveWeightMatrix* healthy_reference,
                         const train::TrainReport* report) {
  auto weights = export_decoder_weights(m);
  int k = weights.k();

  auto row_max = [](const EffectiveWeightMatrix& w, int i) {
    double mx = 0.0;
    for (double v : w.m[static_cast<std::size_t>(i)]) mx = std::max(mx, std::abs(v));
    return mx;
  };

  const EffectiveWeightMatrix& ref = healthy_reference != nullptr ? *healthy_reference : weights;
  if (ref.k() != k) throw ConfigError("reference matrix width mismatch");
  std::vector<double> ref_maxes;
  ref_maxes.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) ref_maxes.push_back(row_max(ref, i));
  std::sort(ref_maxes.begin(), ref_maxes.end());
  double median = k % 2 == 1 ? ref_maxes[static_cast<std::size_t>(k / 2)]
                             : 0.5 * (ref_maxes[static_cast<std::size_t>(k / 2 - 1)] +
                                      ref_maxes[static_cast<std::size_t>(k / 2)]);

  DebugReport out;
  out.threshold = 0.05 * median;
  for (int i = 0; i < k; ++i) {
    DebugEntry e;
    e.concept_index = i;
    e.max_abs = row_max(weights, i);
    e.flagged = e.max_abs < out.threshold;
    out.entries.push_back(e);
  }
  if (report != nullptr && !report->records.empty()) {
    for (auto it = report->records.rbegin(); it != report->records.rend(); ++it) {
      if (it->has_eval) {
        out.val_concept_mse = it->val_concept_mse;
        break;
      }
    }
  }
  return out;
}

std::string DebugReport::to_json(const std::vector<std::string>& concept_names) const {
  nlohmann::json j;
  j["threshold"] = threshold;
  j["concepts"] = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json item;
    item["name"] = concept_names.at(static_cast<std::size_t>(e.concept_index));
    item["max_abs_weight"] = e.max_abs;
    item["flagged"] = e.flagged;
    if (static_cast<std::size_t>(e.concept_index) < val_concept_mse.size()) {
      item["val_mse"] = val_concept_mse[static_cast<std::size_t>(e.concept_index)];
    }
    j["concepts"].push_back(item);
  }
  return j.dump(2);
}

void write_weights_csv(const std::string& path, const EffectiveWeightMatrix& weights,
                       const std::vector<std::string>& concept_names, const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "concept";
  int cols = weights.m.empty() ? 0 : static_cast<int>(weights.m[0].size());
  for (int t = 0; t < cols; ++t) out << ',' << vocab.token(t);
  out << '\n';
  for (int i = 0; i < weights.k(); ++i) {
    out << concept_names.at(static_cast<std::size_t>(i));
    for (int t = 0; t < cols; ++t) out << ',' << weights.at(i, t);
    out << '\n';
  }
}

std::string weights_to_json(const EffectiveWeightMatrix& weights,
                            const std::vector<std::string>& concept_names,
                            const Vocabulary& vocab) {
  nlohmann::json j;
  int cols = weights.m.empty() ? 0 : static_cast<int>(weights.m[0].size());
  std::vector<std::string> tokens;
  for (int t = 0; t < cols; ++t) tokens.push_back(vocab.token(t));
  j["tokens"] = tokens;
  j["concepts"] = concept_names;
  j["weights"] = weights.m;
  return j.dump(2);
}

}  // namespace cblm::interpret
