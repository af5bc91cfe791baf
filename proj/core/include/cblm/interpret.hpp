#pragma once

#include <string>
#include <vector>

#include "cblm/concepts.hpp"
#include "cblm/model.hpp"
#include "cblm/train.hpp"

namespace cblm::interpret {

// Effective per-token weight of each concept: the concept-embedding
// contraction of the decoder columns, M[i][t] = W_dec[t, slice_i] . e_i.
// Concept i contributes exactly chat_i * M[i][t] to the logit of token t.
struct EffectiveWeightMatrix {
  std::vector<std::vector<double>> m;  // k x vocab

  int k() const { return static_cast<int>(m.size()); }
  double at(int i, int t) const {
    return m[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
  }
};

EffectiveWeightMatrix export_decoder_weights(const model::CbModelF& m);

// Additive decomposition of one position's logits: out[i][t] is concept i's
// share, computed from the chat values the decoder actually consumed. The
// remainder up to the true logit is the unknown-embedding share.
std::vector<std::vector<double>> concept_contribution(const model::CbModelF& m,
                                                      const model::ForwardResult<float>& trace,
                                                      int position);

// Amino acids ranked by how strongly they push the concept's logits:
// ascending M for a decrease ("replace with what?"), descending for an
// increase. Special tokens never appear.
std::vector<int> counterfactual_rank(const model::CbModelF& m, int concept_index, bool increase);

struct DebugEntry {
  int concept_index = 0;
  double max_abs = 0.0;
  bool flagged = false;
};

struct DebugReport {
  double threshold = 0.0;
  std::vector<DebugEntry> entries;
  std::vector<double> val_concept_mse;  // from the train report, when given

  std::vector<int> flagged() const;
  std::string to_json(const std::vector<std::string>& concept_names) const;
};

// Flags concepts whose effective weights are all essentially zero: max |M[i,.]|
// under 5% of the median row maximum. A healthy model's matrix can stand in
// as the reference; the train report contributes per-concept validation MSE.
DebugReport debug_report(const model::CbModelF& m,
                         const EffectiveWeightMatrix* healthy_reference = nullptr,
                         const train::TrainReport* report = nullptr);

void write_weights_csv(const std::string& path, const EffectiveWeightMatrix& weights,
                       const std::vector<std::string>& concept_names,
                       const seqio::Vocabulary& vocab = seqio::Vocabulary::standard());

std::string weights_to_json(const EffectiveWeightMatrix& weights,
                            const std::vector<std::string>& concept_names,
                            const seqio::Vocabulary& vocab = seqio::Vocabulary::standard());

}  // namespace cblm::interpret
