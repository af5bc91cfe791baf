#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cblm/concepts.hpp"
#include "cblm/model.hpp"
#include "cblm/seqio.hpp"

namespace cblm::intervene {

enum class AttributionMethod { occlusion, gradient, grad_x_input, grad_x_input_minus_mask, random };

const char* attribution_method_name(AttributionMethod m);
AttributionMethod attribution_method_from_name(const std::string& name);

enum class Direction { increase, decrease };

const char* direction_name(Direction d);
Direction direction_from_name(const std::string& name);

// Scores over residues only: entry r belongs to token position r+1, so CLS,
// EOS and PAD can never be selected by construction.
struct AttributionColumn {
  std::vector<double> scores;
  AttributionMethod method = AttributionMethod::occlusion;
};

// Score of residue r is the drop in the predicted concept when that one token
// is replaced by MASK. One encode per residue plus one for the base.
AttributionColumn occlusion_attribution(model::CbModelF& m, const seqio::TokenSequence& x,
                                        int concept_index);

// One forward and one backward for all residues jointly. `method` picks how
// the embedding gradient is contracted; grad_x_input_minus_mask is the
// first-order Taylor estimate of occlusion.
AttributionColumn gradient_attribution(model::CbModelF& m, const seqio::TokenSequence& x,
                                       int concept_index, AttributionMethod method);

// Uniform [0,1) scores, deterministic per seed. Baseline for method comparisons.
AttributionColumn random_attribution(const seqio::TokenSequence& x, std::uint64_t seed);

AttributionColumn attribute(model::CbModelF& m, const seqio::TokenSequence& x, int concept_index,
                            AttributionMethod method, std::uint64_t seed = 0);

// Residue indices to mask, in selection order. Increasing the concept masks
// the lowest-scoring residues (the ones suppressing it), decreasing masks the
// highest. Ties go to the lower index. count = max(1, round(fraction * residues)).
std::vector<int> select_coordinates(const AttributionColumn& a, Direction direction,
                                    double fraction);

struct InterventionRequest {
  int concept_index = 0;
  Direction direction = Direction::increase;
  // Normalized-space target for chat[concept_index]; defaults to 1 when
  // increasing and 0 when decreasing.
  std::optional<double> target;
  double mask_fraction = 0.05;
  int iterations = 1;
  AttributionMethod method = AttributionMethod::grad_x_input_minus_mask;
  bool greedy = true;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  double target_value() const {
    return target ? *target : (direction == Direction::increase ? 1.0 : 0.0);
  }
  void validate() const;
};

struct IterationOutput {
  std::string sequence;
  std::vector<int> masked_positions;  // residue indices into the sequence
};

// Optional scorer (typically the AR model's mean per-token log-likelihood)
// injected by the caller so this module stays independent of evaluation.
using NaturalnessFn = std::function<double(const seqio::TokenSequence&)>;

struct InterventionResult {
  std::string input;
  std::vector<IterationOutput> iterations;
  concepts::ConceptVector concepts_before;  // raw calculator values
  concepts::ConceptVector concepts_after;
  bool has_naturalness = false;
  double naturalness_before = 0.0;
  double naturalness_after = 0.0;

  const std::string& output() const {
    return iterations.empty() ? input : iterations.back().sequence;
  }
  std::string to_json(const concepts::ConceptRegistry& registry) const;
};

// Attribute, mask, regenerate with chat[k*] pinned to the target; repeat.
InterventionResult intervene_single(model::CbModelF& m, const concepts::ConceptRegistry& registry,
                                    const seqio::TokenSequence& x, const InterventionRequest& req,
                                    const NaturalnessFn& naturalness = {});

// Chains intervene_single over the requests, feeding each output onward.
InterventionResult intervene_multi(model::CbModelF& m, const concepts::ConceptRegistry& registry,
                                   const seqio::TokenSequence& x,
                                   const std::vector<InterventionRequest>& requests,
                                   const NaturalnessFn& naturalness = {});

// Pins chat[i] to factor times its largest training-time activation and
// regenerates a random quarter of the residues.
InterventionResult clamp_concept(model::CbModelF& m, const concepts::ConceptRegistry& registry,
                                 const seqio::TokenSequence& x, int concept_index, double factor,
                                 const std::vector<double>& max_activation, std::uint64_t seed = 0,
                                 const NaturalnessFn& naturalness = {});

// Conditional-baseline counterpart: tags carry the computed concepts of the
// input with the steered entry overridden, masked positions are chosen at
// random (these variants expose no attribution), and the model fills them.
InterventionResult steer_conditional(model::CbModelF& m, const concepts::ConceptRegistry& registry,
                                     const concepts::NormalizationStats& stats,
                                     const seqio::TokenSequence& x, const InterventionRequest& req,
                                     const NaturalnessFn& naturalness = {});

}  // namespace cblm::intervene
