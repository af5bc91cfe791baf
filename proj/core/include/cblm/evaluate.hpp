#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cblm/corpus.hpp"
#include "cblm/intervene.hpp"
#include "cblm/model.hpp"

namespace cblm::evaluate {

// exp of the pooled mean masked-token NLL. Masking is derived from the seed
// and the sequence content, so corpus order never matters. Conditional
// variants consume each record's stored concepts as tags; the autoregressive
// variant scores every next-token position and ignores mask_rate.
double perplexity(model::CbModelF& m, const corpus::Corpus& data, double mask_rate,
                  std::uint64_t seed);

// Mean per-token log-likelihood of the frame under the autoregressive
// variant. Higher is more natural; an untrained uniform model gives ln(1/33).
double naturalness(model::CbModelF& ar_model, const seqio::TokenSequence& x);

// Adapter for interventions' optional scorer.
intervene::NaturalnessFn naturalness_fn(model::CbModelF& ar_model);

// Direction-tagged normalized concept change of one intervention run.
struct ScoredIntervention {
  intervene::Direction direction = intervene::Direction::increase;
  double delta = 0.0;  // steered concept, normalized space, after - before
};

struct AccuracySummary {
  double positive = 0.0;
  double negative = 0.0;
  double mean = 0.0;
};

// Fraction of runs whose concept moved strictly in the requested direction;
// a zero change counts as failure.
AccuracySummary intervention_accuracy(const std::vector<ScoredIntervention>& runs);

// Mean of direction * delta: positive when interventions push the right way.
double mean_concept_shift(const std::vector<ScoredIntervention>& runs);

// Indices of the fraction of rows with the most room to move: lowest stored
// values for an increase, highest for a decrease. Unobserved rows are skipped.
std::vector<int> select_eval_set(const corpus::Corpus& data, int concept_index,
                                 intervene::Direction direction, double fraction = 0.2);

// Pearson correlation of stored concept values across the corpus; entries
// with a constant column are zeroed (diagonal stays 1).
std::vector<std::vector<double>> ground_truth_concept_correlation(const corpus::Corpus& data);

struct StudyOptions {
  double eval_fraction = 0.2;
  int max_per_direction = 25;  // cap on runs per concept and direction
  double mask_fraction = 0.05;
  int iterations = 1;
  intervene::AttributionMethod method = intervene::AttributionMethod::grad_x_input_minus_mask;
  std::uint64_t seed = 0;
  std::vector<int> concept_indices;  // empty = every real-valued concept
};

struct DistributionRow {
  int concept_index = 0;
  intervene::Direction direction = intervene::Direction::increase;
  double delta_concept = 0.0;      // normalized
  double delta_naturalness = 0.0;  // zero when no scorer was given
};

// One intervention sweep over the corpus: per-concept accuracies and shifts
// plus the binary correlation matrix entry(i,j) = fraction of runs where j
// moved with the intervention on i minus the fraction where it did not
// (ties count as moving against, mirroring the accuracy rule, which makes
// the diagonal exactly 2*accuracy - 1).
struct InterventionStudy {
  std::vector<std::vector<double>> matrix;  // k x k
  std::vector<double> accuracy_pos, accuracy_neg, accuracy_mean;
  std::vector<double> mean_shift;
  std::vector<DistributionRow> distribution;
  int runs_per_concept = 0;
};

// Runs the study with intervene_single on the bottleneck variant or
// steer_conditional on the conditional ones. Concepts never studied (all
// categorical entries, or outside concept_indices) keep zero rows.
InterventionStudy intervention_correlation(model::CbModelF& m,
                                           const concepts::ConceptRegistry& registry,
                                           const concepts::NormalizationStats& stats,
                                           const corpus::Corpus& data, const StudyOptions& opt,
                                           const intervene::NaturalnessFn& nat = {});

struct EvalReport {
  double perplexity = 0.0;
  InterventionStudy study;
  std::vector<std::vector<double>> ground_truth_correlation;

  std::string to_json(const std::vector<std::string>& concept_names) const;
};

struct EvalOptions {
  double mask_rate = 0.25;
  std::uint64_t seed = 0;
  bool run_interventions = true;
  StudyOptions study;
};

EvalReport evaluate_model(model::CbModelF& m, const concepts::ConceptRegistry& registry,
                          const concepts::NormalizationStats& stats, const corpus::Corpus& data,
                          const EvalOptions& opt, model::CbModelF* ar_model = nullptr);

// Delta pairs as CSV (concept, direction, delta_concept, delta_naturalness)
// for external plotting.
void write_distribution_csv(const std::string& path, const std::vector<DistributionRow>& rows,
                            const std::vector<std::string>& concept_names);

}  // namespace cblm::evaluate
