#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cblm/concepts.hpp"
#include "cblm/seqio.hpp"

namespace cblm::corpus {

// One sequence with its concept labels. `concepts` holds raw calculator
// values until normalize_corpus runs, normalized [0,1] values afterwards.
struct LabeledSequence {
  std::string id;
  std::string sequence;
  seqio::TokenSequence tokens;
  concepts::ConceptVector concepts;
};

using Corpus = std::vector<LabeledSequence>;

// Computes concept labels for a set of records. Annotation maps are keyed by
// record id and cover categorical concepts only.
Corpus build_corpus(
    const std::vector<seqio::FastaRecord>& records,
    const concepts::ConceptRegistry& registry,
    const std::map<std::string, std::map<std::string, double>>* annotations = nullptr);

concepts::NormalizationStats fit_stats(const Corpus& corpus);

// Replaces raw concept values with their [0,1] images. Degenerate concepts
// clip to 0; callers that want the error instead should normalize per
// sequence themselves.
void normalize_corpus(Corpus& corpus, const concepts::NormalizationStats& stats);

// Fills LabeledSequence::tokens; sequences longer than max_len - 2 truncate.
void tokenize_corpus(Corpus& corpus, int max_len);

// Deterministic 10% validation tail by index: first element of the result
// views the training span, second the validation span.
std::pair<Corpus, Corpus> split_validation(const Corpus& corpus);

// JSON-lines persistence. The first line is a header carrying the concept
// names; each further line is one sequence with raw values.
void write_corpus(const std::string& path, const Corpus& corpus,
                  const std::vector<std::string>& concept_names);
Corpus read_corpus(const std::string& path, std::vector<std::string>* concept_names = nullptr);

void write_stats(const std::string& path, const concepts::NormalizationStats& stats,
                 const std::vector<std::string>& concept_names);
concepts::NormalizationStats read_stats(const std::string& path,
                                        std::vector<std::string>* concept_names = nullptr);

}  // namespace cblm::corpus
