#pragma once

#include <cstdint>
#include <iosfwd>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cblm/rng.hpp"
#include "cblm/vocab.hpp"

namespace cblm::seqio {

// A framed token sequence: [CLS] residues... [EOS] [PAD]...
// Immutable after construction.
struct TokenSequence {
  std::vector<int> ids;

  int length() const { return static_cast<int>(ids.size()); }
  // Index of the first PAD, or length() when there is none.
  int pad_start() const;
  // Index of the [EOS] token; throws InvalidSequenceError on bad framing.
  int eos_index() const;
  // Number of residue positions (between CLS and EOS).
  int residue_count() const { return eos_index() - 1; }
  // Frame length without padding: CLS + residues + EOS.
  int frame_length() const { return eos_index() + 1; }

  // Throws InvalidSequenceError unless the framing invariants hold:
  // ids[0] = CLS, exactly one EOS before any PAD, no CLS/EOS elsewhere.
  void validate(const Vocabulary& vocab) const;
};

struct MaskPlan {
  std::set<int> positions;  // indices into TokenSequence.ids
  double rate = 0.0;
};

struct FastaRecord {
  std::string header;
  std::string sequence;
};

// CLS + residues + EOS, padded with PAD up to max_len. Sequences longer
// than max_len - 2 residues are truncated. Characters outside the
// vocabulary map to [UNK].
TokenSequence tokenize(const std::string& sequence, int max_len,
                       const Vocabulary& vocab = Vocabulary::standard());

// Residues between CLS and EOS; [MASK] renders as '?'.
std::string detokenize(const TokenSequence& ts,
                       const Vocabulary& vocab = Vocabulary::standard());

// '>'-header records, multi-line sequences concatenated, whitespace
// stripped, '*' terminators removed. CRLF and LF input parse identically.
// A sequence line before any header is a FormatError. Records with empty
// sequences are kept; `warnings` (when given) collects a note per empty one.
std::vector<FastaRecord> parse_fasta(std::istream& in,
                                     std::vector<std::string>* warnings = nullptr);
std::vector<FastaRecord> parse_fasta_file(const std::string& path,
                                          std::vector<std::string>* warnings = nullptr);

// Replaces exactly the planned positions with [MASK]. The plan never
// touches CLS/EOS/PAD.
std::pair<TokenSequence, MaskPlan> apply_mask(const TokenSequence& ts,
                                              const MaskPlan& plan,
                                              const Vocabulary& vocab = Vocabulary::standard());

// Draws a plan of max(1, round(rate * residue_count)) residue positions,
// deterministic for a given seed, then applies it.
std::pair<TokenSequence, MaskPlan> apply_mask(const TokenSequence& ts, double rate,
                                              std::uint64_t rng_seed,
                                              const Vocabulary& vocab = Vocabulary::standard());

// A residue frequency profile over the 20 canonical amino acids,
// in the order Vocabulary::canonical_letters().
using ResidueProfile = std::array<double, 20>;

ResidueProfile uniform_profile();

// n sequences with lengths uniform in [len_range.first, len_range.second]
// and residues drawn i.i.d. from the profile. Deterministic per seed.
// The profile must sum to 1 within 1e-6 (InvalidProfileError otherwise).
std::vector<std::string> generate_synthetic_corpus(int n, std::pair<int, int> len_range,
                                                   const ResidueProfile& bias,
                                                   std::uint64_t seed);

// Heterogeneous corpus: each sequence draws its own residue profile from a
// Dirichlet(concentration * 20 * base) around `base`, which widens the
// per-sequence spread of composition-driven properties. concentration <= 0
// degenerates to the fixed-profile generator above.
std::vector<std::string> generate_mixture_corpus(int n, std::pair<int, int> len_range,
                                                 const ResidueProfile& base,
                                                 double concentration,
                                                 std::uint64_t seed);

}  // namespace cblm::seqio
