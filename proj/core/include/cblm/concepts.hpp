#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cblm::concepts {

// Residue-indexed tables, all keyed by the canonical alphabetical index
// (A=0 ... Y=19) used throughout.
struct PropertyTables {
  std::array<double, 20> kyte_doolittle{};
  std::array<double, 20> hopp_woods{};
  std::array<double, 20> emini_surface{};
  std::array<double, 20> residue_mass{};
  double water_mass = 0.0;

  double pka_n_term = 0.0;
  double pka_c_term = 0.0;
  // Side-chain pKa per canonical residue; nan-free: has_pka gates use.
  std::array<double, 20> side_pka{};
  std::array<bool, 20> side_positive{};
  std::array<bool, 20> has_pka{};

  // Dipeptide instability weights, [first][second].
  std::array<std::array<double, 20>, 20> diwv{};

  static PropertyTables load(const std::string& dir);
  static const PropertyTables& standard();
};

// Index into the canonical alphabet, or -1 for non-canonical characters.
int canonical_index(char residue);

// Keeps only the 20 canonical residues (uppercased). Throws
// EmptyAfterFilterError when nothing remains.
std::string filter_canonical(const std::string& seq);

struct StructureFractions {
  double helix = 0.0;
  double turn = 0.0;
  double sheet = 0.0;
};

struct ExtinctionCoefficients {
  double reduced = 0.0;
  double oxidized = 0.0;
};

double gravy(const std::string& seq, const PropertyTables& t = PropertyTables::standard());
double aromaticity(const std::string& seq);
double charge_at_ph(const std::string& seq, double ph,
                    const PropertyTables& t = PropertyTables::standard());
double isoelectric_point(const std::string& seq,
                         const PropertyTables& t = PropertyTables::standard());
double molecular_weight(const std::string& seq,
                        const PropertyTables& t = PropertyTables::standard());
double instability_index(const std::string& seq,
                         const PropertyTables& t = PropertyTables::standard());
StructureFractions secondary_structure_fractions(const std::string& seq);
ExtinctionCoefficients molar_extinction(const std::string& seq);
double scale_average(const std::string& seq, const std::array<double, 20>& scale);

enum class ConceptKind { real_valued, categorical };

struct ConceptInfo {
  std::string name;
  ConceptKind kind = ConceptKind::real_valued;
};

// Ordered concept list: the 14 built-in sequence properties always come
// first, in a fixed order; categorical concepts may be appended.
class ConceptRegistry {
 public:
  static constexpr int kBuiltinCount = 14;
  static ConceptRegistry builtin();

  void add_categorical(const std::string& name);
  int k() const { return static_cast<int>(entries_.size()); }
  int index_of(const std::string& name) const;
  const ConceptInfo& info(int i) const { return entries_.at(static_cast<std::size_t>(i)); }
  const std::vector<ConceptInfo>& entries() const { return entries_; }

  std::vector<std::string> names() const;

 private:
  std::vector<ConceptInfo> entries_;
};

struct ConceptVector {
  std::vector<double> values;
  std::vector<char> observed;
  bool normalized = false;

  int k() const { return static_cast<int>(values.size()); }
};

// Computes the 14 built-in concepts; categorical entries come from
// `annotations` (name -> value) when provided, otherwise stay unobserved.
ConceptVector compute_all(const std::string& seq, const ConceptRegistry& registry,
                          const std::map<std::string, double>* annotations = nullptr,
                          const PropertyTables& t = PropertyTables::standard());

struct NormalizationStats {
  std::vector<double> min;
  std::vector<double> max;
  std::vector<char> degenerate;

  int k() const { return static_cast<int>(min.size()); }
};

NormalizationStats fit_normalization(const std::vector<ConceptVector>& corpus);

// Affine map (v-min)/(max-min); out-of-range inputs are clipped to [0,1].
// Degenerate concepts throw unless clip_degenerate is set (then map to 0).
ConceptVector normalize(const ConceptVector& cv, const NormalizationStats& stats,
                        bool clip_degenerate = false);
ConceptVector denormalize(const ConceptVector& cv, const NormalizationStats& stats);

// Per-header categorical annotations parsed from a TSV with a header row:
// first column is the FASTA header key, remaining columns are concept names.
std::map<std::string, std::map<std::string, double>> parse_annotations(
    const std::string& path, std::vector<std::string>* concept_names = nullptr);

}  // namespace cblm::concepts
