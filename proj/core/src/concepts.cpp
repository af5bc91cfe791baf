#include "cblm/concepts.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cblm/data.hpp"
#include "cblm/errors.hpp"
#include "cblm/vocab.hpp"

namespace cblm::concepts {

namespace {

constexpr const char* kCanonical = "ACDEFGHIKLMNPQRSTVWY";

std::array<int, 256> build_lookup() {
  std::array<int, 256> lut;
  lut.fill(-1);
  for (int i = 0; i < 20; ++i) {
    lut[static_cast<unsigned char>(kCanonical[i])] = i;
    lut[static_cast<unsigned char>(std::tolower(kCanonical[i]))] = i;
  }
  return lut;
}

std::vector<std::vector<std::string>> read_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open data table: " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::istringstream ss(line);
    std::string field;
    while (ss >> field) fields.push_back(field);
    if (!fields.empty()) rows.push_back(std::move(fields));
  }
  return rows;
}

std::array<double, 20> load_scale(const std::string& path) {
  std::array<double, 20> out{};
  std::array<bool, 20> seen{};
  for (const auto& row : read_tsv(path)) {
    if (row.size() != 2 || row[0].size() != 1) {
      throw FormatError("bad scale row in " + path);
    }
    int idx = canonical_index(row[0][0]);
    if (idx < 0) throw FormatError("non-canonical residue in " + path + ": " + row[0]);
    out[static_cast<std::size_t>(idx)] = std::stod(row[1]);
    seen[static_cast<std::size_t>(idx)] = true;
  }
  for (bool s : seen) {
    if (!s) throw FormatError("scale table " + path + " missing residues");
  }
  return out;
}

int count_residue(const std::string& seq, char r) {
  return static_cast<int>(std::count(seq.begin(), seq.end(), r));
}

}  // namespace

int canonical_index(char residue) {
  static const std::array<int, 256> lut = build_lookup();
  return lut[static_cast<unsigned char>(residue)];
}

std::string filter_canonical(const std::string& seq) {
  std::string out;
  out.reserve(seq.size());
  for (char c : seq) {
    int idx = canonical_index(c);
    if (idx >= 0) out.push_back(kCanonical[idx]);
  }
  if (out.empty()) throw EmptyAfterFilterError("no canonical residues in sequence");
  return out;
}

PropertyTables PropertyTables::load(const std::string& dir) {
  PropertyTables t;
  t.kyte_doolittle = load_scale(dir + "/kyte_doolittle.tsv");
  t.hopp_woods = load_scale(dir + "/hopp_woods.tsv");
  t.emini_surface = load_scale(dir + "/emini_surface.tsv");

  std::array<bool, 20> seen{};
  for (const auto& row : read_tsv(dir + "/residue_mass.tsv")) {
    if (row.size() != 2) throw FormatError("bad mass row");
    if (row[0] == "WATER") {
      t.water_mass = std::stod(row[1]);
      continue;
    }
    int idx = row[0].size() == 1 ? canonical_index(row[0][0]) : -1;
    if (idx < 0) throw FormatError("bad mass residue: " + row[0]);
    t.residue_mass[static_cast<std::size_t>(idx)] = std::stod(row[1]);
    seen[static_cast<std::size_t>(idx)] = true;
  }
  for (bool s : seen) {
    if (!s) throw FormatError("residue mass table incomplete");
  }
  if (t.water_mass <= 0.0) throw FormatError("residue mass table missing WATER");

  for (const auto& row : read_tsv(dir + "/pka.tsv")) {
    if (row.size() != 3) throw FormatError("bad pKa row");
    double pka = std::stod(row[1]);
    bool positive = row[2] == "+";
    if (!positive && row[2] != "-") throw FormatError("pKa sign must be + or -");
    if (row[0] == "N_TERM") {
      t.pka_n_term = pka;
    } else if (row[0] == "C_TERM") {
      t.pka_c_term = pka;
    } else {
      int idx = row[0].size() == 1 ? canonical_index(row[0][0]) : -1;
      if (idx < 0) throw FormatError("bad pKa residue: " + row[0]);
      t.side_pka[static_cast<std::size_t>(idx)] = pka;
      t.side_positive[static_cast<std::size_t>(idx)] = positive;
      t.has_pka[static_cast<std::size_t>(idx)] = true;
    }
  }
  if (t.pka_n_term <= 0.0 || t.pka_c_term <= 0.0) {
    throw FormatError("pKa table missing terminal groups");
  }

  double fallback = 1.0;
  std::vector<std::array<int, 2>> pairs;
  std::vector<double> weights;
  for (const auto& row : read_tsv(dir + "/diwv.tsv")) {
    if (row.size() == 2 && row[0] == "DEFAULT") {
      fallback = std::stod(row[1]);
      continue;
    }
    if (row.size() != 3 || row[0].size() != 1 || row[1].size() != 1) {
      throw FormatError("bad DIWV row");
    }
    int a = canonical_index(row[0][0]);
    int b = canonical_index(row[1][0]);
    if (a < 0 || b < 0) throw FormatError("bad DIWV residues");
    pairs.push_back({a, b});
    weights.push_back(std::stod(row[2]));
  }
  for (auto& r : t.diwv) r.fill(fallback);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    t.diwv[static_cast<std::size_t>(pairs[i][0])][static_cast<std::size_t>(pairs[i][1])] =
        weights[i];
  }
  return t;
}

const PropertyTables& PropertyTables::standard() {
  static const PropertyTables t = load(data_dir());
  return t;
}

double gravy(const std::string& seq, const PropertyTables& t) {
  return scale_average(seq, t.kyte_doolittle);
}

double aromaticity(const std::string& seq) {
  std::string s = filter_canonical(seq);
  int n = count_residue(s, 'F') + count_residue(s, 'W') + count_residue(s, 'Y');
  return static_cast<double>(n) / static_cast<double>(s.size());
}

double charge_at_ph(const std::string& seq, double ph, const PropertyTables& t) {
  std::string s = filter_canonical(seq);
  auto positive = [&](double pka, double n) { return n / (1.0 + std::pow(10.0, ph - pka)); };
  auto negative = [&](double pka, double n) { return -n / (1.0 + std::pow(10.0, pka - ph)); };
  double charge = positive(t.pka_n_term, 1.0) + negative(t.pka_c_term, 1.0);
  std::array<int, 20> counts{};
  for (char c : s) counts[static_cast<std::size_t>(canonical_index(c))] += 1;
  for (int i = 0; i < 20; ++i) {
    auto idx = static_cast<std::size_t>(i);
    if (!t.has_pka[idx] || counts[idx] == 0) continue;
    double n = counts[idx];
    charge += t.side_positive[idx] ? positive(t.side_pka[idx], n) : negative(t.side_pka[idx], n);
  }
  return charge;
}

double isoelectric_point(const std::string& seq, const PropertyTables& t) {
  double lo = 0.0, hi = 14.0;
  double mid = 7.0;
  for (int iter = 0; iter < 100; ++iter) {
    mid = 0.5 * (lo + hi);
    double c = charge_at_ph(seq, mid, t);
    if (std::abs(c) < 1e-3) break;
    if (c > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return mid;
}

double molecular_weight(const std::string& seq, const PropertyTables& t) {
  std::string s = filter_canonical(seq);
  double mw = t.water_mass;
  for (char c : s) mw += t.residue_mass[static_cast<std::size_t>(canonical_index(c))];
  return mw;
}

double instability_index(const std::string& seq, const PropertyTables& t) {
  std::string s = filter_canonical(seq);
  if (s.size() < 2) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    auto a = static_cast<std::size_t>(canonical_index(s[i]));
    auto b = static_cast<std::size_t>(canonical_index(s[i + 1]));
    sum += t.diwv[a][b];
  }
  return 10.0 / static_cast<double>(s.size()) * sum;
}

StructureFractions secondary_structure_fractions(const std::string& seq) {
  std::string s = filter_canonical(seq);
  auto frac = [&](const char* set) {
    int n = 0;
    for (char c : s) {
      if (std::strchr(set, c) != nullptr) ++n;
    }
    return static_cast<double>(n) / static_cast<double>(s.size());
  };
  StructureFractions f;
  f.helix = frac("VIYFWL");
  f.turn = frac("NPGS");
  f.sheet = frac("EMAL");
  return f;
}

ExtinctionCoefficients molar_extinction(const std::string& seq) {
  std::string s = filter_canonical(seq);
  ExtinctionCoefficients e;
  e.reduced = 5500.0 * count_residue(s, 'W') + 1490.0 * count_residue(s, 'Y');
  e.oxidized = e.reduced + 125.0 * std::floor(count_residue(s, 'C') / 2.0);
  return e;
}

double scale_average(const std::string& seq, const std::array<double, 20>& scale) {
  std::string s = filter_canonical(seq);
  double sum = 0.0;
  for (char c : s) sum += scale[static_cast<std::size_t>(canonical_index(c))];
  return sum / static_cast<double>(s.size());
}

ConceptRegistry ConceptRegistry::builtin() {
  ConceptRegistry reg;
  for (const char* name :
       {"molecular_weight", "aromaticity", "instability_index", "isoelectric_point", "gravy",
        "charge_at_ph6", "charge_at_ph7", "helix_fraction", "turn_fraction", "sheet_fraction",
        "molar_extinction_reduced", "molar_extinction_oxidized", "avg_hydrophilicity",
        "avg_surface_accessibility"}) {
    reg.entries_.push_back({name, ConceptKind::real_valued});
  }
  return reg;
}

void ConceptRegistry::add_categorical(const std::string& name) {
  if (index_of(name) >= 0) throw ConfigError("duplicate concept name: " + name);
  entries_.push_back({name, ConceptKind::categorical});
}

int ConceptRegistry::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

std::vector<std::string> ConceptRegistry::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

ConceptVector compute_all(const std::string& seq, const ConceptRegistry& registry,
                          const std::map<std::string, double>* annotations,
                          const PropertyTables& t) {
  ConceptVector cv;
  cv.values.assign(static_cast<std::size_t>(registry.k()), 0.0);
  cv.observed.assign(static_cast<std::size_t>(registry.k()), 0);
  cv.normalized = false;

  StructureFractions ss = secondary_structure_fractions(seq);
  ExtinctionCoefficients ext = molar_extinction(seq);
  const double builtins[ConceptRegistry::kBuiltinCount] = {
      molecular_weight(seq, t),
      aromaticity(seq),
      instability_index(seq, t),
      isoelectric_point(seq, t),
      gravy(seq, t),
      charge_at_ph(seq, 6.0, t),
      charge_at_ph(seq, 7.0, t),
      ss.helix,
      ss.turn,
      ss.sheet,
      ext.reduced,
      ext.oxidized,
      scale_average(seq, t.hopp_woods),
      scale_average(seq, t.emini_surface),
  };
  for (int i = 0; i < ConceptRegistry::kBuiltinCount; ++i) {
    cv.values[static_cast<std::size_t>(i)] = builtins[i];
    cv.observed[static_cast<std::size_t>(i)] = 1;
  }
  for (int i = ConceptRegistry::kBuiltinCount; i < registry.k(); ++i) {
    if (annotations == nullptr) continue;
    auto it = annotations->find(registry.info(i).name);
    if (it == annotations->end()) continue;
    cv.values[static_cast<std::size_t>(i)] = it->second;
    cv.observed[static_cast<std::size_t>(i)] = 1;
  }
  return cv;
}

NormalizationStats fit_normalization(const std::vector<ConceptVector>& corpus) {
  if (corpus.empty()) throw ConfigError("cannot fit normalization on an empty corpus");
  int k = corpus.front().k();
  NormalizationStats stats;
  stats.min.assign(static_cast<std::size_t>(k), 0.0);
  stats.max.assign(static_cast<std::size_t>(k), 0.0);
  stats.degenerate.assign(static_cast<std::size_t>(k), 1);
  std::vector<char> any(static_cast<std::size_t>(k), 0);
  for (const auto& cv : corpus) {
    if (cv.k() != k) throw ConfigError("inconsistent concept vector width");
    for (int i = 0; i < k; ++i) {
      auto idx = static_cast<std::size_t>(i);
      if (!cv.observed[idx]) continue;
      double v = cv.values[idx];
      if (!any[idx]) {
        stats.min[idx] = stats.max[idx] = v;
        any[idx] = 1;
      } else {
        stats.min[idx] = std::min(stats.min[idx], v);
        stats.max[idx] = std::max(stats.max[idx], v);
      }
    }
  }
  for (int i = 0; i < k; ++i) {
    auto idx = static_cast<std::size_t>(i);
    stats.degenerate[idx] = (!any[idx] || stats.max[idx] <= stats.min[idx]) ? 1 : 0;
  }
  return stats;
}

ConceptVector normalize(const ConceptVector& cv, const NormalizationStats& stats,
                        bool clip_degenerate) {
  if (cv.k() != stats.k()) throw ConfigError("stats width mismatch");
  ConceptVector out = cv;
  out.normalized = true;
  for (int i = 0; i < cv.k(); ++i) {
    auto idx = static_cast<std::size_t>(i);
    if (!cv.observed[idx]) {
      out.values[idx] = 0.0;
      continue;
    }
    if (stats.degenerate[idx]) {
      if (!clip_degenerate) {
        throw DegenerateConceptError("degenerate concept at index " + std::to_string(i));
      }
      out.values[idx] = 0.0;
      continue;
    }
    double v = (cv.values[idx] - stats.min[idx]) / (stats.max[idx] - stats.min[idx]);
    out.values[idx] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

ConceptVector denormalize(const ConceptVector& cv, const NormalizationStats& stats) {
  if (cv.k() != stats.k()) throw ConfigError("stats width mismatch");
  ConceptVector out = cv;
  out.normalized = false;
  for (int i = 0; i < cv.k(); ++i) {
    auto idx = static_cast<std::size_t>(i);
    if (!cv.observed[idx]) {
      out.values[idx] = 0.0;
      continue;
    }
    if (stats.degenerate[idx]) {
      throw DegenerateConceptError("degenerate concept at index " + std::to_string(i));
    }
    out.values[idx] = stats.min[idx] + cv.values[idx] * (stats.max[idx] - stats.min[idx]);
  }
  return out;
}

std::map<std::string, std::map<std::string, double>> parse_annotations(
    const std::string& path, std::vector<std::string>* concept_names) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotation file: " + path);
  std::string line;
  std::vector<std::string> names;
  std::map<std::string, std::map<std::string, double>> out;
  bool header_done = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::istringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (!header_done) {
      if (fields.size() < 2) throw FormatError("annotation header needs a key and concepts");
      names.assign(fields.begin() + 1, fields.end());
      header_done = true;
      continue;
    }
    if (fields.size() > names.size() + 1) throw FormatError("annotation row too wide");
    auto& row = out[fields[0]];
    for (std::size_t i = 1; i < fields.size(); ++i) {
      if (fields[i].empty() || fields[i] == "NA") continue;
      row[names[i - 1]] = std::stod(fields[i]);
    }
  }
  if (!header_done) throw FormatError("annotation file is empty");
  if (concept_names) *concept_names = names;
  return out;
}

}  // namespace cblm::concepts
