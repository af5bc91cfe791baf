#include "cblm/seqio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>

#include "cblm/errors.hpp"

namespace cblm::seqio {

int TokenSequence::pad_start() const {
  for (int i = 0; i < length(); ++i) {
    if (ids[static_cast<std::size_t>(i)] == Vocabulary::kPad) return i;
  }
  return length();
}

int TokenSequence::eos_index() const {
  for (int i = 0; i < length(); ++i) {
    if (ids[static_cast<std::size_t>(i)] == Vocabulary::kEos) return i;
  }
  throw InvalidSequenceError("token sequence has no [EOS]");
}

void TokenSequence::validate(const Vocabulary& vocab) const {
  if (ids.empty() || ids[0] != Vocabulary::kCls) {
    throw InvalidSequenceError("token sequence must start with [CLS]");
  }
  int eos = -1;
  for (int i = 1; i < length(); ++i) {
    int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= vocab.size()) {
      throw InvalidSequenceError("token id out of range: " + std::to_string(id));
    }
    if (id == Vocabulary::kCls) {
      throw InvalidSequenceError("[CLS] may only appear at position 0");
    }
    if (id == Vocabulary::kEos) {
      if (eos >= 0) throw InvalidSequenceError("multiple [EOS] tokens");
      eos = i;
    } else if (id == Vocabulary::kPad) {
      if (eos < 0) throw InvalidSequenceError("[PAD] before [EOS]");
    } else if (eos >= 0) {
      throw InvalidSequenceError("non-PAD token after [EOS]");
    }
  }
  if (eos < 0) throw InvalidSequenceError("token sequence has no [EOS]");
}

TokenSequence tokenize(const std::string& sequence, int max_len, const Vocabulary& vocab) {
  if (sequence.empty()) throw InvalidSequenceError("empty sequence");
  if (max_len < 3) throw LengthError("max_len must be at least 3");
  int keep = std::min<int>(static_cast<int>(sequence.size()), max_len - 2);
  TokenSequence ts;
  ts.ids.reserve(static_cast<std::size_t>(max_len));
  ts.ids.push_back(Vocabulary::kCls);
  for (int i = 0; i < keep; ++i) {
    ts.ids.push_back(vocab.residue_id(sequence[static_cast<std::size_t>(i)]));
  }
  ts.ids.push_back(Vocabulary::kEos);
  while (ts.length() < max_len) ts.ids.push_back(Vocabulary::kPad);
  return ts;
}

std::string detokenize(const TokenSequence& ts, const Vocabulary& vocab) {
  ts.validate(vocab);
  int eos = ts.eos_index();
  std::string out;
  out.reserve(static_cast<std::size_t>(eos));
  for (int i = 1; i < eos; ++i) {
    int id = ts.ids[static_cast<std::size_t>(i)];
    if (id == Vocabulary::kMask) {
      out.push_back('?');
    } else {
      const std::string& tok = vocab.token(id);
      out.push_back(tok.size() == 1 ? tok[0] : 'X');
    }
  }
  return out;
}

namespace {

void strip_sequence_line(std::string* line) {
  std::string out;
  out.reserve(line->size());
  for (char c : *line) {
    if (std::isspace(static_cast<unsigned char>(c)) || c == '*') continue;
    out.push_back(c);
  }
  *line = std::move(out);
}

}  // namespace

std::vector<FastaRecord> parse_fasta(std::istream& in, std::vector<std::string>* warnings) {
  std::vector<FastaRecord> records;
  std::string line;
  bool have_header = false;
  auto finish = [&] {
    if (have_header && records.back().sequence.empty() && warnings) {
      warnings->push_back("empty sequence for record '" + records.back().header + "'");
    }
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '>') {
      finish();
      FastaRecord rec;
      rec.header = line.substr(1);
      // trim surrounding whitespace from the header
      auto b = rec.header.find_first_not_of(" \t");
      auto e = rec.header.find_last_not_of(" \t");
      rec.header = b == std::string::npos ? "" : rec.header.substr(b, e - b + 1);
      records.push_back(std::move(rec));
      have_header = true;
    } else {
      if (!have_header) throw FormatError("sequence line before any FASTA header");
      strip_sequence_line(&line);
      records.back().sequence += line;
    }
  }
  finish();
  return records;
}

std::vector<FastaRecord> parse_fasta_file(const std::string& path,
                                          std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open FASTA file: " + path);
  return parse_fasta(in, warnings);
}

std::pair<TokenSequence, MaskPlan> apply_mask(const TokenSequence& ts, const MaskPlan& plan,
                                              const Vocabulary& vocab) {
  ts.validate(vocab);
  int eos = ts.eos_index();
  TokenSequence masked = ts;
  for (int pos : plan.positions) {
    if (pos <= 0 || pos >= eos) {
      throw NothingToMaskError("mask position " + std::to_string(pos) +
                               " touches CLS/EOS/PAD");
    }
    masked.ids[static_cast<std::size_t>(pos)] = Vocabulary::kMask;
  }
  return {std::move(masked), plan};
}

std::pair<TokenSequence, MaskPlan> apply_mask(const TokenSequence& ts, double rate,
                                              std::uint64_t rng_seed, const Vocabulary& vocab) {
  ts.validate(vocab);
  if (rate <= 0.0 || rate > 1.0) {
    throw NothingToMaskError("mask rate must be in (0, 1]");
  }
  int residues = ts.residue_count();
  if (residues <= 0) throw NothingToMaskError("sequence has no maskable positions");
  int count = std::max(1, static_cast<int>(std::lround(rate * residues)));
  count = std::min(count, residues);

  Rng rng = Rng::derive(rng_seed, "mask-plan");
  std::vector<int> order = rng.permutation(residues);
  MaskPlan plan;
  plan.rate = rate;
  for (int i = 0; i < count; ++i) plan.positions.insert(order[static_cast<std::size_t>(i)] + 1);
  return apply_mask(ts, plan, vocab);
}

ResidueProfile uniform_profile() {
  ResidueProfile p;
  p.fill(1.0 / 20.0);
  return p;
}

namespace {

void check_profile(const ResidueProfile& profile) {
  double sum = 0.0;
  for (double v : profile) {
    if (v < 0.0) throw InvalidProfileError("negative residue frequency");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    std::ostringstream msg;
    msg << "residue profile sums to " << sum << ", expected 1";
    throw InvalidProfileError(msg.str());
  }
}

char sample_residue(const ResidueProfile& profile, Rng& rng) {
  double u = rng.uniform();
  double acc = 0.0;
  for (int i = 0; i < 20; ++i) {
    acc += profile[static_cast<std::size_t>(i)];
    if (u < acc) return Vocabulary::canonical_letters()[static_cast<std::size_t>(i)];
  }
  return Vocabulary::canonical_letters()[19];
}

// Marsaglia-Tsang gamma sampling; shape > 0.
double sample_gamma(double shape, Rng& rng) {
  if (shape < 1.0) {
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    return sample_gamma(shape + 1.0, rng) * std::pow(u, 1.0 / shape);
  }
  double d = shape - 1.0 / 3.0;
  double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = rng.gaussian();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

}  // namespace

std::vector<std::string> generate_synthetic_corpus(int n, std::pair<int, int> len_range,
                                                   const ResidueProfile& bias,
                                                   std::uint64_t seed) {
  return generate_mixture_corpus(n, len_range, bias, 0.0, seed);
}

std::vector<std::string> generate_mixture_corpus(int n, std::pair<int, int> len_range,
                                                 const ResidueProfile& base,
                                                 double concentration, std::uint64_t seed) {
  if (n < 1) throw InvalidProfileError("corpus size must be >= 1");
  if (len_range.first < 2 || len_range.second < len_range.first) {
    throw LengthError("length range must satisfy 2 <= lo <= hi");
  }
  check_profile(base);

  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::derive(seed, "synthetic-seq", static_cast<std::uint64_t>(i));
    ResidueProfile profile = base;
    if (concentration > 0.0) {
      double total = 0.0;
      for (int a = 0; a < 20; ++a) {
        double alpha = concentration * 20.0 * base[static_cast<std::size_t>(a)];
        double g = alpha > 0.0 ? sample_gamma(alpha, rng) : 0.0;
        profile[static_cast<std::size_t>(a)] = g;
        total += g;
      }
      if (total <= 0.0) {
        profile = base;
      } else {
        for (double& v : profile) v /= total;
      }
    }
    int span = len_range.second - len_range.first + 1;
    int len = len_range.first + static_cast<int>(rng.below(static_cast<std::uint64_t>(span)));
    std::string seq;
    seq.reserve(static_cast<std::size_t>(len));
    for (int j = 0; j < len; ++j) seq.push_back(sample_residue(profile, rng));
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace cblm::seqio
