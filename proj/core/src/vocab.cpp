#include "cblm/vocab.hpp"

#include <fstream>

#include "cblm/errors.hpp"

namespace cblm::seqio {

namespace {

std::vector<std::string> standard_tokens() {
  std::vector<std::string> t = {"[CLS]", "[PAD]", "[EOS]", "[UNK]"};
  for (char c : Vocabulary::canonical_letters()) t.emplace_back(1, c);
  for (char c : {'X', 'B', 'U', 'Z', 'O', '.', '-'}) t.emplace_back(1, c);
  t.emplace_back("[NULL]");
  t.emplace_back("[MASK]");
  return t;
}

}  // namespace

const std::array<char, 20>& Vocabulary::canonical_letters() {
  static const std::array<char, 20> letters = {'A', 'C', 'D', 'E', 'F', 'G', 'H',
                                               'I', 'K', 'L', 'M', 'N', 'P', 'Q',
                                               'R', 'S', 'T', 'V', 'W', 'Y'};
  return letters;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  residue_lookup_.fill(kUnk);
  for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) {
    const std::string& tok = tokens_[static_cast<std::size_t>(i)];
    if (!lookup_.emplace(tok, i).second) {
      throw FormatError("duplicate vocabulary token: " + tok);
    }
    if (tok.size() == 1) {
      residue_lookup_[static_cast<unsigned char>(tok[0])] = i;
    }
  }
  for (char c : canonical_letters()) {
    if (lookup_.find(std::string(1, c)) == lookup_.end()) {
      throw FormatError(std::string("vocabulary missing canonical residue ") + c);
    }
  }
  for (const char* special : {"[CLS]", "[PAD]", "[EOS]", "[UNK]", "[MASK]"}) {
    if (lookup_.find(special) == lookup_.end()) {
      throw FormatError(std::string("vocabulary missing ") + special);
    }
  }
}

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary vocab(standard_tokens());
  return vocab;
}

Vocabulary Vocabulary::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary file: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

int Vocabulary::id(const std::string& token) const {
  auto it = lookup_.find(token);
  return it == lookup_.end() ? -1 : it->second;
}

int Vocabulary::residue_id(char c) const {
  return residue_lookup_[static_cast<unsigned char>(c)];
}

bool Vocabulary::is_canonical(int id) const {
  const std::string& tok = token(id);
  if (tok.size() != 1) return false;
  for (char c : canonical_letters()) {
    if (tok[0] == c) return true;
  }
  return false;
}

}  // namespace cblm::seqio
