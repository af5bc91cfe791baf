#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

namespace cblm::seqio {

// 33-token protein vocabulary. Layout is fixed:
//   0 [CLS], 1 [PAD], 2 [EOS], 3 [UNK], 4..23 the canonical amino acids in
//   alphabetical order, 24..30 the non-canonical residues X B U Z O . -,
//   31 [NULL] (reserved filler), 32 [MASK].
class Vocabulary {
 public:
  static constexpr int kCls = 0;
  static constexpr int kPad = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kMask = 32;
  static constexpr int kSize = 33;

  // The built-in layout described above.
  static const Vocabulary& standard();

  // Reads a vocab file: one token per line, line number = id.
  static Vocabulary from_file(const std::string& path);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_[static_cast<std::size_t>(id)]; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Returns the id for a token string, or -1 when absent.
  int id(const std::string& token) const;
  // Single-character residue lookup; unknown characters map to [UNK].
  int residue_id(char c) const;

  bool is_special(int id) const {
    return id == kCls || id == kPad || id == kEos || id == kUnk ||
           id == kMask || token(id) == "[NULL]";
  }
  // The 20 canonical single-letter amino acids.
  bool is_canonical(int id) const;
  static const std::array<char, 20>& canonical_letters();

 private:
  explicit Vocabulary(std::vector<std::string> tokens);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> lookup_;
  std::array<int, 256> residue_lookup_{};
};

}  // namespace cblm::seqio
