#pragma once

#include <string>

#include "cblm/model.hpp"
#include "cblm/rng.hpp"

namespace bench {

// The desk-scale shape used throughout: small enough for a single core,
// large enough that per-step costs resemble real training.
inline cblm::model::ModelConfig desk_config(int max_len = 64) {
  cblm::model::ModelConfig cfg;
  cfg.layers = 2;
  cfg.d = 64;
  cfg.heads = 4;
  cfg.max_len = max_len;
  return cfg;
}

inline std::string random_protein(int len, std::uint64_t seed) {
  static constexpr char kAlphabet[] = "ACDEFGHIKLMNPQRSTVWY";
  cblm::Rng rng = cblm::Rng::derive(seed, "bench", 0, 0);
  std::string s;
  s.reserve(len);
  for (int i = 0; i < len; ++i) s.push_back(kAlphabet[rng.below(20)]);
  return s;
}

}  // namespace bench
