#include "cblm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "json.hpp"

#include "cblm/errors.hpp"
#include "cblm/vocab.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian float32");

namespace cblm::train {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'B', 'L', 'M', 'C', 'K', 'P', 'T'};
constexpr int kFormatVersion = 1;

json config_to_json(const model::ModelConfig& cfg) {
  json j;
  j["layers"] = cfg.layers;
  j["d"] = cfg.d;
  j["heads"] = cfg.heads;
  j["intermediate"] = cfg.intermediate;
  j["max_len"] = cfg.max_len;
  j["vocab_size"] = cfg.vocab_size;
  j["k"] = cfg.k;
  j["concept_emb_dim"] = cfg.concept_emb_dim;
  j["variant"] = model::variant_name(cfg.variant);
  j["embedding_noise_sigma"] = cfg.embedding_noise_sigma;
  j["seed"] = cfg.seed;
  j["final_norm"] = cfg.final_norm;
  j["concept_pool"] = cfg.concept_pool == model::ConceptPool::mean ? "mean" : "cls";
  j["ln_eps"] = cfg.ln_eps;
  j["rope_base"] = cfg.rope_base;
  return j;
}

model::ModelConfig config_from_json(const json& j) {
  static const std::set<std::string> known = {
      "layers",       "d",         "heads",      "intermediate",
      "max_len",      "vocab_size", "k",         "concept_emb_dim",
      "variant",      "embedding_noise_sigma",   "seed",
      "final_norm",   "concept_pool",            "ln_eps",
      "rope_base"};
  for (const auto& [key, _] : j.items()) {
    if (known.count(key) == 0) throw ConfigError("unknown model config key: " + key);
  }
  model::ModelConfig cfg;
  cfg.layers = j.value("layers", cfg.layers);
  cfg.d = j.value("d", cfg.d);
  cfg.heads = j.value("heads", cfg.heads);
  cfg.intermediate = j.value("intermediate", cfg.intermediate);
  cfg.max_len = j.value("max_len", cfg.max_len);
  cfg.vocab_size = j.value("vocab_size", cfg.vocab_size);
  cfg.k = j.value("k", cfg.k);
  cfg.concept_emb_dim = j.value("concept_emb_dim", cfg.concept_emb_dim);
  if (j.contains("variant")) {
    cfg.variant = model::variant_from_name(j["variant"].get<std::string>());
  }
  cfg.embedding_noise_sigma = j.value("embedding_noise_sigma", cfg.embedding_noise_sigma);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.final_norm = j.value("final_norm", cfg.final_norm);
  if (j.contains("concept_pool")) {
    std::string pool = j["concept_pool"].get<std::string>();
    if (pool == "cls") {
      cfg.concept_pool = model::ConceptPool::cls;
    } else if (pool == "mean") {
      cfg.concept_pool = model::ConceptPool::mean;
    } else {
      throw ConfigError("unknown concept_pool: " + pool);
    }
  }
  cfg.ln_eps = j.value("ln_eps", cfg.ln_eps);
  cfg.rope_base = j.value("rope_base", cfg.rope_base);
  cfg.validate();
  return cfg;
}

const char* kind_name(concepts::ConceptKind k) {
  return k == concepts::ConceptKind::categorical ? "categorical" : "real";
}

}  // namespace

model::ModelConfig parse_model_config(const std::string& json_text) {
  json j = json::parse(json_text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ConfigError("model config is not a JSON object");
  }
  return config_from_json(j);
}

std::string render_model_config(const model::ModelConfig& cfg) {
  return config_to_json(cfg).dump(2);
}

void save_checkpoint(const model::CbModelF& m, const CheckpointExtras& extras,
                     const std::string& path) {
  json header;
  header["format_version"] = kFormatVersion;
  header["model"] = config_to_json(m.config());

  json reg = json::array();
  for (const auto& info : extras.registry.entries()) {
    reg.push_back({{"name", info.name}, {"kind", kind_name(info.kind)}});
  }
  header["registry"] = reg;

  header["stats"]["min"] = extras.stats.min;
  header["stats"]["max"] = extras.stats.max;
  std::vector<int> deg(extras.stats.degenerate.begin(), extras.stats.degenerate.end());
  header["stats"]["degenerate"] = deg;
  header["max_activation"] = extras.max_activation;

  const auto& vocab = seqio::Vocabulary::standard();
  std::vector<std::string> tokens;
  for (int i = 0; i < vocab.size(); ++i) tokens.push_back(vocab.token(i));
  header["vocab"] = tokens;

  json dir = json::array();
  std::uint64_t offset = 0;
  for (const auto& p : m.params()) {
    dir.push_back({{"name", p.name},
                   {"rows", p.value.rows},
                   {"cols", p.value.cols},
                   {"offset", offset}});
    offset += p.value.size() * sizeof(float);
  }
  header["tensors"] = dir;
  header["payload_bytes"] = offset;

  std::string htext = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(kMagic, sizeof(kMagic));
  std::uint64_t hsize = htext.size();
  out.write(reinterpret_cast<const char*>(&hsize), sizeof(hsize));
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& p : m.params()) {
    out.write(reinterpret_cast<const char*>(p.value.v.data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(float)));
  }
  if (!out) throw IoError("write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (blob.size() < sizeof(kMagic) + sizeof(std::uint64_t)) {
    throw CorruptCheckpointError(path + ": file too short");
  }
  if (std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CorruptCheckpointError(path + ": bad magic");
  }
  std::uint64_t hsize = 0;
  std::memcpy(&hsize, blob.data() + sizeof(kMagic), sizeof(hsize));
  std::size_t header_start = sizeof(kMagic) + sizeof(std::uint64_t);
  if (blob.size() < header_start + hsize) {
    throw CorruptCheckpointError(path + ": truncated header");
  }

  json header = json::parse(blob.substr(header_start, hsize), nullptr, false);
  if (header.is_discarded()) throw CorruptCheckpointError(path + ": unreadable header");

  int version = header.value("format_version", -1);
  if (version != kFormatVersion) {
    throw CorruptCheckpointError(path + ": unsupported checkpoint version " +
                                 std::to_string(version) + " (this build reads " +
                                 std::to_string(kFormatVersion) + ")");
  }

  model::ModelConfig cfg;
  try {
    cfg = config_from_json(header.at("model"));
  } catch (const Error& err) {
    throw CorruptCheckpointError(path + ": bad model config: " + err.what());
  }

  LoadedCheckpoint loaded{model::CbModelF(cfg), CheckpointExtras{}};

  const auto& vocab = seqio::Vocabulary::standard();
  auto tokens = header.at("vocab").get<std::vector<std::string>>();
  if (static_cast<int>(tokens.size()) != vocab.size()) {
    throw CorruptCheckpointError(path + ": vocabulary size mismatch");
  }
  for (int i = 0; i < vocab.size(); ++i) {
    if (tokens[static_cast<std::size_t>(i)] != vocab.token(i)) {
      throw CorruptCheckpointError(path + ": vocabulary mismatch at id " + std::to_string(i));
    }
  }

  auto reg = concepts::ConceptRegistry::builtin();
  const auto& rj = header.at("registry");
  if (rj.size() < static_cast<std::size_t>(concepts::ConceptRegistry::kBuiltinCount)) {
    throw CorruptCheckpointError(path + ": registry smaller than the built-in set");
  }
  for (std::size_t i = 0; i < rj.size(); ++i) {
    std::string name = rj[i].at("name").get<std::string>();
    std::string kind = rj[i].at("kind").get<std::string>();
    if (i < static_cast<std::size_t>(concepts::ConceptRegistry::kBuiltinCount)) {
      if (reg.info(static_cast<int>(i)).name != name || kind != "real") {
        throw CorruptCheckpointError(path + ": built-in registry entry mismatch: " + name);
      }
    } else {
      if (kind != "categorical") {
        throw CorruptCheckpointError(path + ": non-categorical extra concept: " + name);
      }
      reg.add_categorical(name);
    }
  }
  loaded.extras.registry = reg;

  loaded.extras.stats.min = header.at("stats").at("min").get<std::vector<double>>();
  loaded.extras.stats.max = header.at("stats").at("max").get<std::vector<double>>();
  auto deg = header.at("stats").at("degenerate").get<std::vector<int>>();
  loaded.extras.stats.degenerate.assign(deg.begin(), deg.end());
  loaded.extras.max_activation =
      header.value("max_activation", std::vector<double>{});

  std::size_t payload_start = header_start + hsize;
  std::uint64_t payload_bytes = header.value("payload_bytes", std::uint64_t{0});
  if (blob.size() - payload_start != payload_bytes) {
    throw CorruptCheckpointError(path + ": payload size mismatch (expected " +
                                 std::to_string(payload_bytes) + " bytes, found " +
                                 std::to_string(blob.size() - payload_start) + ")");
  }

  std::set<std::string> seen;
  for (const auto& entry : header.at("tensors")) {
    std::string name = entry.at("name").get<std::string>();
    int rows = entry.at("rows").get<int>();
    int cols = entry.at("cols").get<int>();
    std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    if (!loaded.model.has_param(name)) {
      throw CorruptCheckpointError(path + ": unexpected tensor " + name);
    }
    auto& p = loaded.model.param(name);
    if (p.value.rows != rows || p.value.cols != cols) {
      throw CorruptCheckpointError(path + ": shape mismatch for " + name);
    }
    std::uint64_t bytes = p.value.size() * sizeof(float);
    if (offset + bytes > payload_bytes) {
      throw CorruptCheckpointError(path + ": tensor " + name + " overruns the payload");
    }
    std::memcpy(p.value.v.data(), blob.data() + payload_start + offset, bytes);
    seen.insert(name);
  }
  for (const auto& p : loaded.model.params()) {
    if (seen.count(p.name) == 0) {
      throw CorruptCheckpointError(path + ": missing tensor " + p.name);
    }
  }
  return loaded;
}

}  // namespace cblm::train
