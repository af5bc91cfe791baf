// Command-line front end: prepare | train | eval | intervene | attribute |
// inspect, driven by one JSON run configuration plus dotted --set overrides.
// Typed failures print a one-line JSON record to stderr and exit 1;
// anything unexpected exits 2.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cblm/checkpoint.hpp"
#include "cblm/concepts.hpp"
#include "cblm/corpus.hpp"
#include "cblm/errors.hpp"
#include "cblm/evaluate.hpp"
#include "cblm/interpret.hpp"
#include "cblm/intervene.hpp"
#include "cblm/model.hpp"
#include "cblm/seqio.hpp"
#include "cblm/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void strict_keys(const json& obj, const std::string& where,
                 std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw cblm::ConfigError(where + " must be a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& item : obj.items()) {
    if (!ok.count(item.key())) {
      throw cblm::ConfigError("unknown config key: " + where + "." + item.key());
    }
  }
}

json section(const json& cfg, const char* name) {
  if (!cfg.contains(name)) return json::object();
  const json& s = cfg.at(name);
  if (!s.is_object()) throw cblm::ConfigError(std::string(name) + " must be a JSON object");
  return s;
}

template <typename T>
T field(const json& obj, const std::string& where, const char* key, const T& def) {
  if (!obj.contains(key)) return def;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw cblm::ConfigError("bad value for " + where + "." + key);
  }
}

std::string need_string(const json& obj, const std::string& where, const char* key) {
  if (!obj.contains(key)) throw cblm::ConfigError("missing required key " + where + "." + key);
  try {
    return obj.at(key).get<std::string>();
  } catch (const json::exception&) {
    throw cblm::ConfigError("bad value for " + where + "." + key);
  }
}

// "a.b.c=value" -> cfg["a"]["b"]["c"] = parsed value (JSON if it parses,
// bare string otherwise).
void apply_override(json& cfg, const std::string& spec) {
  auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw cblm::ConfigError("--set expects key=value, got: " + spec);
  }
  std::string path = spec.substr(0, eq);
  std::string raw = spec.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &cfg;
  std::size_t start = 0;
  while (true) {
    auto dot = path.find('.', start);
    std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw cblm::ConfigError("--set path has an empty segment: " + path);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    json& next = (*node)[key];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) {
      throw cblm::ConfigError("--set path crosses a non-object value at " + key);
    }
    node = &next;
    start = dot + 1;
  }
}

fs::path out_path(const fs::path& out_dir, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : out_dir / path;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw cblm::IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw cblm::IoError("failed writing " + path.string());
}

// The corpus header must start with the builtin concepts in order; anything
// after them becomes a categorical entry.
cblm::concepts::ConceptRegistry registry_from_names(const std::vector<std::string>& names) {
  auto reg = cblm::concepts::ConceptRegistry::builtin();
  auto base = reg.names();
  if (names.size() < base.size()) {
    throw cblm::FormatError("corpus lists fewer concepts than the builtin set");
  }
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (names[i] != base[i]) {
      throw cblm::FormatError("corpus concept '" + names[i] + "' where '" + base[i] +
                              "' was expected");
    }
  }
  for (std::size_t i = base.size(); i < names.size(); ++i) reg.add_categorical(names[i]);
  return reg;
}

int concept_index(const cblm::concepts::ConceptRegistry& registry, const std::string& name) {
  int idx = registry.index_of(name);
  if (idx < 0) throw cblm::ConfigError("unknown concept: " + name);
  return idx;
}

// Sequences whose frame (plus tag rows for the conditional variants) cannot
// fit the model are dropped; training or evaluating on a silent truncation
// would mislabel every concept.
int drop_overlong(cblm::corpus::Corpus& data, const cblm::model::ModelConfig& cfg, int k) {
  bool conditional =
      cfg.variant == cblm::model::Variant::C || cfg.variant == cblm::model::Variant::CC;
  int capacity = cfg.max_len - 2 - (conditional ? k : 0);
  auto keep_end = std::remove_if(data.begin(), data.end(), [&](const auto& row) {
    return static_cast<int>(row.sequence.size()) > capacity;
  });
  int dropped = static_cast<int>(data.end() - keep_end);
  data.erase(keep_end, data.end());
  if (data.empty()) {
    throw cblm::EmptyAfterFilterError("no sequence fits the model frame (capacity " +
                                      std::to_string(capacity) + " residues)");
  }
  return dropped;
}

struct LoadedAr {
  std::unique_ptr<cblm::train::LoadedCheckpoint> ckpt;
  cblm::intervene::NaturalnessFn fn;
};

LoadedAr load_ar(const std::string& path) {
  LoadedAr ar;
  ar.ckpt = std::make_unique<cblm::train::LoadedCheckpoint>(cblm::train::load_checkpoint(path));
  if (ar.ckpt->model.config().variant != cblm::model::Variant::AR) {
    throw cblm::VariantError("naturalness scoring needs an AR checkpoint, got " +
                             std::string(cblm::model::variant_name(ar.ckpt->model.config().variant)));
  }
  ar.fn = cblm::evaluate::naturalness_fn(ar.ckpt->model);
  return ar;
}

void check_sequence_fits(const std::string& seq, const cblm::model::ModelConfig& cfg) {
  if (static_cast<int>(seq.size()) > cfg.max_len - 2) {
    throw cblm::LengthError("sequence of " + std::to_string(seq.size()) +
                            " residues exceeds the model frame of " +
                            std::to_string(cfg.max_len - 2));
  }
}

int cmd_prepare(const json& cfg, const fs::path& out_dir, std::uint64_t seed) {
  json sec = section(cfg, "prepare");
  strict_keys(sec, "prepare", {"fasta", "annotations", "synthetic", "corpus", "stats"});
  bool has_fasta = sec.contains("fasta");
  bool has_synth = sec.contains("synthetic");
  if (has_fasta == has_synth) {
    throw cblm::ConfigError("prepare needs exactly one of prepare.fasta or prepare.synthetic");
  }

  auto registry = cblm::concepts::ConceptRegistry::builtin();
  std::map<std::string, std::map<std::string, double>> annotations;
  bool has_annotations = sec.contains("annotations");
  if (has_annotations) {
    std::vector<std::string> categorical;
    annotations =
        cblm::concepts::parse_annotations(need_string(sec, "prepare", "annotations"), &categorical);
    for (const auto& name : categorical) registry.add_categorical(name);
  }

  std::vector<cblm::seqio::FastaRecord> records;
  std::vector<std::string> warnings;
  if (has_fasta) {
    records = cblm::seqio::parse_fasta_file(need_string(sec, "prepare", "fasta"), &warnings);
  } else {
    json syn = sec.at("synthetic");
    strict_keys(syn, "prepare.synthetic", {"count", "min_len", "max_len", "concentration"});
    int count = field(syn, "prepare.synthetic", "count", 1000);
    int min_len = field(syn, "prepare.synthetic", "min_len", 16);
    int max_len = field(syn, "prepare.synthetic", "max_len", 48);
    double concentration = field(syn, "prepare.synthetic", "concentration", 0.3);
    if (count <= 0) throw cblm::ConfigError("prepare.synthetic.count must be positive");
    auto seqs = cblm::seqio::generate_mixture_corpus(count, {min_len, max_len},
                                                     cblm::seqio::uniform_profile(),
                                                     concentration, seed);
    records.reserve(seqs.size());
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      records.push_back({"syn" + std::to_string(i), std::move(seqs[i])});
    }
  }

  auto corpus = cblm::corpus::build_corpus(records, registry,
                                           has_annotations ? &annotations : nullptr);
  auto stats = cblm::corpus::fit_stats(corpus);

  fs::path corpus_path = out_path(out_dir, field<std::string>(sec, "prepare", "corpus", "corpus.jsonl"));
  fs::path stats_path = out_path(out_dir, field<std::string>(sec, "prepare", "stats", "stats.json"));
  cblm::corpus::write_corpus(corpus_path.string(), corpus, registry.names());
  cblm::corpus::write_stats(stats_path.string(), stats, registry.names());

  json summary{{"sequences", corpus.size()},
               {"concepts", registry.k()},
               {"corpus", corpus_path.string()},
               {"stats", stats_path.string()}};
  if (!warnings.empty()) summary["warnings"] = warnings;
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_train(const json& cfg, const fs::path& out_dir, std::uint64_t seed) {
  auto model_cfg = cblm::train::parse_model_config(section(cfg, "model").dump());
  json sec = section(cfg, "train");
  strict_keys(sec, "train",
              {"corpus", "stats", "checkpoint", "report", "steps", "batch_size", "mask_rate",
               "learning_rate", "clip_norm", "warmup_steps", "alpha", "beta", "noise_sigma",
               "eval_every", "concept_scale"});

  std::vector<std::string> names;
  auto data = cblm::corpus::read_corpus(need_string(sec, "train", "corpus"), &names);
  auto registry = registry_from_names(names);
  cblm::concepts::NormalizationStats stats;
  if (sec.contains("stats")) {
    stats = cblm::corpus::read_stats(need_string(sec, "train", "stats"));
  } else {
    stats = cblm::corpus::fit_stats(data);
  }
  if (stats.k() != registry.k()) {
    throw cblm::ConfigError("stats cover " + std::to_string(stats.k()) + " concepts, corpus has " +
                            std::to_string(registry.k()));
  }
  if (model_cfg.k != registry.k()) {
    throw cblm::ConfigError("model.k = " + std::to_string(model_cfg.k) +
                            " does not match the corpus concept count " +
                            std::to_string(registry.k()));
  }

  cblm::corpus::normalize_corpus(data, stats);
  int skipped = drop_overlong(data, model_cfg, registry.k());
  cblm::corpus::tokenize_corpus(data, model_cfg.max_len);

  cblm::model::CbModelF m(model_cfg);
  m.init_parameters(seed);

  cblm::train::TrainConfig tc;
  tc.steps = field(sec, "train", "steps", tc.steps);
  tc.batch_size = field(sec, "train", "batch_size", tc.batch_size);
  tc.mask_rate = field(sec, "train", "mask_rate", tc.mask_rate);
  tc.learning_rate = field(sec, "train", "learning_rate", tc.learning_rate);
  tc.clip_norm = field(sec, "train", "clip_norm", tc.clip_norm);
  tc.warmup_steps = field(sec, "train", "warmup_steps", tc.warmup_steps);
  tc.weights.alpha = field(sec, "train", "alpha", tc.weights.alpha);
  tc.weights.beta = field(sec, "train", "beta", tc.weights.beta);
  tc.noise_sigma = field(sec, "train", "noise_sigma", tc.noise_sigma);
  tc.eval_every = field(sec, "train", "eval_every", tc.eval_every);
  tc.concept_scale = field(sec, "train", "concept_scale", tc.concept_scale);
  tc.seed = seed;

  std::vector<double> max_activation;
  auto report = cblm::train::train(m, data, tc, &max_activation);

  fs::path ckpt_path = out_path(out_dir, field<std::string>(sec, "train", "checkpoint", "model.ckpt"));
  fs::path report_path =
      out_path(out_dir, field<std::string>(sec, "train", "report", "train_report.jsonl"));
  cblm::train::save_checkpoint(m, {registry, stats, max_activation}, ckpt_path.string());
  report.write_jsonl(report_path.string());

  json summary{{"checkpoint", ckpt_path.string()},
               {"report", report_path.string()},
               {"variant", cblm::model::variant_name(model_cfg.variant)},
               {"sequences", data.size()},
               {"skipped_long", skipped},
               {"steps", tc.steps},
               {"final_total", report.records.empty() ? 0.0 : report.records.back().total}};
  for (auto it = report.records.rbegin(); it != report.records.rend(); ++it) {
    if (it->has_eval) {
      summary["val_perplexity"] = it->val_perplexity;
      break;
    }
  }
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_eval(const json& cfg, const fs::path& out_dir, std::uint64_t seed) {
  json sec = section(cfg, "eval");
  strict_keys(sec, "eval",
              {"checkpoint", "corpus", "mask_rate", "interventions", "eval_fraction",
               "max_per_direction", "mask_fraction", "iterations", "method", "concepts",
               "ar_checkpoint", "report", "distribution"});

  auto lc = cblm::train::load_checkpoint(need_string(sec, "eval", "checkpoint"));
  const auto& registry = lc.extras.registry;

  std::vector<std::string> names;
  auto data = cblm::corpus::read_corpus(need_string(sec, "eval", "corpus"), &names);
  if (names != registry.names()) {
    throw cblm::ConfigError("corpus concepts do not match the checkpoint registry");
  }
  cblm::corpus::normalize_corpus(data, lc.extras.stats);
  drop_overlong(data, lc.model.config(), registry.k());
  cblm::corpus::tokenize_corpus(data, lc.model.config().max_len);

  cblm::evaluate::EvalOptions opt;
  opt.mask_rate = field(sec, "eval", "mask_rate", opt.mask_rate);
  opt.seed = seed;
  opt.run_interventions = field(sec, "eval", "interventions", true);
  opt.study.eval_fraction = field(sec, "eval", "eval_fraction", opt.study.eval_fraction);
  opt.study.max_per_direction = field(sec, "eval", "max_per_direction", opt.study.max_per_direction);
  opt.study.mask_fraction = field(sec, "eval", "mask_fraction", opt.study.mask_fraction);
  opt.study.iterations = field(sec, "eval", "iterations", opt.study.iterations);
  opt.study.method = cblm::intervene::attribution_method_from_name(
      field<std::string>(sec, "eval", "method",
                         cblm::intervene::attribution_method_name(opt.study.method)));
  opt.study.seed = seed;
  for (const auto& name : field(sec, "eval", "concepts", std::vector<std::string>{})) {
    opt.study.concept_indices.push_back(concept_index(registry, name));
  }

  LoadedAr ar;
  cblm::model::CbModelF* ar_model = nullptr;
  if (sec.contains("ar_checkpoint")) {
    ar = load_ar(need_string(sec, "eval", "ar_checkpoint"));
    ar_model = &ar.ckpt->model;
  }

  auto report = cblm::evaluate::evaluate_model(lc.model, registry, lc.extras.stats, data, opt,
                                               ar_model);
  std::string text = report.to_json(registry.names());

  fs::path report_path = out_path(out_dir, field<std::string>(sec, "eval", "report", "eval.json"));
  write_text(report_path, text + "\n");
  if (opt.run_interventions) {
    fs::path dist_path =
        out_path(out_dir, field<std::string>(sec, "eval", "distribution", "distribution.csv"));
    cblm::evaluate::write_distribution_csv(dist_path.string(), report.study.distribution,
                                           registry.names());
  }
  std::cout << text << "\n";
  return 0;
}

int cmd_intervene(const json& cfg, const fs::path& out_dir, std::uint64_t seed) {
  json sec = section(cfg, "intervene");
  strict_keys(sec, "intervene",
              {"checkpoint", "sequence", "concept", "direction", "target", "mask_fraction",
               "iterations", "method", "greedy", "temperature", "clamp_factor", "ar_checkpoint",
               "output"});

  auto lc = cblm::train::load_checkpoint(need_string(sec, "intervene", "checkpoint"));
  const auto& registry = lc.extras.registry;
  std::string sequence = need_string(sec, "intervene", "sequence");
  check_sequence_fits(sequence, lc.model.config());
  auto tokens = cblm::seqio::tokenize(sequence, lc.model.config().max_len);
  int idx = concept_index(registry, need_string(sec, "intervene", "concept"));

  LoadedAr ar;
  cblm::intervene::NaturalnessFn nat;
  if (sec.contains("ar_checkpoint")) {
    ar = load_ar(need_string(sec, "intervene", "ar_checkpoint"));
    nat = ar.fn;
  }

  cblm::intervene::InterventionResult result;
  if (sec.contains("clamp_factor")) {
    double factor = field(sec, "intervene", "clamp_factor", 1.0);
    result = cblm::intervene::clamp_concept(lc.model, registry, tokens, idx, factor,
                                            lc.extras.max_activation, seed, nat);
  } else {
    cblm::intervene::InterventionRequest req;
    req.concept_index = idx;
    req.direction = cblm::intervene::direction_from_name(
        field<std::string>(sec, "intervene", "direction", "increase"));
    if (sec.contains("target")) req.target = field(sec, "intervene", "target", 0.0);
    req.mask_fraction = field(sec, "intervene", "mask_fraction", req.mask_fraction);
    req.iterations = field(sec, "intervene", "iterations", req.iterations);
    req.method = cblm::intervene::attribution_method_from_name(field<std::string>(
        sec, "intervene", "method", cblm::intervene::attribution_method_name(req.method)));
    req.greedy = field(sec, "intervene", "greedy", req.greedy);
    req.temperature = field(sec, "intervene", "temperature", req.temperature);
    req.seed = seed;
    result = cblm::intervene::intervene_single(lc.model, registry, tokens, req, nat);
  }

  std::string text = result.to_json(registry);
  fs::path output_path =
      out_path(out_dir, field<std::string>(sec, "intervene", "output", "intervention.json"));
  write_text(output_path, text + "\n");
  std::cout << text << "\n";
  return 0;
}

int cmd_attribute(const json& cfg, const fs::path& out_dir, std::uint64_t seed) {
  json sec = section(cfg, "attribute");
  strict_keys(sec, "attribute", {"checkpoint", "sequence", "concept", "method", "output"});

  auto lc = cblm::train::load_checkpoint(need_string(sec, "attribute", "checkpoint"));
  std::string sequence = need_string(sec, "attribute", "sequence");
  check_sequence_fits(sequence, lc.model.config());
  auto tokens = cblm::seqio::tokenize(sequence, lc.model.config().max_len);
  int idx = concept_index(lc.extras.registry, need_string(sec, "attribute", "concept"));
  auto method = cblm::intervene::attribution_method_from_name(
      field<std::string>(sec, "attribute", "method", "grad_x_input_minus_mask"));

  auto column = cblm::intervene::attribute(lc.model, tokens, idx, method, seed);
  json out{{"concept", lc.extras.registry.info(idx).name},
           {"method", cblm::intervene::attribution_method_name(column.method)},
           {"sequence", sequence},
           {"scores", column.scores}};
  std::string text = out.dump(2);
  if (sec.contains("output")) {
    write_text(out_path(out_dir, need_string(sec, "attribute", "output")), text + "\n");
  }
  std::cout << text << "\n";
  return 0;
}

int cmd_inspect(const json& cfg, const fs::path& out_dir) {
  json sec = section(cfg, "inspect");
  strict_keys(sec, "inspect",
              {"checkpoint", "reference_checkpoint", "train_report", "weights_csv", "report"});

  auto lc = cblm::train::load_checkpoint(need_string(sec, "inspect", "checkpoint"));
  auto names = lc.extras.registry.names();
  auto weights = cblm::interpret::export_decoder_weights(lc.model);

  fs::path csv_path =
      out_path(out_dir, field<std::string>(sec, "inspect", "weights_csv", "weights.csv"));
  cblm::interpret::write_weights_csv(csv_path.string(), weights, names);

  std::optional<cblm::interpret::EffectiveWeightMatrix> reference;
  if (sec.contains("reference_checkpoint")) {
    auto ref = cblm::train::load_checkpoint(need_string(sec, "inspect", "reference_checkpoint"));
    reference = cblm::interpret::export_decoder_weights(ref.model);
  }
  std::optional<cblm::train::TrainReport> train_report;
  if (sec.contains("train_report")) {
    train_report =
        cblm::train::TrainReport::read_jsonl(need_string(sec, "inspect", "train_report"));
  }

  auto report = cblm::interpret::debug_report(lc.model, reference ? &*reference : nullptr,
                                              train_report ? &*train_report : nullptr);
  std::string text = report.to_json(names);
  fs::path report_path =
      out_path(out_dir, field<std::string>(sec, "inspect", "report", "debug.json"));
  write_text(report_path, text + "\n");
  std::cout << text << "\n";
  return 0;
}

int run(const std::string& command, json cfg, const fs::path& out_dir, std::uint64_t seed) {
  strict_keys(cfg, "config", {"seed", "output_dir", "model", "prepare", "train", "eval",
                              "intervene", "attribute", "inspect"});

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw cblm::IoError("cannot create output directory " + out_dir.string());

  json resolved = cfg;
  resolved["command"] = command;
  resolved["seed"] = seed;
  resolved["output_dir"] = out_dir.string();
  write_text(out_dir / (command + ".resolved.json"), resolved.dump(2) + "\n");

  if (command == "prepare") return cmd_prepare(cfg, out_dir, seed);
  if (command == "train") return cmd_train(cfg, out_dir, seed);
  if (command == "eval") return cmd_eval(cfg, out_dir, seed);
  if (command == "intervene") return cmd_intervene(cfg, out_dir, seed);
  if (command == "attribute") return cmd_attribute(cfg, out_dir, seed);
  if (command == "inspect") return cmd_inspect(cfg, out_dir);
  throw cblm::ConfigError("unknown command: " + command);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Concept-bottleneck protein language model toolkit"};
  app.fallthrough();
  app.require_subcommand(1);

  std::string config_path;
  std::string output_dir_flag;
  std::uint64_t seed_flag = 0;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "JSON run configuration file");
  app.add_option("--output-dir", output_dir_flag, "Directory for outputs (overrides output_dir)");
  app.add_option("--seed", seed_flag, "Seed override for every random stream");
  app.add_option("--set", overrides, "Override a config value, e.g. --set train.steps=500")
      ->allow_extra_args(false);

  app.add_subcommand("prepare", "Build a labeled corpus and normalization stats");
  app.add_subcommand("train", "Train a model variant on a prepared corpus");
  app.add_subcommand("eval", "Perplexity, intervention study, concept correlations");
  app.add_subcommand("intervene", "Steer one sequence toward a concept target");
  app.add_subcommand("attribute", "Per-residue attribution scores for one concept");
  app.add_subcommand("inspect", "Export decoder weights and the concept debug report");

  CLI11_PARSE(app, argc, argv);

  try {
    json cfg = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw cblm::IoError("cannot open config file " + config_path);
      try {
        in >> cfg;
      } catch (const json::exception& e) {
        throw cblm::ConfigError("config file is not valid JSON: " + std::string(e.what()));
      }
      if (!cfg.is_object()) throw cblm::ConfigError("config root must be a JSON object");
    }
    for (const auto& spec : overrides) apply_override(cfg, spec);
    if (app.count("--seed") > 0) cfg["seed"] = seed_flag;
    if (!output_dir_flag.empty()) cfg["output_dir"] = output_dir_flag;

    std::uint64_t seed = 0;
    if (cfg.contains("seed")) {
      try {
        seed = cfg.at("seed").get<std::uint64_t>();
      } catch (const json::exception&) {
        throw cblm::ConfigError("seed must be a non-negative integer");
      }
    }
    fs::path out_dir = field<std::string>(cfg, "config", "output_dir", ".");

    return run(app.get_subcommands().front()->get_name(), std::move(cfg), out_dir, seed);
  } catch (const cblm::Error& e) {
    json record{{"error", cblm::error_code_name(e.code())}, {"message", e.what()}};
    std::cerr << record.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    json record{{"error", "internal"}, {"message", e.what()}};
    std::cerr << record.dump() << "\n";
    return 2;
  }
}
