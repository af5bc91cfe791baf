#include "cblm/corpus.hpp"

#include <fstream>

#include "json.hpp"

#include "cblm/errors.hpp"

namespace cblm::corpus {

using nlohmann::json;

Corpus build_corpus(
    const std::vector<seqio::FastaRecord>& records,
    const concepts::ConceptRegistry& registry,
    const std::map<std::string, std::map<std::string, double>>* annotations) {
  Corpus out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    LabeledSequence ls;
    ls.id = rec.header;
    ls.sequence = rec.sequence;
    const std::map<std::string, double>* ann = nullptr;
    if (annotations != nullptr) {
      auto it = annotations->find(rec.header);
      if (it != annotations->end()) ann = &it->second;
    }
    ls.concepts = concepts::compute_all(rec.sequence, registry, ann);
    out.push_back(std::move(ls));
  }
  return out;
}

concepts::NormalizationStats fit_stats(const Corpus& corpus) {
  std::vector<concepts::ConceptVector> cvs;
  cvs.reserve(corpus.size());
  for (const auto& ls : corpus) cvs.push_back(ls.concepts);
  return concepts::fit_normalization(cvs);
}

void normalize_corpus(Corpus& corpus, const concepts::NormalizationStats& stats) {
  for (auto& ls : corpus) {
    ls.concepts = concepts::normalize(ls.concepts, stats, true);
  }
}

void tokenize_corpus(Corpus& corpus, int max_len) {
  for (auto& ls : corpus) ls.tokens = seqio::tokenize(ls.sequence, max_len);
}

std::pair<Corpus, Corpus> split_validation(const Corpus& corpus) {
  auto val_count = corpus.size() / 10;
  auto train_count = corpus.size() - val_count;
  if (train_count == 0) throw EmptyAfterFilterError("corpus too small to split");
  Corpus train(corpus.begin(), corpus.begin() + static_cast<std::ptrdiff_t>(train_count));
  Corpus val(corpus.begin() + static_cast<std::ptrdiff_t>(train_count), corpus.end());
  return {std::move(train), std::move(val)};
}

void write_corpus(const std::string& path, const Corpus& corpus,
                  const std::vector<std::string>& concept_names) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  json header;
  header["concepts"] = concept_names;
  header["count"] = corpus.size();
  out << header.dump() << "\n";
  for (const auto& ls : corpus) {
    json rec;
    rec["id"] = ls.id;
    rec["seq"] = ls.sequence;
    rec["values"] = ls.concepts.values;
    std::vector<int> obs(ls.concepts.observed.begin(), ls.concepts.observed.end());
    rec["observed"] = obs;
    out << rec.dump() << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

Corpus read_corpus(const std::string& path, std::vector<std::string>* concept_names) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty corpus file: " + path);
  json header = json::parse(line, nullptr, false);
  if (header.is_discarded() || !header.contains("concepts")) {
    throw FormatError("bad corpus header: " + path);
  }
  if (concept_names != nullptr) {
    *concept_names = header["concepts"].get<std::vector<std::string>>();
  }
  Corpus out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded()) {
      throw FormatError(path + ": bad record at line " + std::to_string(lineno));
    }
    LabeledSequence ls;
    ls.id = rec.value("id", "");
    ls.sequence = rec.at("seq").get<std::string>();
    ls.concepts.values = rec.at("values").get<std::vector<double>>();
    auto obs = rec.at("observed").get<std::vector<int>>();
    ls.concepts.observed.assign(obs.begin(), obs.end());
    if (ls.concepts.values.size() != ls.concepts.observed.size()) {
      throw FormatError(path + ": values/observed length mismatch at line " +
                        std::to_string(lineno));
    }
    out.push_back(std::move(ls));
  }
  return out;
}

void write_stats(const std::string& path, const concepts::NormalizationStats& stats,
                 const std::vector<std::string>& concept_names) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  json j;
  j["concepts"] = concept_names;
  j["min"] = stats.min;
  j["max"] = stats.max;
  std::vector<int> deg(stats.degenerate.begin(), stats.degenerate.end());
  j["degenerate"] = deg;
  out << j.dump(2) << "\n";
}

concepts::NormalizationStats read_stats(const std::string& path,
                                        std::vector<std::string>* concept_names) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw FormatError("bad stats file: " + path);
  concepts::NormalizationStats stats;
  stats.min = j.at("min").get<std::vector<double>>();
  stats.max = j.at("max").get<std::vector<double>>();
  auto deg = j.at("degenerate").get<std::vector<int>>();
  stats.degenerate.assign(deg.begin(), deg.end());
  if (concept_names != nullptr && j.contains("concepts")) {
    *concept_names = j["concepts"].get<std::vector<std::string>>();
  }
  if (stats.min.size() != stats.max.size() ||
      stats.min.size() != stats.degenerate.size()) {
    throw FormatError("inconsistent stats file: " + path);
  }
  return stats;
}

}  // namespace cblm::corpus
