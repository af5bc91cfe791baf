#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"

// Drives the installed binary the way a user would: real process, real
// files, exit codes and stderr records checked against the documented
// contract.

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
  int rc = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path case_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("cblm_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunResult run_cli(const fs::path& dir, const std::string& args) {
  fs::path out_file = dir / "_stdout.txt";
  fs::path err_file = dir / "_stderr.txt";
  std::string cmd = "cd '" + dir.string() + "' && '" + CBLM_CLI_PATH + "' " + args + " > '" +
                    out_file.string() + "' 2> '" + err_file.string() + "'";
  int status = std::system(cmd.c_str());
  RunResult r;
  r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  return r;
}

json first_error(const RunResult& r) {
  auto nl = r.err.find('\n');
  return json::parse(r.err.substr(0, nl));
}

const std::string kTinyModel =
    "--set model.layers=1 --set model.d=16 --set model.heads=2 --set model.max_len=32";

std::string prepare_args(int count, int min_len, int max_len) {
  std::ostringstream ss;
  ss << "prepare --set prepare.synthetic.count=" << count
     << " --set prepare.synthetic.min_len=" << min_len
     << " --set prepare.synthetic.max_len=" << max_len;
  return ss.str();
}

}  // namespace

TEST_CASE("prepare is reproducible and writes the resolved config") {
  auto dir = case_dir("prepare");
  auto r1 = run_cli(dir, prepare_args(40, 10, 20) + " --seed 7 --output-dir a");
  REQUIRE(r1.rc == 0);
  auto summary = json::parse(r1.out);
  CHECK(summary["sequences"] == 40);
  CHECK(summary["concepts"] == 14);
  CHECK(fs::exists(dir / "a/corpus.jsonl"));
  CHECK(fs::exists(dir / "a/stats.json"));

  auto resolved = json::parse(slurp(dir / "a/prepare.resolved.json"));
  CHECK(resolved["command"] == "prepare");
  CHECK(resolved["seed"] == 7);

  auto r2 = run_cli(dir, prepare_args(40, 10, 20) + " --seed 7 --output-dir b");
  REQUIRE(r2.rc == 0);
  CHECK(slurp(dir / "a/corpus.jsonl") == slurp(dir / "b/corpus.jsonl"));
  CHECK(slurp(dir / "a/stats.json") == slurp(dir / "b/stats.json"));

  auto r3 = run_cli(dir, prepare_args(40, 10, 20) + " --seed 8 --output-dir c");
  REQUIRE(r3.rc == 0);
  CHECK(slurp(dir / "a/corpus.jsonl") != slurp(dir / "c/corpus.jsonl"));
}

TEST_CASE("prepare with fasta and annotations adds categorical concepts") {
  auto dir = case_dir("annotations");
  {
    std::ofstream fa(dir / "input.fasta");
    fa << ">p0\nMKWVTFISLL\n>p1\nGATTACAGGG\n>p2\nKKDDEERRHH\n";
    std::ofstream tsv(dir / "labels.tsv");
    tsv << "id\tfamily_kinase\np0\t1\np1\t0\np2\t1\n";
  }
  auto r = run_cli(dir,
                   "prepare --set prepare.fasta=input.fasta --set prepare.annotations=labels.tsv");
  REQUIRE(r.rc == 0);
  auto summary = json::parse(r.out);
  CHECK(summary["concepts"] == 15);
  auto stats = json::parse(slurp(dir / "stats.json"));
  REQUIRE(stats["concepts"].size() == 15);
  CHECK(stats["concepts"].back() == "family_kinase");
}

TEST_CASE("unknown config keys are rejected with a typed record") {
  auto dir = case_dir("badkey");
  auto r = run_cli(dir, "train --set train.stepz=5");
  CHECK(r.rc == 1);
  auto rec = first_error(r);
  CHECK(rec["error"] == "config_error");
  CHECK(rec["message"].get<std::string>().find("train.stepz") != std::string::npos);

  auto r2 = run_cli(dir, "prepare --set prepare.synthetic.count=4 --set nonsense=1");
  CHECK(r2.rc == 1);
  CHECK(first_error(r2)["error"] == "config_error");

  auto r3 = run_cli(dir, "prepare --set seed.inner=1");
  CHECK(r3.rc == 1);
  CHECK(first_error(r3)["error"] == "config_error");

  auto r4 = run_cli(dir, "prepare --set no_equals_sign");
  CHECK(r4.rc == 1);
  CHECK(first_error(r4)["error"] == "config_error");
}

TEST_CASE("missing inputs produce io_error records") {
  auto dir = case_dir("missing");
  auto r = run_cli(dir, "eval --set eval.checkpoint=nope.ckpt --set eval.corpus=nope.jsonl");
  CHECK(r.rc == 1);
  CHECK(first_error(r)["error"] == "io_error");

  auto r2 = run_cli(dir, "train --config does_not_exist.json");
  CHECK(r2.rc == 1);
  CHECK(first_error(r2)["error"] == "io_error");
}

TEST_CASE("seed flag wins over the config file value") {
  auto dir = case_dir("seed");
  {
    std::ofstream cfg(dir / "run.json");
    cfg << R"({"seed": 9, "prepare": {"synthetic": {"count": 5, "min_len": 8, "max_len": 12}}})";
  }
  auto r = run_cli(dir, "prepare --config run.json");
  REQUIRE(r.rc == 0);
  CHECK(json::parse(slurp(dir / "prepare.resolved.json"))["seed"] == 9);

  auto r2 = run_cli(dir, "prepare --config run.json --seed 11 --output-dir o2");
  REQUIRE(r2.rc == 0);
  CHECK(json::parse(slurp(dir / "o2/prepare.resolved.json"))["seed"] == 11);
}

TEST_CASE("pipeline: train, eval, attribute, intervene, inspect") {
  auto dir = case_dir("pipeline");
  REQUIRE(run_cli(dir, prepare_args(40, 8, 16) + " --seed 7").rc == 0);

  auto train = run_cli(dir, "train --seed 3 " + kTinyModel +
                                " --set train.corpus=corpus.jsonl --set train.stats=stats.json"
                                " --set train.steps=25 --set train.eval_every=20");
  REQUIRE(train.rc == 0);
  auto summary = json::parse(train.out);
  CHECK(summary["variant"] == "CB");
  CHECK(summary["sequences"] == 40);
  CHECK(summary.contains("val_perplexity"));
  REQUIRE(fs::exists(dir / "model.ckpt"));
  {
    std::ifstream rep(dir / "train_report.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(rep, line)) {
      auto rec = json::parse(line);
      CHECK(rec.contains("total"));
      ++lines;
    }
    CHECK(lines == 25);
  }

  auto eval1 = run_cli(dir, "eval --seed 5 --output-dir e1"
                            " --set eval.checkpoint=model.ckpt --set eval.corpus=corpus.jsonl"
                            " --set eval.max_per_direction=1 --set eval.concepts=[\\\"gravy\\\"]");
  REQUIRE(eval1.rc == 0);
  auto report = json::parse(eval1.out);
  CHECK(report["perplexity"].get<double>() > 1.0);
  CHECK(report["intervention_correlation"].size() == 14);
  CHECK(fs::exists(dir / "e1/eval.json"));
  CHECK(fs::exists(dir / "e1/distribution.csv"));

  auto eval2 = run_cli(dir, "eval --seed 5 --output-dir e2"
                            " --set eval.checkpoint=model.ckpt --set eval.corpus=corpus.jsonl"
                            " --set eval.max_per_direction=1 --set eval.concepts=[\\\"gravy\\\"]");
  REQUIRE(eval2.rc == 0);
  CHECK(slurp(dir / "e1/eval.json") == slurp(dir / "e2/eval.json"));
  CHECK(slurp(dir / "e1/distribution.csv") == slurp(dir / "e2/distribution.csv"));

  auto skip = run_cli(dir, "eval --output-dir e3 --set eval.interventions=false"
                           " --set eval.checkpoint=model.ckpt --set eval.corpus=corpus.jsonl");
  REQUIRE(skip.rc == 0);
  CHECK_FALSE(fs::exists(dir / "e3/distribution.csv"));

  auto attr = run_cli(dir, "attribute --set attribute.checkpoint=model.ckpt"
                           " --set attribute.sequence=MKWVTFISLL --set attribute.concept=gravy");
  REQUIRE(attr.rc == 0);
  auto attr_out = json::parse(attr.out);
  CHECK(attr_out["scores"].size() == 10);
  CHECK(attr_out["method"] == "grad_x_input_minus_mask");
  CHECK_FALSE(fs::exists(dir / "attribution.json"));

  auto attr_bad = run_cli(dir, "attribute --set attribute.checkpoint=model.ckpt"
                               " --set attribute.sequence=MKWVTFISLL"
                               " --set attribute.concept=no_such_concept");
  CHECK(attr_bad.rc == 1);
  CHECK(first_error(attr_bad)["error"] == "config_error");

  auto iv = run_cli(dir, "intervene --seed 2 --set intervene.checkpoint=model.ckpt"
                         " --set intervene.sequence=MKWVTFISLLFLFSSAYS"
                         " --set intervene.concept=gravy --set intervene.direction=decrease");
  REQUIRE(iv.rc == 0);
  auto iv_out = json::parse(iv.out);
  CHECK(iv_out["output"].get<std::string>().size() == 18);
  CHECK(fs::exists(dir / "intervention.json"));

  auto too_long = run_cli(dir, "intervene --set intervene.checkpoint=model.ckpt"
                               " --set intervene.concept=gravy --set intervene.sequence=" +
                               std::string(40, 'A'));
  CHECK(too_long.rc == 1);
  CHECK(first_error(too_long)["error"] == "length_error");

  auto clamp = run_cli(dir, "intervene --seed 4 --output-dir cl"
                            " --set intervene.checkpoint=model.ckpt"
                            " --set intervene.sequence=MKWVTFISLLFLFSSAYS"
                            " --set intervene.concept=aromaticity"
                            " --set intervene.clamp_factor=1.5");
  REQUIRE(clamp.rc == 0);
  CHECK(json::parse(clamp.out)["output"].get<std::string>().size() == 18);

  auto inspect = run_cli(dir, "inspect --output-dir ins --set inspect.checkpoint=model.ckpt"
                              " --set inspect.train_report=train_report.jsonl");
  REQUIRE(inspect.rc == 0);
  auto debug = json::parse(inspect.out);
  REQUIRE(debug["concepts"].size() == 14);
  for (const auto& entry : debug["concepts"]) CHECK(entry.contains("val_mse"));
  std::string csv = slurp(dir / "ins/weights.csv");
  CHECK(csv.rfind("concept,[CLS]", 0) == 0);
  size_t csv_lines = static_cast<size_t>(std::count(csv.begin(), csv.end(), '\n'));
  CHECK(csv_lines == 15);
}

TEST_CASE("conditional checkpoints refuse the intervene command") {
  auto dir = case_dir("conditional");
  REQUIRE(run_cli(dir, prepare_args(30, 8, 14) + " --seed 7").rc == 0);
  auto train = run_cli(dir, "train --seed 3 --set model.layers=1 --set model.d=16"
                            " --set model.heads=2 --set model.max_len=40 --set model.variant=C"
                            " --set train.corpus=corpus.jsonl --set train.steps=5");
  REQUIRE(train.rc == 0);
  auto iv = run_cli(dir, "intervene --set intervene.checkpoint=model.ckpt"
                         " --set intervene.sequence=MKWVTF --set intervene.concept=gravy");
  CHECK(iv.rc == 1);
  CHECK(first_error(iv)["error"] == "variant_mismatch");
}
