#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "specgen/cli.hpp"
#include "specgen/datasets.hpp"
#include "specgen/errors.hpp"

using namespace specgen;
using namespace specgen::cli;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("specgen_test_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

RunConfig tiny(const fs::path& corpus) {
  RunConfig c;
  c.dataset = "community-small";
  c.corpus = corpus.string();
  c.seed = 1;
  c.model.gen_ppgn_width = 8;
  c.model.gen_ppgn_layers = 2;
  c.model.disc_ppgn_width = 8;
  c.model.disc_ppgn_layers = 2;
  c.model.noise_width = 16;
  c.train.total_steps = 4;
  c.train.checkpoint_every = 2;
  c.train.batch_size = 4;
  c.train.warmup_steps = 1;
  c.train.anneal_steps = 2;
  return c;
}

}  // namespace

TEST_CASE("exit codes are distinct per error class") {
  CHECK(exit_code_for(InvalidInput("x")) == kInvalidInput);
  CHECK(exit_code_for(ParseError("x")) == kParseError);
  CHECK(exit_code_for(IoError("x")) == kIoError);
  CHECK(exit_code_for(NumericalFailure("x")) == kNumericalFailure);
  CHECK(exit_code_for(RankDeficient("x")) == kRankDeficient);
  CHECK(exit_code_for(DisconnectedGraph("x")) == kDisconnectedGraph);
  CHECK(exit_code_for(std::runtime_error("x")) == kFailure);
  std::set<int> codes{kOk, kFailure, kUsage, kInvalidInput, kParseError, kIoError, kNumericalFailure, kRankDeficient,
                      kDisconnectedGraph};
  CHECK(codes.size() == 9);
}

TEST_CASE("run config round trip and validation") {
  auto c = tiny("somewhere");
  c.train.lr = 3e-4;
  c.model.k = 4;
  auto back = RunConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.train.lr == 3e-4);
  CHECK(back.model.k == 4);
  // partial configs keep defaults
  auto partial = RunConfig::from_json(R"({"train": {"total_steps": 7}})");
  CHECK(partial.train.total_steps == 7);
  CHECK(partial.train.lr == RunConfig{}.train.lr);
  CHECK(partial.model.k == RunConfig{}.model.k);
  CHECK_THROWS_AS(RunConfig::from_json(R"({"trian": {}})"), ParseError);
  CHECK_THROWS_AS(RunConfig::from_json(R"({"model": {"width": 3}})"), ParseError);
  CHECK_THROWS_AS(RunConfig::from_json(R"({"version": 2})"), ParseError);
  CHECK_THROWS_AS(RunConfig::from_json(R"({"train": {"lr": "fast"}})"), ParseError);
  CHECK_THROWS_AS(RunConfig::from_json("not json"), ParseError);
  CHECK_THROWS_AS(load_run_config(scratch("nope") / "config.json"), IoError);
}

TEST_CASE("dataset command is reproducible byte for byte") {
  auto a = scratch("ds_a"), b = scratch("ds_b");
  std::ostringstream log;
  cmd_dataset("community-small", 5, a, log);
  cmd_dataset("community-small", 5, b, log);
  CHECK(log.str().find("100 graphs") != std::string::npos);
  for (const auto& e : fs::directory_iterator(a)) CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
  CHECK_THROWS_AS(cmd_dataset("lattice", 5, scratch("ds_c"), log), InvalidInput);
}

TEST_CASE("train, resume, sample, evaluate") {
  auto corpus = scratch("corpus");
  std::ostringstream log;
  cmd_dataset("community-small", 1, corpus, log);

  auto cfg = tiny(corpus);
  auto fresh = scratch("fresh");
  cfg.train.total_steps = 6;
  cmd_train(cfg, fresh, log);
  CHECK(fs::exists(fresh / "config.json"));
  CHECK(fs::exists(fresh / "selected.json"));
  CHECK(fs::exists(fresh / "checkpoints" / "step_0000006.ckpt"));

  // 4 steps, then extend to 6: identical to the uninterrupted run
  auto resumed = scratch("resumed");
  cfg.train.total_steps = 4;
  cmd_train(cfg, resumed, log);
  cfg.train.total_steps = 6;
  cmd_train(cfg, resumed, log);
  CHECK(slurp(fresh / "log.jsonl") == slurp(resumed / "log.jsonl"));
  CHECK(slurp(fresh / "checkpoints" / "step_0000006.ckpt") == slurp(resumed / "checkpoints" / "step_0000006.ckpt"));

  auto other = cfg;
  other.train.lr = 1e-3;
  CHECK_THROWS_AS(cmd_train(other, resumed, log), InvalidInput);
  auto missing = cfg;
  missing.corpus = (scratch("void") / "corpus").string();
  CHECK_THROWS_AS(cmd_train(missing, scratch("run_missing"), log), IoError);

  // a corrupted latest checkpoint is refused
  {
    auto bad = resumed / "checkpoints" / "step_0000008.ckpt";
    auto bytes = slurp(resumed / "checkpoints" / "step_0000006.ckpt");
    bytes[bytes.size() / 2] ^= 0x5a;
    std::ofstream(bad, std::ios::binary) << bytes;
    cfg.train.total_steps = 10;
    CHECK_THROWS_AS(cmd_train(cfg, resumed, log), IoError);
  }

  SampleRequest req;
  req.checkpoint = fresh / "checkpoints" / "step_0000006.ckpt";
  req.corpus = corpus;
  req.seed = 3;
  req.out = scratch("gen");
  cmd_sample(req, log);
  auto gen = datasets::load_corpus(req.out);
  auto test = datasets::load_corpus(corpus).subset(datasets::Split::Test);
  REQUIRE(gen.graphs.size() == test.size());
  for (std::size_t i = 0; i < test.size(); ++i) CHECK(gen.graphs[i].n() == test[i].n());
  // same seed, same bytes
  auto again = req;
  again.out = scratch("gen2");
  cmd_sample(again, log);
  CHECK(slurp(req.out / "graph_00003.txt") == slurp(again.out / "graph_00003.txt"));

  auto real = req;
  real.real_spectra = true;
  real.count = 7;
  real.out = scratch("gen_real");
  cmd_sample(real, log);
  CHECK(datasets::load_corpus(real.out).graphs.size() == 7);

  auto wrong_k = req;
  wrong_k.k = 3;
  CHECK_THROWS_AS(cmd_sample(wrong_k, log), InvalidInput);
  auto no_corpus = req;
  no_corpus.corpus.reset();
  no_corpus.real_spectra = true;
  CHECK_THROWS_AS(cmd_sample(no_corpus, log), InvalidInput);

  auto rep_dir = scratch("report");
  auto report = cmd_evaluate(req.out, corpus, corpus, "", rep_dir, log);
  CHECK(report.dataset == "community-small");
  CHECK(report.generated == test.size());
  CHECK(report.batch_seconds > 0);
  CHECK_FALSE(report.valid);
  auto from_json = metrics::EvalReport::from_json(slurp(rep_dir / "report.json"));
  CHECK(from_json.mmd.values == report.mmd.values);
  std::istringstream tsv(slurp(rep_dir / "report.tsv"));
  std::string header, row;
  std::getline(tsv, header);
  std::getline(tsv, row);
  CHECK(metrics::EvalReport::from_tsv(header, row).mmd.values == report.mmd.values);
}

TEST_CASE("evaluating the training split against itself gives ratio 1") {
  auto corpus = scratch("self");
  std::ostringstream log;
  cmd_dataset("community-small", 2, corpus, log);
  auto c = datasets::load_corpus(corpus);
  datasets::GraphCorpus train_only;
  train_only.name = "generated";
  train_only.graphs = c.subset(datasets::Split::Train);
  auto gen = scratch("self_gen");
  datasets::save_corpus(train_only, gen);
  auto r = cmd_evaluate(gen, corpus, corpus, "community-small", {}, log);
  CHECK(r.ratio == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.novel == 0.0);
  CHECK_THROWS_AS(cmd_evaluate(scratch("absent"), corpus, corpus, "", {}, log), IoError);
}

TEST_CASE("spectra dump") {
  auto corpus = scratch("spec_corpus");
  std::ostringstream log;
  cmd_dataset("community-small", 3, corpus, log);
  auto out = scratch("spec") / "spectra.jsonl";
  cmd_spectra(corpus, 2, out, log);
  std::istringstream lines(slurp(out));
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    CHECK(line.find("\"eigenvalues\"") != std::string::npos);
    ++count;
  }
  CHECK(count == 100);
}
