// specgen: dataset | train | sample | evaluate | spectra

#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "specgen/cli.hpp"
#include "specgen/errors.hpp"
#include "specgen/tensor.hpp"

using namespace specgen;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
  ad::tune_allocator();
  CLI::App app{"Spectrum-conditioned graph generation: datasets, training, sampling, evaluation"};
  app.require_subcommand(1);
  std::size_t threads = 1;
  app.add_option("--threads", threads, "Worker threads (computation is single-threaded; accepted for scripts)")
      ->envname("SPECGEN_THREADS")
      ->check(CLI::PositiveNumber);

  // dataset
  auto* ds = app.add_subcommand("dataset", "Generate, split and save a synthetic corpus");
  std::string ds_name;
  std::uint64_t ds_seed = 0;
  std::string ds_out;
  ds->add_option("name", ds_name, "planar | sbm | community-small")->required();
  ds->add_option("--seed", ds_seed, "Corpus seed");
  ds->add_option("--out", ds_out, "Output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train into a run directory (resumes if it exists)");
  std::string tr_config, tr_out, tr_dataset, tr_corpus;
  std::optional<std::uint64_t> tr_seed;
  std::optional<std::size_t> tr_k, tr_steps;
  tr->add_option("--config", tr_config, "Run config JSON; defaults apply when omitted");
  tr->add_option("--out", tr_out, "Run directory")->required();
  tr->add_option("--dataset", tr_dataset, "Override the dataset name");
  tr->add_option("--corpus", tr_corpus, "Train on a corpus directory instead of generating one");
  tr->add_option("--seed", tr_seed, "Override corpus and training seeds");
  tr->add_option("--k", tr_k, "Override the number of eigenpairs");
  tr->add_option("--steps", tr_steps, "Override total steps");

  // sample
  auto* sa = app.add_subcommand("sample", "Sample graphs from a checkpoint's EMA generator");
  cli::SampleRequest req;
  std::string sa_ckpt, sa_corpus, sa_out;
  std::optional<std::size_t> sa_k;
  sa->add_option("checkpoint", sa_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  auto* sa_corpus_opt = sa->add_option("--corpus", sa_corpus, "Take node counts (and spectra) from this corpus");
  sa->add_option("--nodes", req.nodes, "Explicit node counts")->delimiter(',')->excludes(sa_corpus_opt);
  sa->add_option("--count", req.count, "Number of graphs (cycles through the node counts)");
  sa->add_flag("--real-spectra", req.real_spectra, "Condition on the corpus's true spectra");
  sa->add_option("--k", sa_k, "Expected k; refused if the checkpoint differs");
  sa->add_option("--seed", req.seed, "Sampling seed");
  sa->add_option("--out", sa_out, "Output corpus directory")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "MMD, validity, uniqueness and novelty report");
  std::string ev_gen, ev_train, ev_test, ev_dataset, ev_out;
  ev->add_option("generated", ev_gen, "Generated corpus")->required();
  ev->add_option("--train", ev_train, "Training corpus (train split is used when tagged)")->required();
  ev->add_option("--test", ev_test, "Reference corpus (test split is used when tagged)")->required();
  ev->add_option("--dataset", ev_dataset, "Dataset name for kernels and validity; default: the test corpus name");
  ev->add_option("--out", ev_out, "Directory for report.json and report.tsv");

  // spectra
  auto* sp = app.add_subcommand("spectra", "Dump top-k spectra of a corpus as JSON lines");
  std::string sp_corpus, sp_out;
  std::size_t sp_k = 2;
  sp->add_option("corpus", sp_corpus, "Corpus")->required();
  sp->add_option("--k", sp_k, "Number of eigenpairs")->check(CLI::PositiveNumber);
  sp->add_option("--out", sp_out, "Output file; stdout when omitted");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kUsage;
  }

  try {
    if (*ds) {
      cli::cmd_dataset(ds_name, ds_seed, ds_out, std::cout);
    } else if (*tr) {
      cli::RunConfig cfg;
      if (!tr_config.empty()) cfg = cli::load_run_config(tr_config);
      if (!tr_dataset.empty()) cfg.dataset = tr_dataset;
      if (!tr_corpus.empty()) cfg.corpus = tr_corpus;
      if (tr_seed) cfg.seed = cfg.train.seed = *tr_seed;
      if (tr_k) cfg.model.k = *tr_k;
      if (tr_steps) cfg.train.total_steps = *tr_steps;
      cli::cmd_train(cfg, tr_out, std::cout);
    } else if (*sa) {
      req.checkpoint = sa_ckpt;
      if (!sa_corpus.empty()) req.corpus = fs::path(sa_corpus);
      req.k = sa_k;
      req.out = sa_out;
      cli::cmd_sample(req, std::cout);
    } else if (*ev) {
      cli::cmd_evaluate(ev_gen, ev_train, ev_test, ev_dataset, ev_out, std::cout);
    } else if (*sp) {
      cli::cmd_spectra(sp_corpus, sp_k, sp_out, std::cerr);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::exit_code_for(e);
  }
  return cli::kOk;
}
