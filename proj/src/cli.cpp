#include "specgen/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "config_json.hpp"
#include "json.hpp"
#include "specgen/datasets.hpp"
#include "specgen/errors.hpp"
#include "specgen/graph.hpp"

namespace specgen::cli {

using json = nlohmann::json;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const InvalidInput*>(&e)) return kInvalidInput;
  if (dynamic_cast<const ParseError*>(&e)) return kParseError;
  if (dynamic_cast<const IoError*>(&e)) return kIoError;
  if (dynamic_cast<const NumericalFailure*>(&e)) return kNumericalFailure;
  if (dynamic_cast<const RankDeficient*>(&e)) return kRankDeficient;
  if (dynamic_cast<const DisconnectedGraph*>(&e)) return kDisconnectedGraph;
  return kFailure;
}

// --- config ---------------------------------------------------------------------------

namespace {

constexpr const char* kFormat = "specgen-run";
constexpr int kConfigVersion = 1;

json train_json(const training::TrainConfig& t) {
  return {{"lr", t.lr},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"adam_eps", t.adam_eps},
          {"lambda_lp", t.lambda_lp},
          {"gamma", t.gamma},
          {"batch_size", t.batch_size},
          {"total_steps", t.total_steps},
          {"warmup_steps", t.warmup_steps},
          {"anneal_steps", t.anneal_steps},
          {"tau_start", t.tau_start},
          {"tau_end", t.tau_end},
          {"ema", t.ema},
          {"rewire_p", t.rewire_p},
          {"noise_var", t.noise_var},
          {"seed", t.seed},
          {"checkpoint_every", t.checkpoint_every}};
}

// Keys of `j` must be a subset of the keys of `known`.
void check_keys(const json& j, const json& known, const std::string& where) {
  if (!j.is_object()) throw ParseError("config: '" + where + "' must be an object");
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ParseError("config: unknown key '" + where + "." + key + "'");
}

training::TrainConfig train_from(const json& j) {
  training::TrainConfig t;
  check_keys(j, train_json(t), "train");
  // round-trip through the JSON form so every field is read by name
  json merged = train_json(t);
  merged.update(j);
  t.lr = merged["lr"];
  t.beta1 = merged["beta1"];
  t.beta2 = merged["beta2"];
  t.adam_eps = merged["adam_eps"];
  t.lambda_lp = merged["lambda_lp"];
  t.gamma = merged["gamma"];
  t.batch_size = merged["batch_size"];
  t.total_steps = merged["total_steps"];
  t.warmup_steps = merged["warmup_steps"];
  t.anneal_steps = merged["anneal_steps"];
  t.tau_start = merged["tau_start"];
  t.tau_end = merged["tau_end"];
  t.ema = merged["ema"];
  t.rewire_p = merged["rewire_p"];
  t.noise_var = merged["noise_var"];
  t.seed = merged["seed"];
  t.checkpoint_every = merged["checkpoint_every"];
  return t;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("write failed: " + p.string());
}

}  // namespace

std::string RunConfig::to_json() const {
  json j{{"format", kFormat},
         {"version", kConfigVersion},
         {"dataset", dataset},
         {"corpus", corpus},
         {"seed", seed},
         {"model", detail::model_config_json(model)},
         {"train", train_json(train)}};
  return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json(const std::string& text) {
  RunConfig c;
  try {
    auto j = json::parse(text);
    check_keys(j, json{{"format", 0}, {"version", 0}, {"dataset", 0}, {"corpus", 0}, {"seed", 0}, {"model", 0}, {"train", 0}},
               "config");
    if (j.value("format", std::string(kFormat)) != kFormat) throw ParseError("config: not a specgen run config");
    if (j.value("version", kConfigVersion) != kConfigVersion)
      throw ParseError("config: unsupported version " + j["version"].dump());
    c.dataset = j.value("dataset", c.dataset);
    c.corpus = j.value("corpus", c.corpus);
    c.seed = j.value("seed", c.seed);
    if (j.contains("model")) {
      check_keys(j["model"], detail::model_config_json(c.model), "model");
      c.model = detail::model_config_from(j["model"], true);
    }
    if (j.contains("train")) c.train = train_from(j["train"]);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) { return RunConfig::from_json(read_file(path)); }

// --- dataset ---------------------------------------------------------------------------------

void cmd_dataset(const std::string& name, std::uint64_t seed, const fs::path& out, std::ostream& log) {
  auto corpus = datasets::generate(name, seed);
  datasets::split(corpus, seed);
  datasets::save_corpus(corpus, out);
  std::size_t lo = SIZE_MAX, hi = 0;
  double edges = 0;
  for (const auto& g : corpus.graphs) {
    lo = std::min(lo, g.n());
    hi = std::max(hi, g.n());
    edges += static_cast<double>(g.edge_count());
  }
  log << name << ": " << corpus.graphs.size() << " graphs, n in [" << lo << ", " << hi
      << "], mean edges " << edges / static_cast<double>(corpus.graphs.size()) << "; train "
      << corpus.subset(datasets::Split::Train).size() << ", val " << corpus.subset(datasets::Split::Val).size()
      << ", test " << corpus.subset(datasets::Split::Test).size() << " -> " << out.string() << "\n";
}

// --- train -------------------------------------------------------------------------------------

namespace {

datasets::GraphCorpus corpus_for(const RunConfig& cfg) {
  if (!cfg.corpus.empty()) return datasets::load_corpus(cfg.corpus);
  auto c = datasets::generate(cfg.dataset, cfg.seed);
  datasets::split(c, cfg.seed);
  return c;
}

std::vector<graphs::Graph> split_or_all(const datasets::GraphCorpus& c, datasets::Split s) {
  if (c.splits.empty()) return s == datasets::Split::Val ? std::vector<graphs::Graph>{} : c.graphs;
  return c.subset(s);
}

std::string checkpoint_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%07zu.ckpt", step);
  return buf;
}

std::vector<std::pair<std::size_t, fs::path>> list_checkpoints(const fs::path& dir) {
  std::vector<std::pair<std::size_t, fs::path>> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    auto name = e.path().filename().string();
    std::size_t step = 0;
    char tail = 0;
    if (std::sscanf(name.c_str(), "step_%zu.ckp%c", &step, &tail) == 2 && tail == 't' && name.size() == 17)
      out.emplace_back(step, e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Drops log records at or beyond `step`, so a resumed run appends cleanly.
void truncate_log(const fs::path& log_path, std::size_t step) {
  if (!fs::exists(log_path)) return;
  std::istringstream in(read_file(log_path));
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      if (json::parse(line).at("step").get<std::size_t>() >= step) continue;
    } catch (const json::exception&) {
      continue;  // partial final line from an interrupted run
    }
    kept += line + "\n";
  }
  write_file(log_path, kept);
}

}  // namespace

void cmd_train(const RunConfig& cfg_in, const fs::path& run_dir, std::ostream& log) {
  RunConfig cfg = cfg_in;
  auto corpus = corpus_for(cfg);
  auto train = split_or_all(corpus, datasets::Split::Train);
  auto val = split_or_all(corpus, datasets::Split::Val);
  if (train.empty()) throw InvalidInput("train: no training graphs");
  if (cfg.model.n_max == 0)
    for (const auto& g : train) cfg.model.n_max = std::max(cfg.model.n_max, g.n());
  cfg.model.validate();
  cfg.train.validate();

  const auto ckpt_dir = run_dir / "checkpoints";
  fs::create_directories(ckpt_dir);
  const auto config_path = run_dir / "config.json";
  const auto text = cfg.to_json();
  if (fs::exists(config_path)) {
    // extending a run is allowed: only total_steps may differ
    auto before = json::parse(read_file(config_path)), now = json::parse(text);
    before["train"].erase("total_steps");
    now["train"].erase("total_steps");
    if (before != now) throw InvalidInput("train: " + run_dir.string() + " holds a run with a different config");
  }
  write_file(config_path, text);

  training::Trainer tr(cfg.model, cfg.train, train);
  tr.set_dump_dir(run_dir);
  if (tr.skipped_graphs() > 0) log << "skipped " << tr.skipped_graphs() << " training graphs unusable for k\n";
  auto existing = list_checkpoints(ckpt_dir);
  if (!existing.empty()) {
    tr.load_checkpoint(existing.back().second);
    log << "resuming from " << existing.back().second.filename().string() << "\n";
  }
  const auto log_path = run_dir / "log.jsonl";
  truncate_log(log_path, tr.step_count());

  std::ofstream logfile(log_path, std::ios::app);
  if (!logfile) throw IoError("cannot write " + log_path.string());
  const auto t0 = std::chrono::steady_clock::now();
  while (tr.step_count() < cfg.train.total_steps) {
    auto s = tr.step();
    logfile << s.to_json() << "\n";
    const std::size_t done = tr.step_count();
    if (done % cfg.train.checkpoint_every == 0 || done == cfg.train.total_steps) {
      logfile.flush();
      tr.save_checkpoint(ckpt_dir / checkpoint_name(done));
      double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log << "step " << done << "/" << cfg.train.total_steps << "  d_A " << s.d_a << "  g_A " << s.g_a << "  ("
          << secs << " s)\n";
    }
  }
  logfile.close();

  if (val.empty()) {
    log << "no validation split; skipping model selection\n";
    return;
  }
  std::vector<fs::path> paths;
  for (const auto& [step, p] : list_checkpoints(ckpt_dir)) paths.push_back(p);
  auto sel = training::select_model(paths, train, val, cfg.seed, metrics::uses_emd(cfg.dataset));
  json scores = json::object();
  for (std::size_t i = 0; i < paths.size(); ++i) scores[paths[i].filename().string()] = sel.scores[i];
  json out{{"checkpoint", paths[sel.best].filename().string()}, {"scores", scores}};
  write_file(run_dir / "selected.json", out.dump(2) + "\n");
  log << "selected " << paths[sel.best].filename().string() << " (ratio " << sel.scores[sel.best] << ")\n";
}

// --- sample --------------------------------------------------------------------------------------

void cmd_sample(const SampleRequest& req, std::ostream& log) {
  auto model = training::load_ema_model(req.checkpoint);
  if (req.k && *req.k != model.cfg.k)
    throw InvalidInput("sample: requested k = " + std::to_string(*req.k) + " but the checkpoint has k = " +
                       std::to_string(model.cfg.k));
  std::vector<graphs::Graph> source;
  std::vector<std::size_t> ns = req.nodes;
  if (req.corpus) {
    auto c = datasets::load_corpus(*req.corpus);
    source = c.splits.empty() ? c.graphs : c.subset(datasets::Split::Test);
    ns.clear();
    for (const auto& g : source) ns.push_back(g.n());
  }
  if (req.real_spectra && !req.corpus) throw InvalidInput("sample: --real-spectra needs a conditioning corpus");
  if (ns.empty()) throw InvalidInput("sample: no node counts");

  std::vector<training::SpectralGraph> spectra;
  if (req.real_spectra) {
    spectra = training::prepare(source, model.cfg.k, model.cfg.n_max);
    if (spectra.size() < source.size())
      log << "skipped " << source.size() - spectra.size() << " conditioning graphs unusable for k / n_max\n";
    if (spectra.empty()) throw InvalidInput("sample: no usable conditioning graphs");
    ns.clear();
    for (const auto& s : spectra) ns.push_back(s.graph.n());
  }
  const std::size_t count = req.count ? req.count : ns.size();
  std::vector<std::size_t> want;
  std::vector<training::SpectralGraph> want_spectra;
  for (std::size_t i = 0; i < count; ++i) {
    want.push_back(ns[i % ns.size()]);
    if (req.real_spectra) want_spectra.push_back(spectra[i % spectra.size()]);
  }

  std::mt19937_64 rng(req.seed);
  const auto t0 = std::chrono::steady_clock::now();
  auto gs = training::sample_graphs(model, want, rng, 10, req.real_spectra ? &want_spectra : nullptr);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double batches = static_cast<double>((gs.size() + 9) / 10);

  datasets::GraphCorpus out;
  out.name = "generated";
  out.seed = req.seed;
  out.graphs = std::move(gs);
  datasets::save_corpus(out, req.out);
  json gen{{"graphs", out.graphs.size()}, {"batch_seconds", secs / batches}, {"real_spectra", req.real_spectra}};
  write_file(req.out / "generation.json", gen.dump(2) + "\n");
  log << "sampled " << out.graphs.size() << " graphs in " << secs << " s (" << secs / batches
      << " s per batch of 10) -> " << req.out.string() << "\n";
}

// --- evaluate ---------------------------------------------------------------------------------------

metrics::EvalReport cmd_evaluate(const fs::path& generated, const fs::path& train, const fs::path& test,
                                 const std::string& dataset, const fs::path& out, std::ostream& log) {
  auto gen = datasets::load_corpus(generated);
  auto tr = datasets::load_corpus(train);
  auto te = datasets::load_corpus(test);
  auto train_graphs = tr.splits.empty() ? tr.graphs : tr.subset(datasets::Split::Train);
  auto test_graphs = te.splits.empty() ? te.graphs : te.subset(datasets::Split::Test);
  std::string name = dataset.empty() ? te.name : dataset;
  double batch_seconds = 0;
  if (fs::is_directory(generated) && fs::exists(generated / "generation.json")) {
    try {
      batch_seconds = json::parse(read_file(generated / "generation.json")).at("batch_seconds").get<double>();
    } catch (const json::exception& e) {
      throw ParseError("generation.json: " + std::string(e.what()));
    }
  }
  auto report = metrics::evaluate(gen.graphs, train_graphs, test_graphs, name, batch_seconds);
  if (!report.valid) log << "note: no validity notion for '" << name << "'; valid and VUN columns omitted\n";
  log << report.to_json();
  if (!out.empty()) {
    fs::create_directories(out);
    write_file(out / "report.json", report.to_json());
    write_file(out / "report.tsv", metrics::EvalReport::tsv_header() + "\n" + report.tsv_row() + "\n");
  }
  return report;
}

// --- spectra --------------------------------------------------------------------------------------------

void cmd_spectra(const fs::path& corpus, std::size_t k, const fs::path& out, std::ostream& log) {
  auto c = datasets::load_corpus(corpus);
  std::ostringstream lines;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < c.graphs.size(); ++i) {
    const auto& g = c.graphs[i];
    json j{{"graph", i}, {"n", g.n()}};
    try {
      auto s = graphs::top_k_spectrum(g, k);
      j["eigenvalues"] = s.eigenvalues;
      json rows = json::array();
      for (std::size_t r = 0; r < g.n(); ++r) {
        std::vector<double> row(k);
        for (std::size_t col = 0; col < k; ++col) row[col] = s.eigenvectors(r, col);
        rows.push_back(row);
      }
      j["eigenvectors"] = rows;
    } catch (const Error& e) {
      j["error"] = e.what();
      ++skipped;
    }
    lines << j.dump() << "\n";
  }
  if (out.empty()) log << lines.str();
  else write_file(out, lines.str());
  log << c.graphs.size() << " graphs, " << skipped << " without a top-" << k << " spectrum\n";
}

}  // namespace specgen::cli
