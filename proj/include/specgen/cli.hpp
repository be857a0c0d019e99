#pragma once

// Batch commands behind the `specgen` executable. Each command throws the
// error taxonomy of errors.hpp; exit_code_for maps it to a process status.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "specgen/metrics.hpp"
#include "specgen/models.hpp"
#include "specgen/training.hpp"

namespace specgen::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,  // anything unclassified
  kUsage = 2,
  kInvalidInput = 3,
  kParseError = 4,
  kIoError = 5,
  kNumericalFailure = 6,
  kRankDeficient = 7,
  kDisconnectedGraph = 8,
};
int exit_code_for(const std::exception& e);

/// Everything a training run depends on. Serialised as JSON with a format tag
/// and version; keys missing on input keep their defaults, unknown keys are an error.
struct RunConfig {
  std::string dataset = "community-small";
  /// Corpus directory; when empty the corpus is generated from `dataset` and `seed`.
  std::string corpus;
  std::uint64_t seed = 0;
  models::ModelConfig model;  // n_max = 0 means the largest training graph
  training::TrainConfig train;

  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
};
RunConfig load_run_config(const fs::path& path);

/// Generates, splits and saves a named corpus. Prints a summary to `log`.
void cmd_dataset(const std::string& name, std::uint64_t seed, const fs::path& out, std::ostream& log);

/// Trains into `run_dir` (config.json, checkpoints/, log.jsonl). An existing
/// run with the same config resumes from its latest checkpoint; a different
/// config is refused. At the end the EMA checkpoints are ranked on the
/// validation split and the winner recorded in selected.json.
void cmd_train(const RunConfig& cfg, const fs::path& run_dir, std::ostream& log);

struct SampleRequest {
  fs::path checkpoint;
  /// Node counts come from this corpus (test split when tagged) ...
  std::optional<fs::path> corpus;
  /// ... or are given explicitly.
  std::vector<std::size_t> nodes;
  std::size_t count = 0;  // 0: one graph per node count
  bool real_spectra = false;
  std::optional<std::size_t> k;  // must match the checkpoint when set
  std::uint64_t seed = 0;
  fs::path out;
};
/// Writes the generated corpus plus generation.json (seconds per batch of 10).
void cmd_sample(const SampleRequest& req, std::ostream& log);

/// Evaluates a generated corpus against train and test corpora and writes
/// report.json and report.tsv into `out` when it is non-empty.
metrics::EvalReport cmd_evaluate(const fs::path& generated, const fs::path& train, const fs::path& test,
                                 const std::string& dataset, const fs::path& out, std::ostream& log);

/// One JSON line per graph with its top-k eigenvalues and eigenvectors.
void cmd_spectra(const fs::path& corpus, std::size_t k, const fs::path& out, std::ostream& log);

}  // namespace specgen::cli
