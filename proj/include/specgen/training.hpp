#pragma once

// Adversarial training of the three sub-GANs with a one-sided Lipschitz
// penalty, teacher forcing, Adam and an EMA shadow of the generators.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "specgen/graph.hpp"
#include "specgen/models.hpp"

namespace specgen::training {

using ad::Tensor;
using graphs::Graph;

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double adam_eps = 1e-8;
  double lambda_lp = 5.0;
  double gamma = 1.0;  // inner weight of the penalty; lambda_lp is applied outside
  std::size_t batch_size = 10;
  std::size_t total_steps = 5000;
  std::size_t warmup_steps = 900;
  std::size_t anneal_steps = 900;
  double tau_start = 1.0;
  double tau_end = 0.8;
  double ema = 0.995;
  double rewire_p = 0.1;
  double noise_var = 0.05;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 500;

  /// Throws InvalidInput on non-positive rates or a tau range outside [0, 1].
  void validate() const;
};

// --- losses ---------------------------------------------------------------------

struct WganLosses {
  Tensor d;  // mean(d_fake) - mean(d_real) + lambda_lp * gp
  Tensor g;  // -mean(d_fake)
};
WganLosses wgan_lp_losses(const Tensor& d_real, const Tensor& d_fake, const Tensor& gp, double lambda_lp);

/// gamma * mean_b max(0, ||grad_x d(x)[b]|| - 1)^2 where d maps a batch to
/// per-sample scores. The result is differentiable in d's parameters.
Tensor gradient_penalty(const std::function<Tensor(const Tensor&)>& d, const Tensor& x_hat, double gamma);

// --- penalty inputs -------------------------------------------------------------

/// Per-sample real + t (fake - real), t ~ U[0, 1]. Constant result.
Tensor interpolate_eigenvalues(const Tensor& real, const Tensor& fake, std::mt19937_64& rng);
/// Per-sample manifold::interpolate of the true n x k blocks with t ~ U[0, 1];
/// falls back to the real block when the blend is rank deficient.
Tensor interpolate_eigenvectors(const Tensor& real, const Tensor& fake, const models::Conditioning& c,
                                std::mt19937_64& rng);
/// Flips each off-diagonal slot (i < j) of the true block with probability p
/// (a -> 1 - a), adds symmetric N(0, var) noise, clips to [0, 1]. Constant result.
Tensor perturb_graphs(const Tensor& adj, const models::Conditioning& c, double p, double var, std::mt19937_64& rng);

// --- schedule --------------------------------------------------------------------

/// Probability of real conditioning: 1 during warmup, cosine from tau_start to
/// tau_end over the anneal window, tau_end afterwards.
double teacher_tau(std::size_t step, const TrainConfig& cfg);
std::vector<bool> teacher_forcing_mix(std::size_t step, std::size_t batch, const TrainConfig& cfg,
                                      std::mt19937_64& rng);

// --- optimiser ---------------------------------------------------------------------

class Adam {
 public:
  Adam() = default;
  Adam(const nn::ParamList& params, double lr, double beta1, double beta2, double eps);
  /// Applies one update from the accumulated grads, then clears them.
  void step();
  std::size_t steps() const { return t_; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_steps(std::size_t t) { t_ = t; }

 private:
  nn::ParamList params_;
  double lr_ = 1e-4, b1_ = 0.5, b2_ = 0.9, eps_ = 1e-8;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// shadow <- retention * shadow + (1 - retention) * param
void ema_update(std::vector<std::vector<double>>& shadow, const nn::ParamList& params, double retention);

// --- real data ---------------------------------------------------------------------

struct RealBatch {
  models::Conditioning cond;
  Tensor adj;     // [B, N, N]
  Tensor lambda;  // [B, k]
  Tensor u;       // [B, N, k], canonical column signs
};

struct SpectralGraph {
  Graph graph;
  graphs::Spectrum spectrum;
};

/// Keeps graphs with n > k + 1 and n <= n_max and computes their spectra.
/// Skipped graphs are counted in `skipped`.
std::vector<SpectralGraph> prepare(const std::vector<Graph>& graphs, std::size_t k, std::size_t n_max,
                                   std::size_t* skipped = nullptr);
RealBatch make_real_batch(const std::vector<const SpectralGraph*>& items, std::size_t n_max, std::size_t k);

/// Column signs fixed so the largest-magnitude entry of each column is positive
/// (per sample); the sign pattern is treated as a constant.
Tensor canonical_signs(const Tensor& u);

// --- trainer -------------------------------------------------------------------------

struct StepLog {
  std::size_t step = 0;
  double tau = 1.0;
  double d_lambda = 0, d_u = 0, d_a = 0;
  double g_lambda = 0, g_u = 0, g_a = 0;
  double gp_lambda = 0, gp_u = 0, gp_a = 0;
  double bank_drift = 0;
  std::string to_json() const;
};

class Trainer {
 public:
  Trainer(const models::ModelConfig& mcfg, const TrainConfig& tcfg, const std::vector<Graph>& train_graphs);

  /// One step on a batch drawn from the training graphs.
  StepLog step();
  /// One step on the given training-set indices.
  StepLog train_step(const std::vector<std::size_t>& indices);

  const models::Model& model() const { return model_; }
  models::Model& model() { return model_; }
  /// Deep copy of the model with generator parameters replaced by their EMA.
  models::Model ema_model() const;
  std::size_t step_count() const { return step_; }
  const TrainConfig& config() const { return tcfg_; }
  std::size_t usable_graphs() const { return data_.size(); }
  std::size_t skipped_graphs() const { return skipped_; }
  /// Where non-finite losses dump diagnostics; empty means the working directory.
  void set_dump_dir(std::filesystem::path dir) { dump_dir_ = std::move(dir); }

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores parameters, optimiser moments, EMA, step and RNG state. Throws
  /// IoError on an integrity failure or a configuration mismatch.
  void load_checkpoint(const std::filesystem::path& path);

 private:
  models::ModelConfig mcfg_;
  TrainConfig tcfg_;
  models::Model model_;
  std::vector<SpectralGraph> data_;
  std::size_t skipped_ = 0;
  nn::ParamList gen_params_, disc_params_;
  Adam gen_opt_, disc_opt_;
  std::vector<std::vector<double>> ema_;
  std::size_t step_ = 0;
  std::mt19937_64 rng_;
  std::filesystem::path dump_dir_;
};

/// Deep copy (parameters are shared handles, so copying a Model aliases them).
models::Model clone(const models::Model& m);
/// Overwrites parameter values in parameters() order.
void assign_parameters(const nn::ParamList& params, const std::vector<std::vector<double>>& values);

/// Loads the EMA generator of a checkpoint into a fresh model.
models::Model load_ema_model(const std::filesystem::path& checkpoint);
/// Reads only the configuration block of a checkpoint.
models::ModelConfig checkpoint_model_config(const std::filesystem::path& checkpoint);

/// Samples graphs for the given node counts, in batches of `batch`. Soft
/// adjacencies are binarised at 0.5.
std::vector<Graph> sample_graphs(const models::Model& m, const std::vector<std::size_t>& ns, std::mt19937_64& rng,
                                 std::size_t batch = 10, const std::vector<SpectralGraph>* real_spectra = nullptr);

// --- model selection -------------------------------------------------------------------

struct Selection {
  std::size_t best = 0;
  std::vector<double> scores;  // mean MMD ratio vs the train-vs-val baseline, per candidate
};

/// Scores pre-generated sample sets against `val`; argmin wins (first on ties).
/// Throws InvalidInput on no candidates or an empty validation set.
Selection select_samples(const std::vector<std::vector<Graph>>& candidates, const std::vector<Graph>& train,
                         const std::vector<Graph>& val, bool emd = false);

/// For each checkpoint, samples one graph per validation node count from its
/// EMA generator and scores it as above. Node counts outside (k, n_max] are skipped.
Selection select_model(const std::vector<std::filesystem::path>& checkpoints, const std::vector<Graph>& train,
                       const std::vector<Graph>& val, std::uint64_t seed = 0, bool emd = false);

}  // namespace specgen::training
