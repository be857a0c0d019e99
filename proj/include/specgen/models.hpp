#pragma once

// The three generators and three discriminators. Batches are padded to n_max
// nodes; `Conditioning` carries the per-sample node counts and the masks
// derived from them. Shapes:
//   eigenvalues  [B, k]
//   eigenvectors [B, N, k]   (padded rows zero)
//   adjacency    [B, N, N]

#include <cstdint>
#include <random>
#include <vector>

#include "specgen/nn.hpp"

namespace specgen::models {

using ad::Tensor;

struct ModelConfig {
  std::size_t n_max = 20;
  std::size_t k = 2;
  std::size_t noise_width = 100;
  std::size_t noise_layers = 4;
  std::size_t bank_size = 16;
  std::size_t rotation_layers = 3;
  std::size_t set_hidden = 32;
  std::size_t head_hidden = 32;
  std::size_t gen_ppgn_width = 32;
  std::size_t gen_ppgn_layers = 8;
  std::size_t disc_ppgn_width = 16;
  std::size_t disc_ppgn_layers = 4;
  double dropout = 0.1;
  double gumbel_tau = 1.0;

  /// Throws InvalidInput on zero sizes or dropout outside [0, 1).
  void validate() const;
};

struct Conditioning {
  std::vector<std::size_t> ns;
  std::size_t n_max = 0;
  Tensor node_mask;   // [B, N, 1]
  Tensor pair_mask;   // [B, N, N, 1]
  Tensor offdiag;     // [B, N, N] pair mask with the diagonal removed
  Tensor inv_sqrt_n;  // [B, 1, 1, 1]
  Tensor n_frac;      // [B, 1], n / n_ref
  std::size_t batch() const { return ns.size(); }
};
/// Masks are padded to n_max; the size feature is n / n_ref (n_ref = 0 means n_max).
Conditioning make_conditioning(const std::vector<std::size_t>& ns, std::size_t n_max, std::size_t n_ref = 0);

struct NoiseBundle {
  Tensor z_lambda;  // [B, k], unit rows
  Tensor z_u;       // [B, N, k], unit rows on true nodes, zero elsewhere
  Tensor z_a;
};
NoiseBundle sample_noise(const Conditioning& c, std::size_t k, std::mt19937_64& rng);

/// Separate MLPs turning raw noise into w_lambda, w_U, w_A.
class NoiseProcessor : public nn::Module {
 public:
  NoiseProcessor() = default;
  NoiseProcessor(const ModelConfig& cfg, std::mt19937_64& rng);
  struct Processed {
    Tensor w_lambda, w_u, w_a;
  };
  Processed forward(const NoiseBundle& z, const Conditioning& c) const;
  void collect(nn::ParamList& out, const std::string& prefix) const override;

 private:
  nn::MLP lambda_, u_, a_;
};

/// Upsampling gated 1D CNN. Output in (0, 2), sorted ascending.
class EigenvalueGenerator : public nn::Module {
 public:
  EigenvalueGenerator() = default;
  EigenvalueGenerator(const ModelConfig& cfg, std::mt19937_64& rng);
  Tensor forward(const Tensor& w_lambda, const Conditioning& c) const;
  void collect(nn::ParamList& out, const std::string& prefix) const override;

 private:
  std::size_t k_ = 0, seed_len_ = 1;
  nn::Linear seed_;
  std::vector<nn::GatedConv1d> convs_;
};

/// exp(P U^T - U P^T) with P from a set network; identity at initialisation.
class LeftRotation : public nn::Module {
 public:
  LeftRotation() = default;
  LeftRotation(std::size_t features, std::size_t hidden, std::size_t k, std::mt19937_64& rng);
  /// features [B, N, F], u [B, N, k] -> [B, N, N]
  Tensor forward(const Tensor& features, const Tensor& u, const Conditioning& c) const;
  void collect(nn::ParamList& out, const std::string& prefix) const override;

 private:
  nn::PointNetST net_;
};

/// Set network, masked mean, MLP to k x k, then proj_to_rotation.
class RightRotation : public nn::Module {
 public:
  RightRotation() = default;
  RightRotation(std::size_t features, std::size_t hidden, std::size_t k, std::mt19937_64& rng);
  /// features [B, N, F] -> [B, k, k]
  Tensor forward(const Tensor& features, const Conditioning& c) const;
  void collect(nn::ParamList& out, const std::string& prefix) const override;

 private:
  std::size_t k_ = 0;
  nn::PointNetST net_;
  nn::MLP head_;
};

class EigenvectorGenerator : public nn::Module {
 public:
  EigenvectorGenerator() = default;
  EigenvectorGenerator(const ModelConfig& cfg, std::mt19937_64& rng);

  struct Output {
    Tensor u;          // [B, N, k]
    Tensor selection;  // [B, m] bank weights
    Tensor start;      // [B, N, k] selected (masked, re-orthonormalised) bank entry
  };
  Output forward(const Tensor& lambda, const Tensor& w_u, const Conditioning& c, std::mt19937_64& rng,
                 bool hard = true) const;
  /// Only the rotation layers, starting from u0.
  Tensor refine(const Tensor& u0, const Tensor& lambda, const Tensor& w_u, const Conditioning& c) const;
  /// QR re-projection of every bank entry onto the Stiefel manifold.
  void project_bank();
  /// Max over entries of ||B^T B - I||_F.
  double bank_drift() const;
  const Tensor& bank() const { return bank_; }
  void collect(nn::ParamList& out, const std::string& prefix) const override;

 private:
  std::size_t n_max_ = 0, k_ = 0, m_ = 0;
  double tau_ = 1.0;
  nn::MLP query_;
  Tensor bank_;  // [m, N, k]
  std::vector<LeftRotation> left_;
  std::vector<RightRotation> right_;
};

/// [B, N, N, k + 1]: u_j u_j^T for every column and L0 = U diag(lambda) U^T.
Tensor spectral_channels(const Tensor& lambda, const Tensor& u);

class GraphGenerator : public nn::Module {
 public:
  GraphGenerator() = default;
  GraphGenerator(const ModelConfig& cfg, std::mt19937_64& rng);
  /// Soft adjacency [B, N, N]: symmetric, zero diagonal, entries in [0, 1].
  Tensor forward(const Tensor& lambda, const Tensor& u, const Tensor& w_a, const Conditioning& c,
                 const nn::Context& ctx) const;
  void collect(nn::ParamList& out, const std::string& prefix) const override;

 private:
  nn::PPGNStack stack_;
};

class GraphDiscriminator : public nn::Module {
 public:
  GraphDiscriminator() = default;
  GraphDiscriminator(const ModelConfig& cfg, std::mt19937_64& rng);
  /// Scores [B].
  Tensor forward(const Tensor& adj, const Tensor& lambda, const Tensor& u, const Conditioning& c,
                 const nn::Context& ctx) const;
  void collect(nn::ParamList& out, const std::string& prefix) const override;

 private:
  nn::PPGNStack stack_;
  nn::MLP diag_head_, offdiag_head_;
};

class EigenvectorDiscriminator : public nn::Module {
 public:
  EigenvectorDiscriminator() = default;
  EigenvectorDiscriminator(const ModelConfig& cfg, std::mt19937_64& rng);
  Tensor forward(const Tensor& u, const Tensor& lambda, const Conditioning& c) const;
  void collect(nn::ParamList& out, const std::string& prefix) const override;

 private:
  RightRotation rot1_, rot2_;
  nn::MLP pointwise_;
  nn::PointNetST set_;
  nn::MLP head_;
};

/// Strided gated 1D CNN with a linear read-out.
class EigenvalueDiscriminator : public nn::Module {
 public:
  EigenvalueDiscriminator() = default;
  EigenvalueDiscriminator(const ModelConfig& cfg, std::mt19937_64& rng);
  Tensor forward(const Tensor& lambda, const Conditioning& c) const;
  void collect(nn::ParamList& out, const std::string& prefix) const override;

 private:
  std::size_t k_ = 0, padded_ = 16;
  std::vector<nn::GatedConv1d> convs_;
  nn::Linear readout_;
};

struct Generators : nn::Module {
  NoiseProcessor noise;
  EigenvalueGenerator eigenvalues;
  EigenvectorGenerator eigenvectors;
  GraphGenerator graph;
  void collect(nn::ParamList& out, const std::string& prefix) const override;
};

struct Discriminators : nn::Module {
  EigenvalueDiscriminator eigenvalues;
  EigenvectorDiscriminator eigenvectors;
  GraphDiscriminator graph;
  void collect(nn::ParamList& out, const std::string& prefix) const override;
};

struct Model {
  ModelConfig cfg;
  Generators gen;
  Discriminators disc;
  Model() = default;
  Model(const ModelConfig& cfg, std::uint64_t seed);
  nn::ParamList parameters() const;
};

/// Optional real spectra that replace generated ones per sample.
struct SpectralOverride {
  Tensor lambda;                  // [B, k]
  Tensor u;                       // [B, N, k]
  std::vector<bool> use_real;     // per sample; empty means all generated
};

struct GeneratedSample {
  Tensor lambda;  // generated eigenvalues
  Tensor u;       // generated eigenvectors
  Tensor adj;     // soft adjacency conditioned on the (possibly overridden) spectra
  Tensor lambda_cond, u_cond;  // spectra the graph generator actually saw
};

/// noise -> eigenvalues -> eigenvectors -> adjacency. With an override, the
/// eigenvector and graph generators see real spectra where use_real is set.
GeneratedSample generate(const Model& m, const Conditioning& c, std::mt19937_64& rng,
                         const nn::Context& ctx, const SpectralOverride* real = nullptr);

/// Per-sample choice between two batched tensors along axis 0.
Tensor select_rows(const Tensor& a, const Tensor& b, const std::vector<bool>& take_a);

/// Differentiable ascending sort along the last axis of [B, k].
Tensor sort_rows(const Tensor& x);

}  // namespace specgen::models
