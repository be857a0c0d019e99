#pragma once

// Evaluation: MMD over graph statistics, validity checks (planarity, SBM),
// uniqueness / novelty, edit distance and the EvalReport record.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "specgen/graph.hpp"

namespace specgen::metrics {

using graphs::Graph;
using Feature = std::vector<double>;

// --- MMD --------------------------------------------------------------------------

enum class KernelKind { GaussianTV, GaussianEMD, Gaussian };

struct Kernel {
  KernelKind kind = KernelKind::GaussianTV;
  double sigma = 1.0;
  /// EMD ground distance between adjacent bins.
  double bin_width = 1.0;
  /// Normalise each feature to unit mass before comparing.
  bool normalize = true;
  double operator()(const Feature& x, const Feature& y) const;
};

/// Total variation distance 0.5 * sum |x - y|, shorter vector zero-padded.
double tv_distance(const Feature& x, const Feature& y);
/// 1-D earth mover's distance between equal-mass histograms on a unit grid.
double emd_1d(const Feature& x, const Feature& y);

/// mean k(a, a') + mean k(b, b') - 2 mean k(a, b) over all pairs (diagonal
/// included), clamped at 0. Throws InvalidInput on an empty set.
double mmd(const std::vector<Feature>& a, const std::vector<Feature>& b, const Kernel& k);

// --- statistics ---------------------------------------------------------------------

enum class Statistic { Degree, Clustering, Orbit, Spectral, Wavelet };
inline constexpr std::array<Statistic, 5> kStatistics{Statistic::Degree, Statistic::Clustering, Statistic::Orbit,
                                                      Statistic::Spectral, Statistic::Wavelet};
const char* statistic_name(Statistic s);

inline constexpr std::size_t kClusteringBins = 100;
inline constexpr std::size_t kSpectralBins = 200;
inline constexpr std::size_t kWaveletFilters = 12;
inline constexpr std::size_t kWaveletBins = 50;

Feature degree_feature(const Graph& g);
/// 100-bin histogram of local clustering coefficients over [0, 1].
Feature clustering_feature(const Graph& g);
/// Per-node mean of the 15 graphlet orbit counts.
Feature orbit_feature(const Graph& g);
/// 200-bin histogram of normalised-Laplacian eigenvalues over [-1e-5, 2].
Feature spectral_feature(const Graph& g);

/// The abspline filter bank on [0, 2]: one low-pass kernel and P - 1 band-pass
/// kernels at log-spaced scales.
class AbsplineBank {
 public:
  explicit AbsplineBank(std::size_t filters = kWaveletFilters, double lmax = 2.0);
  std::size_t size() const { return scales_.size() + 1; }
  double operator()(std::size_t p, double x) const;
  /// max over p and x in {0, 0.01, ..., 1.99}; upper end of the histogram range.
  double bound() const { return bound_; }

 private:
  std::vector<double> scales_;
  double lmin_ = 0.1, gamma_l_ = 1.0, bound_ = 1.0;
};

/// S[p][i] = sum_l phi_p(lambda_l)^2 u_l[i]^2 from the eigendecomposition.
std::vector<std::vector<double>> wavelet_energies(const Graph& g, const AbsplineBank& bank);
/// The same quantity as squared row norms of the filtered matrices phi_p(L).
std::vector<std::vector<double>> wavelet_energies_by_rows(const Graph& g, const AbsplineBank& bank);
/// Row-major P x Q histogram of S[p][.] over [0, bank.bound()].
Feature wavelet_feature(const Graph& g, const AbsplineBank& bank, std::size_t bins = kWaveletBins);

std::vector<Feature> features(const std::vector<Graph>& gs, Statistic s);

/// Kernels per statistic. `emd` selects the Gaussian-EMD variants used for
/// Community-small; orbit features always use a Gaussian with sigma 30.
Kernel kernel_for(Statistic s, bool emd);

struct MmdSet {
  std::array<double, 5> values{};  // indexed like kStatistics
  double& operator[](Statistic s) { return values[static_cast<std::size_t>(s)]; }
  double operator[](Statistic s) const { return values[static_cast<std::size_t>(s)]; }
};
MmdSet mmd_all(const std::vector<Graph>& a, const std::vector<Graph>& b, bool emd);

/// Mean of model / baseline over the statistics whose baseline is > 0; the
/// others are skipped with a warning on stderr. Throws InvalidInput if none remain.
double ratio(const MmdSet& model, const MmdSet& baseline);

// --- planarity -------------------------------------------------------------------------

/// Rotation system: rot[v] lists neighbours of v in clockwise order.
using Embedding = std::vector<std::vector<std::size_t>>;

/// Left-right planarity test. Returns an embedding when planar.
std::optional<Embedding> planar_embedding(const Graph& g);
bool is_planar(const Graph& g);
/// Checks that `rot` is a rotation system of g whose face count satisfies
/// Euler's formula on every component, i.e. that it certifies planarity.
bool verify_embedding(const Graph& g, const Embedding& rot);

struct KuratowskiCertificate {
  enum class Kind { K5, K33 } kind = Kind::K5;
  std::vector<graphs::Edge> edges;        // a subdivision of K5 or K3,3 inside g
  std::vector<std::size_t> branch_nodes;  // 5 or 6 nodes of degree 4 or 3
};
/// Edge-minimal non-planar subgraph, classified. Throws InvalidInput if g is planar.
KuratowskiCertificate kuratowski_subgraph(const Graph& g);
/// True iff the certificate's edges lie in g and form a subdivision of its kind.
bool verify_kuratowski(const Graph& g, const KuratowskiCertificate& c);

/// Connected and planar.
bool planar_validity(const Graph& g);

// --- SBM validity ------------------------------------------------------------------------

struct SbmReference {
  double p_within = 0.3;
  double p_between = 0.05;
  std::size_t min_blocks = 2, max_blocks = 5;
  std::size_t min_size = 20, max_size = 40;
  double min_match = 0.9;
};

struct SbmFit {
  std::vector<std::size_t> blocks;  // label per node, 0..c-1
  std::size_t communities = 0;
  double p_within = 0, p_between = 0;
  double match_within = 0, match_between = 0;  // Wald-test p-values
  bool sizes_ok = false;
  bool valid = false;
};

/// Spectral clustering for c in [min_blocks, max_blocks] (k-means on row-
/// normalised Laplacian eigenvectors), single-node likelihood refinement,
/// model choice by penalised Bernoulli likelihood, then a Wald test of the
/// pooled within / between probabilities against the reference.
SbmFit fit_sbm(const Graph& g, const SbmReference& ref = {});
bool sbm_validity(const Graph& g, const SbmReference& ref = {});

// --- uniqueness / novelty / edit distance ----------------------------------------------------

struct UniquenessNovelty {
  double unique = 0, novel = 0;
  std::optional<double> vun;  // when a validity flag is supplied
};
/// Percentages. A graph is unique if no earlier generated graph is isomorphic
/// to it, novel if no training graph is. Undecided isomorphism counts as isomorphic.
UniquenessNovelty uniqueness_novelty(const std::vector<Graph>& generated, const std::vector<Graph>& train,
                                     const std::vector<bool>* valid = nullptr);

/// Mean over pairs of the percentage of differing upper-triangle entries, the
/// larger graph clipped to the smaller node count. Throws InvalidInput on < 2 graphs.
double mean_edit_distance(const std::vector<Graph>& gs);

// --- reports -------------------------------------------------------------------------------------

struct EvalReport {
  std::string dataset;
  std::size_t generated = 0;
  MmdSet mmd;
  double ratio = 0;
  std::optional<double> valid;  // percent; absent without a validity notion
  double unique = 0, novel = 0;
  std::optional<double> vun;
  double batch_seconds = 0;  // time to generate one batch of 10 graphs

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
  static std::string tsv_header();
  std::string tsv_row() const;
  static EvalReport from_tsv(const std::string& header, const std::string& row);
};

enum class Validity { None, Planar, Sbm };
/// planar -> Planar, sbm -> Sbm, anything else -> None.
Validity validity_for(const std::string& dataset);
/// Community-small uses Gaussian-EMD kernels, everything else TV.
bool uses_emd(const std::string& dataset);

/// Full protocol: MMDs of generated vs test, Ratio against train vs test,
/// validity, uniqueness and novelty against train. Throws InvalidInput on an
/// empty generated or test set.
EvalReport evaluate(const std::vector<Graph>& generated, const std::vector<Graph>& train,
                    const std::vector<Graph>& test, const std::string& dataset, double batch_seconds = 0.0);

}  // namespace specgen::metrics
