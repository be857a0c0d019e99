#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "specgen/linalg.hpp"

namespace specgen::graphs {

using Edge = std::pair<std::size_t, std::size_t>;

/// Undirected simple graph. Adjacency is kept both as a dense bit matrix and as
/// sorted neighbour lists.
class Graph {
 public:
  Graph() = default;
  explicit Graph(std::size_t n);
  /// Throws InvalidInput on self-loops or out-of-range endpoints; duplicates are merged.
  static Graph from_edges(std::size_t n, const std::vector<Edge>& edges);
  /// Entries > 0.5 become edges. The upper triangle is read; diagonal ignored.
  static Graph from_adjacency(std::size_t n, const std::vector<double>& dense);

  std::size_t n() const { return n_; }
  std::size_t edge_count() const { return m_; }
  bool has_edge(std::size_t u, std::size_t v) const { return adj_[u * n_ + v] != 0; }
  void add_edge(std::size_t u, std::size_t v);
  void remove_edge(std::size_t u, std::size_t v);
  std::size_t degree(std::size_t v) const { return nbrs_[v].size(); }
  const std::vector<std::size_t>& neighbors(std::size_t v) const { return nbrs_[v]; }
  /// Edges with u < v, sorted.
  std::vector<Edge> edges() const;

  linalg::Matrix adjacency() const;
  /// out.node(perm[i]) corresponds to this.node(i).
  Graph permuted(const std::vector<std::size_t>& perm) const;
  Graph induced(const std::vector<std::size_t>& nodes) const;

  friend bool operator==(const Graph& a, const Graph& b) { return a.n_ == b.n_ && a.adj_ == b.adj_; }

 private:
  std::size_t n_ = 0;
  std::size_t m_ = 0;
  std::vector<std::uint8_t> adj_;
  std::vector<std::vector<std::size_t>> nbrs_;
};

/// I - D^{-1/2} A D^{-1/2}. Rows and columns of isolated nodes are entirely
/// zero (diagonal included), as in D^{-1/2} (D - A) D^{-1/2}.
linalg::Matrix normalized_laplacian(const Graph& g);

struct Spectrum {
  std::size_t k = 0;
  std::vector<double> eigenvalues;  // ascending, zero eigenvalue excluded
  linalg::Matrix eigenvectors;      // n x k
};

/// Eigenpairs 2..k+1 of the normalised Laplacian with canonical column signs.
/// Throws DisconnectedGraph, or InvalidInput when k >= n.
Spectrum top_k_spectrum(const Graph& g, std::size_t k);

std::vector<std::size_t> component_labels(const Graph& g);
std::size_t connected_components(const Graph& g);
bool is_connected(const Graph& g);
/// Induced subgraph on the largest component (ties: lowest smallest node index).
Graph largest_component(const Graph& g);
/// Throws DisconnectedGraph.
std::size_t diameter(const Graph& g);

/// hist[d] = number of nodes with degree d; length max degree + 1.
std::vector<std::size_t> degree_histogram(const Graph& g);
std::vector<double> clustering_coefficients(const Graph& g);

/// Automorphism orbits of connected graphlets on 2..4 nodes:
///  0 edge | 1 path-3 end, 2 path-3 middle | 3 triangle |
///  4 path-4 end, 5 path-4 middle | 6 star leaf, 7 star centre | 8 4-cycle |
///  9 paw pendant, 10 paw degree-2, 11 paw degree-3 |
///  12 diamond degree-2, 13 diamond degree-3 | 14 K4
inline constexpr std::size_t kOrbits = 15;
using OrbitCounts = std::array<std::uint64_t, kOrbits>;
/// Per-node orbit counts by enumeration of connected induced subgraphs.
std::vector<OrbitCounts> orbit_counts(const Graph& g);
/// Orbit index of node `pos` within the connected induced subgraph `nodes` (size 2..4).
std::size_t graphlet_orbit(const Graph& g, const std::vector<std::size_t>& nodes, std::size_t pos);

enum class IsoResult { Isomorphic, NotIsomorphic, Undecided };

inline constexpr std::uint64_t kDefaultIsoBudget = 2'000'000;

/// Backtracking matcher with degree and colour-refinement pruning. Returns
/// Undecided once `budget` node expansions are spent.
IsoResult isomorphism(const Graph& a, const Graph& b, std::uint64_t budget = kDefaultIsoBudget);
/// Undecided counts as isomorphic.
bool are_isomorphic(const Graph& a, const Graph& b, std::uint64_t budget = kDefaultIsoBudget);
/// Permutation-invariant hash (sizes, degree sequence, refined colours).
std::uint64_t invariant_hash(const Graph& g);

}  // namespace specgen::graphs
