#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "specgen/errors.hpp"
#include "specgen/graph.hpp"

using namespace specgen;
using namespace specgen::graphs;

namespace {

Graph gnp(std::size_t n, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(p);
  Graph g(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (coin(rng)) g.add_edge(i, j);
  return g;
}

Graph path(std::size_t n) {
  Graph g(n);
  for (std::size_t i = 0; i + 1 < n; ++i) g.add_edge(i, i + 1);
  return g;
}

Graph cycle(std::size_t n) {
  Graph g = path(n);
  g.add_edge(n - 1, 0);
  return g;
}

Graph complete(std::size_t n) {
  Graph g(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) g.add_edge(i, j);
  return g;
}

Graph star(std::size_t leaves) {
  Graph g(leaves + 1);
  for (std::size_t i = 1; i <= leaves; ++i) g.add_edge(0, i);
  return g;
}

// Independent eigenvalues via Eigen's self-adjoint solver.
std::vector<double> eigen_values(const linalg::Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(i, j);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(e);
  const auto& v = es.eigenvalues();
  return std::vector<double>(v.data(), v.data() + v.size());
}

// Graphlet templates with per-node orbit labels, matched by brute-force permutation.
struct Template {
  std::size_t n;
  std::vector<Edge> edges;
  std::vector<std::size_t> orbit;
};

const std::vector<Template>& templates() {
  static const std::vector<Template> t = {
      {2, {{0, 1}}, {0, 0}},
      {3, {{0, 1}, {1, 2}}, {1, 2, 1}},
      {3, {{0, 1}, {1, 2}, {0, 2}}, {3, 3, 3}},
      {4, {{0, 1}, {1, 2}, {2, 3}}, {4, 5, 5, 4}},
      {4, {{0, 1}, {0, 2}, {0, 3}}, {7, 6, 6, 6}},
      {4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}}, {8, 8, 8, 8}},
      {4, {{0, 1}, {1, 2}, {2, 0}, {2, 3}}, {10, 10, 11, 9}},
      {4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {0, 2}}, {13, 12, 13, 12}},
      {4, {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}, {14, 14, 14, 14}},
  };
  return t;
}

std::vector<std::size_t> brute_orbits(const Graph& g, const std::vector<std::size_t>& nodes) {
  const Graph sub = g.induced(nodes);
  for (const auto& t : templates()) {
    if (t.n != nodes.size() || t.edges.size() != sub.edge_count()) continue;
    const Graph tg = Graph::from_edges(t.n, t.edges);
    std::vector<std::size_t> perm(t.n);
    std::iota(perm.begin(), perm.end(), 0);
    do {
      if (sub.permuted(perm) == tg) {
        std::vector<std::size_t> out(t.n);
        for (std::size_t i = 0; i < t.n; ++i) out[i] = t.orbit[perm[i]];
        return out;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
  return {};
}

std::vector<OrbitCounts> brute_orbit_counts(const Graph& g) {
  std::vector<OrbitCounts> out(g.n(), OrbitCounts{});
  const std::size_t n = g.n();
  for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
    const int size = __builtin_popcount(mask);
    if (size < 2 || size > 4) continue;
    std::vector<std::size_t> nodes;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1u << i)) nodes.push_back(i);
    if (!is_connected(g.induced(nodes))) continue;
    const auto orb = brute_orbits(g, nodes);
    REQUIRE(orb.size() == nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) ++out[nodes[i]][orb[i]];
  }
  return out;
}

// Canonical code: lexicographically smallest upper-triangle bit string over all permutations.
std::uint32_t canonical_code(const Graph& g) {
  std::vector<std::size_t> perm(g.n());
  std::iota(perm.begin(), perm.end(), 0);
  std::uint32_t best = ~0u;
  do {
    std::uint32_t code = 0;
    for (std::size_t i = 0; i < g.n(); ++i)
      for (std::size_t j = i + 1; j < g.n(); ++j) code = (code << 1) | g.has_edge(perm[i], perm[j]);
    best = std::min(best, code);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::vector<std::size_t> random_perm(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

}  // namespace

TEST_CASE("Graph: construction and edge list") {
  const Graph g = Graph::from_edges(4, {{2, 1}, {0, 3}, {1, 2}});
  CHECK(g.edge_count() == 2);
  CHECK(g.edges() == std::vector<Edge>{{0, 3}, {1, 2}});
  CHECK_THROWS_AS(Graph::from_edges(3, {{1, 1}}), InvalidInput);
  CHECK_THROWS_AS(Graph::from_edges(3, {{0, 3}}), InvalidInput);
}

TEST_CASE("normalized_laplacian: K2 and K3") {
  const auto l2 = normalized_laplacian(complete(2));
  CHECK(l2 == linalg::Matrix(2, 2, {1, -1, -1, 1}));
  const auto l3 = normalized_laplacian(complete(3));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(l3(i, j) == doctest::Approx(i == j ? 1.0 : -0.5));
}

TEST_CASE("normalized_laplacian: isolated node row is zero") {
  Graph g(3);
  g.add_edge(0, 1);
  const auto l = normalized_laplacian(g);
  CHECK(l(2, 2) == 0.0);
  CHECK(l(2, 0) == 0.0);
}

TEST_CASE("normalized_laplacian: eigenvalues in [0, 2] for random graphs") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 100; ++t) {
    const Graph g = gnp(10 + t % 10, 0.5, rng);
    for (double v : linalg::sym_eig(normalized_laplacian(g)).values) {
      CHECK(v >= -1e-9);
      CHECK(v <= 2 + 1e-9);
    }
  }
}

TEST_CASE("top_k_spectrum: C4 and star") {
  const auto oracle = eigen_values(normalized_laplacian(cycle(4)));
  CHECK(oracle[1] == doctest::Approx(1.0));
  CHECK(oracle[2] == doctest::Approx(1.0));
  const auto s = top_k_spectrum(cycle(4), 2);
  CHECK(s.eigenvalues[0] == doctest::Approx(oracle[1]));
  CHECK(s.eigenvalues[1] == doctest::Approx(oracle[2]));

  const auto so = eigen_values(normalized_laplacian(star(4)));
  const auto ss = top_k_spectrum(star(4), 2);
  CHECK(ss.eigenvalues[0] == doctest::Approx(so[1]));
  CHECK(ss.eigenvalues[1] == doctest::Approx(1.0));
  CHECK(so.back() == doctest::Approx(2.0));
}

TEST_CASE("top_k_spectrum: properties and errors") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 30; ++t) {
    Graph g = gnp(14, 0.4, rng);
    if (!is_connected(g)) continue;
    const auto s = top_k_spectrum(g, 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(s.eigenvalues[i] > 1e-8);
      if (i) CHECK(s.eigenvalues[i - 1] <= s.eigenvalues[i]);
    }
    CHECK(linalg::orthonormality_error(s.eigenvectors) < 1e-6);
    // L u = lambda u
    const auto l = normalized_laplacian(g);
    const auto lu = linalg::matmul(l, s.eigenvectors);
    for (std::size_t i = 0; i < 14; ++i)
      for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(lu(i, j) - s.eigenvalues[j] * s.eigenvectors(i, j)) < 1e-8);
  }
  Graph two(4);
  two.add_edge(0, 1);
  two.add_edge(2, 3);
  CHECK_THROWS_AS(top_k_spectrum(two, 1), DisconnectedGraph);
  CHECK_THROWS_AS(top_k_spectrum(cycle(4), 4), InvalidInput);
}

TEST_CASE("top_k_spectrum: slice reconstruction error is the energy of excluded eigenvalues") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const Graph g = gnp(10, 0.5, rng);
    if (!is_connected(g)) continue;
    const std::size_t k = 3;
    const auto s = top_k_spectrum(g, k);
    const auto l = normalized_laplacian(g);
    const auto rec = linalg::matmul(linalg::matmul(s.eigenvectors, linalg::diag(s.eigenvalues)),
                                    s.eigenvectors.transposed());
    const auto all = eigen_values(l);
    double excluded = 0.0;
    for (std::size_t i = k + 1; i < all.size(); ++i) excluded += all[i] * all[i];
    CHECK(linalg::frobenius_distance(rec, l) == doctest::Approx(std::sqrt(excluded)).epsilon(1e-8));
  }
}

TEST_CASE("connected_components: matches zero-eigenvalue multiplicity") {
  Graph tri2(6);
  for (auto [u, v] : std::vector<Edge>{{0, 1}, {1, 2}, {0, 2}, {3, 4}, {4, 5}, {3, 5}}) tri2.add_edge(u, v);
  CHECK(connected_components(tri2) == 2);
  CHECK(connected_components(complete(5)) == 1);
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    const Graph g = gnp(12, 0.12, rng);
    std::size_t zeros = 0;
    for (double v : eigen_values(normalized_laplacian(g))) zeros += std::abs(v) < 1e-6;
    CHECK(connected_components(g) == zeros);
  }
}

TEST_CASE("diameter") {
  CHECK(diameter(path(5)) == 4);
  CHECK(diameter(complete(5)) == 1);
  const Graph c = cycle(20);
  const double lambda1 = top_k_spectrum(c, 1).eigenvalues[0];
  const double bound = 1.0 / (2.0 * static_cast<double>(c.edge_count()) * lambda1);
  CHECK(bound <= 10.0);
  CHECK(static_cast<double>(diameter(c)) >= bound);
  CHECK_THROWS_AS(diameter(Graph(3)), DisconnectedGraph);
}

TEST_CASE("degree histogram and clustering") {
  const auto h = degree_histogram(complete(3));
  CHECK(h == std::vector<std::size_t>{0, 0, 3});
  for (double c : clustering_coefficients(complete(3))) CHECK(c == 1.0);
  CHECK(clustering_coefficients(star(3))[0] == 0.0);
  Graph paw = Graph::from_edges(4, {{0, 1}, {1, 2}, {2, 0}, {2, 3}});
  CHECK(clustering_coefficients(paw)[2] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("orbit counts match brute-force subset enumeration") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    const Graph g = gnp(8, 0.2 + 0.03 * t, rng);
    CHECK(orbit_counts(g) == brute_orbit_counts(g));
  }
  const auto k4 = orbit_counts(complete(4));
  CHECK(k4[0][14] == 1);
  CHECK(k4[0][3] == 3);
  CHECK(k4[0][0] == 3);
}

TEST_CASE("orbit counts: degree column equals node degree") {
  std::mt19937_64 rng(6);
  const Graph g = gnp(30, 0.2, rng);
  const auto oc = orbit_counts(g);
  for (std::size_t v = 0; v < g.n(); ++v) CHECK(oc[v][0] == g.degree(v));
}

TEST_CASE("isomorphism: basic cases") {
  Graph tri2(6);
  for (auto [u, v] : std::vector<Edge>{{0, 1}, {1, 2}, {0, 2}, {3, 4}, {4, 5}, {3, 5}}) tri2.add_edge(u, v);
  CHECK(isomorphism(cycle(6), tri2) == IsoResult::NotIsomorphic);
  std::mt19937_64 rng(7);
  for (int t = 0; t < 20; ++t) {
    const Graph g = gnp(20, 0.3, rng);
    const Graph h = g.permuted(random_perm(20, rng));
    CHECK(isomorphism(g, h) == IsoResult::Isomorphic);
    CHECK(invariant_hash(g) == invariant_hash(h));
  }
}

TEST_CASE("isomorphism: regular graphs need search beyond colour refinement") {
  // K3,3 and the prism are both 3-regular; colour refinement alone cannot separate them.
  const Graph k33 = Graph::from_edges(6, {{0, 3}, {0, 4}, {0, 5}, {1, 3}, {1, 4}, {1, 5}, {2, 3}, {2, 4}, {2, 5}});
  const Graph prism = Graph::from_edges(6, {{0, 1}, {1, 2}, {2, 0}, {3, 4}, {4, 5}, {5, 3}, {0, 3}, {1, 4}, {2, 5}});
  CHECK(isomorphism(k33, prism) == IsoResult::NotIsomorphic);
  std::mt19937_64 rng(8);
  CHECK(isomorphism(k33, k33.permuted(random_perm(6, rng))) == IsoResult::Isomorphic);
  CHECK(isomorphism(cycle(12), cycle(12).permuted(random_perm(12, rng))) == IsoResult::Isomorphic);
}

TEST_CASE("isomorphism: all 5-node graphs classified like brute-force canonical forms") {
  std::vector<Graph> all;
  std::vector<std::uint32_t> code;
  for (std::uint32_t bits = 0; bits < (1u << 10); ++bits) {
    Graph g(5);
    std::size_t b = 0;
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = i + 1; j < 5; ++j, ++b)
        if (bits & (1u << b)) g.add_edge(i, j);
    code.push_back(canonical_code(g));
    all.push_back(std::move(g));
  }
  CHECK(std::set<std::uint32_t>(code.begin(), code.end()).size() == 34);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < all.size(); i += 3)
    for (std::size_t j = i; j < all.size(); j += 5)
      wrong += (isomorphism(all[i], all[j]) == IsoResult::Isomorphic) != (code[i] == code[j]);
  CHECK(wrong == 0);
}

TEST_CASE("isomorphism: budget exhaustion reports Undecided") {
  const Graph a = cycle(30);
  std::mt19937_64 rng(9);
  const Graph b = a.permuted(random_perm(30, rng));
  CHECK(isomorphism(a, b, 3) == IsoResult::Undecided);
  CHECK(are_isomorphic(a, b, 3));
}

TEST_CASE("isomorphism: equivalence relation on a random sample") {
  std::mt19937_64 rng(10);
  std::vector<Graph> gs;
  for (int i = 0; i < 12; ++i) {
    Graph g = gnp(6, 0.5, rng);
    gs.push_back(g);
    gs.push_back(g.permuted(random_perm(6, rng)));
  }
  for (std::size_t i = 0; i < gs.size(); ++i) {
    CHECK(are_isomorphic(gs[i], gs[i]));
    for (std::size_t j = 0; j < gs.size(); ++j) {
      CHECK(are_isomorphic(gs[i], gs[j]) == are_isomorphic(gs[j], gs[i]));
      for (std::size_t k = 0; k < gs.size(); k += 3)
        if (are_isomorphic(gs[i], gs[j]) && are_isomorphic(gs[j], gs[k])) CHECK(are_isomorphic(gs[i], gs[k]));
    }
  }
}

TEST_CASE("largest_component") {
  Graph g(7);
  for (auto [u, v] : std::vector<Edge>{{0, 1}, {2, 3}, {3, 4}, {4, 2}, {5, 6}}) g.add_edge(u, v);
  const Graph l = largest_component(g);
  CHECK(l.n() == 3);
  CHECK(l.edge_count() == 3);
}
