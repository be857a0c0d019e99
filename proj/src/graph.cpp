#include "specgen/graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "specgen/errors.hpp"
#include "specgen/manifold.hpp"

namespace specgen::graphs {

Graph::Graph(std::size_t n) : n_(n), adj_(n * n, 0), nbrs_(n) {}

Graph Graph::from_edges(std::size_t n, const std::vector<Edge>& edges) {
  Graph g(n);
  for (const auto& [u, v] : edges) {
    if (u >= n || v >= n) throw InvalidInput("graph: edge endpoint out of range");
    if (u == v) throw InvalidInput("graph: self-loop on node " + std::to_string(u));
    g.add_edge(u, v);
  }
  return g;
}

Graph Graph::from_adjacency(std::size_t n, const std::vector<double>& dense) {
  if (dense.size() != n * n) throw InvalidInput("graph: adjacency size mismatch");
  Graph g(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (dense[i * n + j] > 0.5) g.add_edge(i, j);
  return g;
}

void Graph::add_edge(std::size_t u, std::size_t v) {
  if (u == v || u >= n_ || v >= n_) throw InvalidInput("graph: invalid edge");
  if (adj_[u * n_ + v]) return;
  adj_[u * n_ + v] = adj_[v * n_ + u] = 1;
  nbrs_[u].insert(std::lower_bound(nbrs_[u].begin(), nbrs_[u].end(), v), v);
  nbrs_[v].insert(std::lower_bound(nbrs_[v].begin(), nbrs_[v].end(), u), u);
  ++m_;
}

void Graph::remove_edge(std::size_t u, std::size_t v) {
  if (u >= n_ || v >= n_ || !adj_[u * n_ + v]) return;
  adj_[u * n_ + v] = adj_[v * n_ + u] = 0;
  nbrs_[u].erase(std::lower_bound(nbrs_[u].begin(), nbrs_[u].end(), v));
  nbrs_[v].erase(std::lower_bound(nbrs_[v].begin(), nbrs_[v].end(), u));
  --m_;
}

std::vector<Edge> Graph::edges() const {
  std::vector<Edge> out;
  out.reserve(m_);
  for (std::size_t u = 0; u < n_; ++u)
    for (std::size_t v : nbrs_[u])
      if (u < v) out.emplace_back(u, v);
  return out;
}

linalg::Matrix Graph::adjacency() const {
  linalg::Matrix a(n_, n_);
  for (std::size_t i = 0; i < n_ * n_; ++i) a.data()[i] = adj_[i];
  return a;
}

Graph Graph::permuted(const std::vector<std::size_t>& perm) const {
  if (perm.size() != n_) throw InvalidInput("graph: permutation size mismatch");
  Graph g(n_);
  for (const auto& [u, v] : edges()) g.add_edge(perm[u], perm[v]);
  return g;
}

Graph Graph::induced(const std::vector<std::size_t>& nodes) const {
  Graph g(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i)
    for (std::size_t j = i + 1; j < nodes.size(); ++j)
      if (has_edge(nodes[i], nodes[j])) g.add_edge(i, j);
  return g;
}

linalg::Matrix normalized_laplacian(const Graph& g) {
  const std::size_t n = g.n();
  std::vector<double> dinv(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    if (g.degree(i)) dinv[i] = 1.0 / std::sqrt(static_cast<double>(g.degree(i)));
  // Isolated nodes get a zero diagonal so the zero eigenvalue counts components.
  linalg::Matrix l(n, n);
  for (std::size_t u = 0; u < n; ++u) l(u, u) = g.degree(u) ? 1.0 : 0.0;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v : g.neighbors(u)) l(u, v) = -dinv[u] * dinv[v];
  return l;
}

Spectrum top_k_spectrum(const Graph& g, std::size_t k) {
  if (k >= g.n()) throw InvalidInput("top_k_spectrum: k must be below the node count");
  if (!is_connected(g)) throw DisconnectedGraph("top_k_spectrum: graph is disconnected");
  const auto e = linalg::sym_eig(normalized_laplacian(g));
  Spectrum s;
  s.k = k;
  s.eigenvalues.assign(e.values.begin() + 1, e.values.begin() + 1 + static_cast<std::ptrdiff_t>(k));
  s.eigenvectors = linalg::Matrix(g.n(), k);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < g.n(); ++i) s.eigenvectors(i, j) = e.vectors(i, j + 1);
  manifold::canonicalize_signs(s.eigenvectors);
  return s;
}

std::vector<std::size_t> component_labels(const Graph& g) {
  const std::size_t none = g.n();
  std::vector<std::size_t> label(g.n(), none);
  std::size_t next = 0;
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < g.n(); ++s) {
    if (label[s] != none) continue;
    label[s] = next;
    stack.push_back(s);
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      for (std::size_t v : g.neighbors(u))
        if (label[v] == none) {
          label[v] = next;
          stack.push_back(v);
        }
    }
    ++next;
  }
  return label;
}

std::size_t connected_components(const Graph& g) {
  const auto l = component_labels(g);
  return l.empty() ? 0 : *std::max_element(l.begin(), l.end()) + 1;
}

bool is_connected(const Graph& g) { return connected_components(g) <= 1; }

Graph largest_component(const Graph& g) {
  if (g.n() == 0) return g;
  const auto label = component_labels(g);
  const std::size_t c = *std::max_element(label.begin(), label.end()) + 1;
  std::vector<std::size_t> size(c, 0);
  for (std::size_t l : label) ++size[l];
  const std::size_t best = static_cast<std::size_t>(std::max_element(size.begin(), size.end()) - size.begin());
  std::vector<std::size_t> nodes;
  for (std::size_t i = 0; i < g.n(); ++i)
    if (label[i] == best) nodes.push_back(i);
  return g.induced(nodes);
}

std::size_t diameter(const Graph& g) {
  if (!is_connected(g)) throw DisconnectedGraph("diameter: graph is disconnected");
  std::size_t best = 0;
  std::vector<std::size_t> dist(g.n());
  std::deque<std::size_t> q;
  for (std::size_t s = 0; s < g.n(); ++s) {
    std::fill(dist.begin(), dist.end(), g.n());
    dist[s] = 0;
    q.assign(1, s);
    while (!q.empty()) {
      const std::size_t u = q.front();
      q.pop_front();
      for (std::size_t v : g.neighbors(u))
        if (dist[v] == g.n()) {
          dist[v] = dist[u] + 1;
          best = std::max(best, dist[v]);
          q.push_back(v);
        }
    }
  }
  return best;
}

std::vector<std::size_t> degree_histogram(const Graph& g) {
  std::size_t dmax = 0;
  for (std::size_t v = 0; v < g.n(); ++v) dmax = std::max(dmax, g.degree(v));
  std::vector<std::size_t> h(dmax + 1, 0);
  for (std::size_t v = 0; v < g.n(); ++v) ++h[g.degree(v)];
  return h;
}

std::vector<double> clustering_coefficients(const Graph& g) {
  std::vector<double> c(g.n(), 0.0);
  for (std::size_t v = 0; v < g.n(); ++v) {
    const auto& nb = g.neighbors(v);
    const std::size_t d = nb.size();
    if (d < 2) continue;
    std::size_t tri = 0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j) tri += g.has_edge(nb[i], nb[j]);
    c[v] = 2.0 * static_cast<double>(tri) / static_cast<double>(d * (d - 1));
  }
  return c;
}

}  // namespace specgen::graphs
