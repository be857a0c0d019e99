#include <algorithm>

#include "specgen/errors.hpp"
#include "specgen/graph.hpp"

namespace specgen::graphs {

namespace {

// Orbit of each member of a connected induced subgraph, from its internal
// degrees and edge count.
void classify(const Graph& g, const std::size_t* nodes, std::size_t size, std::size_t* orbit) {
  std::size_t deg[4] = {0, 0, 0, 0};
  std::size_t edges = 0;
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = i + 1; j < size; ++j)
      if (g.has_edge(nodes[i], nodes[j])) {
        ++deg[i];
        ++deg[j];
        ++edges;
      }
  for (std::size_t i = 0; i < size; ++i) {
    const std::size_t d = deg[i];
    switch (size) {
      case 2:
        orbit[i] = 0;
        break;
      case 3:
        orbit[i] = edges == 3 ? 3 : (d == 1 ? 1 : 2);
        break;
      default:
        switch (edges) {
          case 3: {
            const bool star = std::max({deg[0], deg[1], deg[2], deg[3]}) == 3;
            orbit[i] = star ? (d == 3 ? 7 : 6) : (d == 1 ? 4 : 5);
            break;
          }
          case 4: {
            const bool cycle = std::max({deg[0], deg[1], deg[2], deg[3]}) == 2;
            orbit[i] = cycle ? 8 : (d == 1 ? 9 : d == 2 ? 10 : 11);
            break;
          }
          case 5:
            orbit[i] = d == 2 ? 12 : 13;
            break;
          case 6:
            orbit[i] = 14;
            break;
          default:
            throw InvalidInput("graphlet_orbit: subgraph is not connected");
        }
    }
  }
}

struct Esu {
  const Graph& g;
  std::vector<OrbitCounts>& out;
  std::size_t sub[4];
  std::size_t orbit[4];

  bool in_sub(std::size_t v, std::size_t size) const {
    for (std::size_t i = 0; i < size; ++i)
      if (sub[i] == v) return true;
    return false;
  }

  bool adjacent_to_sub(std::size_t v, std::size_t size) const {
    for (std::size_t i = 0; i < size; ++i)
      if (g.has_edge(v, sub[i])) return true;
    return false;
  }

  // Wernicke's ESU: each connected induced subgraph is visited exactly once.
  void extend(std::size_t size, std::vector<std::size_t> ext, std::size_t root) {
    if (size >= 2) {
      classify(g, sub, size, orbit);
      for (std::size_t i = 0; i < size; ++i) ++out[sub[i]][orbit[i]];
    }
    if (size == 4) return;
    while (!ext.empty()) {
      const std::size_t w = ext.back();
      ext.pop_back();
      std::vector<std::size_t> next = ext;
      for (std::size_t u : g.neighbors(w))
        if (u > root && !in_sub(u, size) && !adjacent_to_sub(u, size) &&
            std::find(next.begin(), next.end(), u) == next.end())
          next.push_back(u);
      sub[size] = w;
      extend(size + 1, std::move(next), root);
    }
  }
};

}  // namespace

std::size_t graphlet_orbit(const Graph& g, const std::vector<std::size_t>& nodes, std::size_t pos) {
  if (nodes.size() < 2 || nodes.size() > 4 || pos >= nodes.size())
    throw InvalidInput("graphlet_orbit: need 2..4 nodes");
  std::size_t orbit[4];
  classify(g, nodes.data(), nodes.size(), orbit);
  return orbit[pos];
}

std::vector<OrbitCounts> orbit_counts(const Graph& g) {
  std::vector<OrbitCounts> out(g.n(), OrbitCounts{});
  Esu esu{g, out, {}, {}};
  for (std::size_t v = 0; v < g.n(); ++v) {
    esu.sub[0] = v;
    std::vector<std::size_t> ext;
    for (std::size_t u : g.neighbors(v))
      if (u > v) ext.push_back(u);
    esu.extend(1, std::move(ext), v);
  }
  return out;
}

}  // namespace specgen::graphs
