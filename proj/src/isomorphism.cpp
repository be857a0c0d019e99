#include <algorithm>
#include <numeric>
#include <unordered_set>

#include "specgen/graph.hpp"

namespace specgen::graphs {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::size_t class_count(const std::vector<std::uint64_t>& c) {
  return std::unordered_set<std::uint64_t>(c.begin(), c.end()).size();
}

// One round of colour refinement with hash-valued colours, so colours are
// comparable across graphs.
std::vector<std::uint64_t> refine(const Graph& g, const std::vector<std::uint64_t>& c) {
  std::vector<std::uint64_t> out(g.n());
  std::vector<std::uint64_t> nb;
  for (std::size_t v = 0; v < g.n(); ++v) {
    nb.clear();
    for (std::size_t u : g.neighbors(v)) nb.push_back(c[u]);
    std::sort(nb.begin(), nb.end());
    std::uint64_t h = mix(c[v]);
    for (std::uint64_t x : nb) h = mix(h ^ x);
    out[v] = h;
  }
  return out;
}

std::vector<std::uint64_t> initial_colours(const Graph& g) {
  std::vector<std::uint64_t> c(g.n());
  for (std::size_t v = 0; v < g.n(); ++v) c[v] = mix(g.degree(v));
  return c;
}

class Matcher {
 public:
  Matcher(const Graph& a, const Graph& b, const std::vector<std::uint64_t>& ca,
          const std::vector<std::uint64_t>& cb, std::uint64_t budget)
      : a_(a), b_(b), ca_(ca), cb_(cb), budget_(budget), map_(a.n(), a.n()), used_(b.n(), 0) {
    order_ = matching_order();
  }

  IsoResult run() {
    if (search(0)) return IsoResult::Isomorphic;
    return exhausted_ ? IsoResult::Undecided : IsoResult::NotIsomorphic;
  }

 private:
  // Rarest colour first, then nodes with the most already-ordered neighbours.
  std::vector<std::size_t> matching_order() const {
    const std::size_t n = a_.n();
    std::vector<std::size_t> freq(n);
    for (std::size_t v = 0; v < n; ++v)
      freq[v] = static_cast<std::size_t>(std::count(ca_.begin(), ca_.end(), ca_[v]));
    std::vector<std::size_t> order;
    std::vector<char> placed(n, 0);
    std::vector<std::size_t> links(n, 0);
    for (std::size_t step = 0; step < n; ++step) {
      std::size_t best = n;
      for (std::size_t v = 0; v < n; ++v) {
        if (placed[v]) continue;
        if (best == n || links[v] > links[best] ||
            (links[v] == links[best] &&
             (freq[v] < freq[best] || (freq[v] == freq[best] && a_.degree(v) > a_.degree(best)))))
          best = v;
      }
      placed[best] = 1;
      order.push_back(best);
      for (std::size_t u : a_.neighbors(best)) ++links[u];
    }
    return order;
  }

  bool feasible(std::size_t u, std::size_t v, std::size_t depth) const {
    if (ca_[u] != cb_[v] || used_[v]) return false;
    for (std::size_t i = 0; i < depth; ++i) {
      const std::size_t pu = order_[i];
      if (a_.has_edge(u, pu) != b_.has_edge(v, map_[pu])) return false;
    }
    return true;
  }

  bool search(std::size_t depth) {
    if (depth == order_.size()) return true;
    const std::size_t u = order_[depth];
    for (std::size_t v = 0; v < b_.n(); ++v) {
      if (!feasible(u, v, depth)) continue;
      if (++spent_ > budget_) {
        exhausted_ = true;
        return false;
      }
      map_[u] = v;
      used_[v] = 1;
      if (search(depth + 1)) return true;
      used_[v] = 0;
      if (exhausted_) return false;
    }
    return false;
  }

  const Graph& a_;
  const Graph& b_;
  const std::vector<std::uint64_t>& ca_;
  const std::vector<std::uint64_t>& cb_;
  std::uint64_t budget_;
  std::uint64_t spent_ = 0;
  bool exhausted_ = false;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> map_;
  std::vector<char> used_;
};

}  // namespace

IsoResult isomorphism(const Graph& a, const Graph& b, std::uint64_t budget) {
  if (a.n() != b.n() || a.edge_count() != b.edge_count()) return IsoResult::NotIsomorphic;
  auto ca = initial_colours(a);
  auto cb = initial_colours(b);
  for (std::size_t round = 0;; ++round) {
    auto sa = ca, sb = cb;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    if (sa != sb) return IsoResult::NotIsomorphic;
    if (round >= a.n()) break;
    auto na = refine(a, ca);
    auto nb = refine(b, cb);
    const bool stable = class_count(na) == class_count(ca);
    ca = std::move(na);
    cb = std::move(nb);
    if (stable) {
      sa = ca;
      sb = cb;
      std::sort(sa.begin(), sa.end());
      std::sort(sb.begin(), sb.end());
      if (sa != sb) return IsoResult::NotIsomorphic;
      break;
    }
  }
  return Matcher(a, b, ca, cb, budget).run();
}

bool are_isomorphic(const Graph& a, const Graph& b, std::uint64_t budget) {
  return isomorphism(a, b, budget) != IsoResult::NotIsomorphic;
}

std::uint64_t invariant_hash(const Graph& g) {
  auto c = initial_colours(g);
  for (int round = 0; round < 3; ++round) c = refine(g, c);
  std::sort(c.begin(), c.end());
  std::uint64_t h = mix(g.n()) ^ mix(g.edge_count() + 0x51ULL);
  for (std::uint64_t x : c) h = mix(h ^ x);
  return h;
}

}  // namespace specgen::graphs
