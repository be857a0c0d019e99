#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "specgen/datasets.hpp"
#include "specgen/errors.hpp"
#include "specgen/graph.hpp"

using namespace specgen;
using namespace specgen::datasets;

namespace {

// Integer oracles; inputs are small integers so every product is exact in 128 bits.
int orient_int(std::int64_t ax, std::int64_t ay, std::int64_t bx, std::int64_t by, std::int64_t cx, std::int64_t cy) {
  const __int128 d = static_cast<__int128>(ax - cx) * (by - cy) - static_cast<__int128>(ay - cy) * (bx - cx);
  return (d > 0) - (d < 0);
}

int incircle_int(const std::array<std::int64_t, 8>& p) {
  const __int128 adx = p[0] - p[6], ady = p[1] - p[7], bdx = p[2] - p[6], bdy = p[3] - p[7], cdx = p[4] - p[6],
                 cdy = p[5] - p[7];
  const __int128 d = (adx * adx + ady * ady) * (bdx * cdy - cdx * bdy) + (bdx * bdx + bdy * bdy) * (cdx * ady - adx * cdy) +
                     (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady);
  return (d > 0) - (d < 0);
}

// Convex hull vertex count by brute force: a point is on the hull iff some
// other point sees every remaining point on one side of the line through both.
std::size_t hull_size(const std::vector<Point>& pts) {
  std::size_t h = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    bool on_hull = false;
    for (std::size_t j = 0; j < pts.size() && !on_hull; ++j) {
      if (j == i) continue;
      bool all_left = true;
      for (std::size_t k = 0; k < pts.size() && all_left; ++k)
        if (k != i && k != j) all_left = orient2d(pts[i], pts[j], pts[k]) > 0;
      on_hull = all_left;
    }
    h += on_hull;
  }
  return h;
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto d = std::filesystem::temp_directory_path() / ("specgen_test_datasets_" + name);
  std::filesystem::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("orientation and in-circle agree with integer arithmetic on near-degenerate grids") {
  std::mt19937_64 rng(1);
  // Coordinates k * 2^-20 with k < 2^20 are exact doubles; collinear and
  // cocircular configurations are frequent on a coarse sub-grid.
  const double unit = std::ldexp(1.0, -20);
  std::uniform_int_distribution<std::int64_t> coarse(0, 6), fine(0, (1 << 20) - 1);
  std::size_t zeros = 0, filtered_nonzero = 0;
  for (int t = 0; t < 20000; ++t) {
    const bool near = t % 2 == 0;
    std::array<std::int64_t, 8> v{};
    for (auto& x : v) x = near ? coarse(rng) * 1024 : fine(rng);
    if (near && t % 4 == 0) v[1] += 1;  // one-ulp-of-grid nudges off degeneracy
    auto pt = [&](std::size_t i) { return Point{v[2 * i] * unit, v[2 * i + 1] * unit}; };
    const int o = orient_int(v[0], v[1], v[2], v[3], v[4], v[5]);
    CHECK(orient2d(pt(0), pt(1), pt(2)) == o);
    zeros += o == 0;
    if (o == 0) continue;
    // incircle expects a counter-clockwise triangle
    std::array<std::int64_t, 8> w = v;
    if (o < 0) {
      std::swap(w[2], w[4]);
      std::swap(w[3], w[5]);
    }
    const Point a{w[0] * unit, w[1] * unit}, b{w[2] * unit, w[3] * unit}, c{w[4] * unit, w[5] * unit},
        d{w[6] * unit, w[7] * unit};
    const int s = incircle_int(w);
    CHECK(incircle(a, b, c, d) == s);
    filtered_nonzero += s != 0;
  }
  CHECK(zeros > 100);
  CHECK(filtered_nonzero > 1000);
}

TEST_CASE("square corners are cocircular and degenerate sets are rejected") {
  CHECK(incircle({0, 0}, {1, 0}, {1, 1}, {0, 1}) == 0);
  CHECK(incircle({0, 0}, {1, 0}, {1, 1}, {0.5, 0.5}) == 1);
  CHECK(incircle({0, 0}, {1, 0}, {1, 1}, {3, 3}) == -1);
  CHECK(orient2d({0, 0}, {1, 1}, {2, 2}) == 0);
  CHECK_THROWS_AS(delaunay({{0, 0}, {1, 0}, {1, 1}, {0, 1}}), InvalidInput);
  CHECK_THROWS_AS(delaunay({{0, 0}, {1, 1}, {2, 2}}), InvalidInput);
  CHECK_THROWS_AS(delaunay({{0, 0}, {1, 1}}), InvalidInput);
}

TEST_CASE("Delaunay counts match the Euler relations of a hull triangulation") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t n : {3, 4, 5, 10, 30, 64}) {
    std::vector<Point> pts(n);
    for (auto& p : pts) p = {u(rng), u(rng)};
    const std::size_t h = hull_size(pts);
    const auto tris = delaunay_triangles(pts);
    const Graph g = delaunay(pts);
    CHECK(tris.size() == 2 * n - 2 - h);
    CHECK(g.edge_count() == 3 * n - 3 - h);
    CHECK(graphs::is_connected(g));
    for (const auto& t : tris) CHECK(orient2d(pts[t[0]], pts[t[1]], pts[t[2]]) == 1);
  }
}

TEST_CASE("planar corpus: 200 graphs on 64 nodes, connected, Euler bound") {
  const auto t0 = std::chrono::steady_clock::now();
  const auto c = gen_planar({}, 7);
  MESSAGE("planar corpus seconds: " << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  REQUIRE(c.graphs.size() == 200);
  for (const auto& g : c.graphs) {
    CHECK(g.n() == 64);
    CHECK(graphs::is_connected(g));
    CHECK(g.edge_count() <= 3 * 64 - 6);
    CHECK(g.edge_count() >= 2 * 64 - 3);
  }
  CHECK(gen_planar({5, 64}, 7).graphs == std::vector<Graph>(c.graphs.begin(), c.graphs.begin() + 5));
}

TEST_CASE("SBM corpus ranges and within-block edge statistics") {
  const auto c = gen_sbm({}, 3);
  REQUIRE(c.graphs.size() == 200);
  for (const auto& g : c.graphs) {
    CHECK(graphs::is_connected(g));
    CHECK(g.n() >= 40);
    CHECK(g.n() <= 200);
  }
  std::mt19937_64 rng(4);
  SbmParams p;
  for (int t = 0; t < 50; ++t) {
    const auto d = sample_sbm(p, rng);
    const std::size_t blocks = *std::max_element(d.blocks.begin(), d.blocks.end()) + 1;
    CHECK(blocks >= 2);
    CHECK(blocks <= 5);
    for (std::size_t b = 0; b < blocks; ++b) {
      const auto size = static_cast<std::size_t>(std::count(d.blocks.begin(), d.blocks.end(), b));
      CHECK(size >= 20);
      CHECK(size <= 40);
    }
  }
  // 3 blocks of 30: within-block edges per block ~ Binomial(435, 0.3).
  p.min_blocks = p.max_blocks = 3;
  p.min_size = p.max_size = 30;
  double total = 0.0;
  const int draws = 200;
  for (int t = 0; t < draws; ++t) {
    const auto d = sample_sbm(p, rng);
    for (const auto& [i, j] : d.graph.edges()) total += d.blocks[i] == d.blocks[j];
  }
  const double mean = total / (3.0 * draws);
  const double sigma = std::sqrt(435 * 0.3 * 0.7);
  CHECK(std::abs(mean - 130.5) < 3.0 * sigma / std::sqrt(3.0 * draws));
}

TEST_CASE("community-small corpus") {
  const auto c = gen_community_small({}, 5);
  REQUIRE(c.graphs.size() == 100);
  std::size_t recovered = 0;
  for (const auto& g : c.graphs) {
    CHECK(g.n() >= 12);
    CHECK(g.n() <= 20);
    CHECK(graphs::is_connected(g));
    // Sign of the Fiedler vector against the planted halves.
    const auto s = graphs::top_k_spectrum(g, 1);
    const std::size_t h = g.n() / 2;
    bool same = true, flipped = true;
    for (std::size_t i = 0; i < g.n(); ++i) {
      const bool side = s.eigenvectors(i, 0) > 0;
      same = same && side == (i < h);
      flipped = flipped && side != (i < h);
    }
    recovered += same || flipped;
  }
  CHECK(recovered >= 95);
  CHECK(gen_community_small({}, 5) == c);
  CHECK_FALSE(gen_community_small({}, 6) == c);
}

TEST_CASE("split: 80/20 with a fifth of train held out") {
  auto c = gen_community_small({}, 1);
  split(c, 9);
  REQUIRE(c.splits.size() == 100);
  CHECK(c.subset(Split::Test).size() == 20);
  CHECK(c.subset(Split::Val).size() == 16);
  CHECK(c.subset(Split::Train).size() == 64);
  auto d = gen_community_small({}, 1);
  split(d, 9);
  CHECK(c.splits == d.splits);
  split(d, 10);
  CHECK(c.splits != d.splits);
}

TEST_CASE("edge-list format is bit exact and round trips") {
  const Graph g = Graph::from_edges(4, {{2, 3}, {0, 2}, {1, 0}});
  CHECK(format_graph(g) == "n 4\n0 1\n0 2\n2 3\n");
  CHECK(parse_graph(format_graph(g)) == g);
  CHECK(parse_graph("n 0\n").n() == 0);
}

TEST_CASE("malformed edge lists raise ParseError with line context") {
  CHECK_THROWS_AS(parse_graph(""), ParseError);
  CHECK_THROWS_AS(parse_graph("n 3\n0 1"), ParseError);  // truncated mid-line
  CHECK_THROWS_AS(parse_graph("x 3\n"), ParseError);
  CHECK_THROWS_AS(parse_graph("n 3\n0 3\n"), ParseError);
  CHECK_THROWS_AS(parse_graph("n 3\n1 1\n"), ParseError);
  CHECK_THROWS_AS(parse_graph("n 3\n0 1\n1 0\n"), ParseError);
  CHECK_THROWS_AS(parse_graph("n 3\n0 -1\n"), ParseError);
  CHECK_THROWS_AS(parse_graph("n 3\n0 1 2\n"), ParseError);
  try {
    parse_graph("n 3\n0 1\n0 x\n", "g.txt");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("g.txt:3") != std::string::npos);
  }
}

TEST_CASE("corpus save and load") {
  auto c = gen_community_small({10, 12, 20, 0.7, 0.05}, 2);
  split(c, 1);
  const auto dir = temp_dir("roundtrip");
  save_corpus(c, dir);
  CHECK(load_corpus(dir) == c);

  // Untagged corpora keep an empty tag list.
  auto plain = gen_sbm({3}, 1);
  save_corpus(plain, dir / "plain");
  CHECK(load_corpus(dir / "plain") == plain);

  // A file cut at a line boundary is caught by the manifest edge count.
  {
    const auto f = dir / "graph_00003.txt";
    std::string text = format_graph(c.graphs[3]);
    text = text.substr(0, text.rfind('\n', text.size() - 2) + 1);
    std::ofstream(f, std::ios::binary) << text;
  }
  CHECK_THROWS_AS(load_corpus(dir), ParseError);
  std::ofstream(dir / "manifest.json") << "{\"format\": \"specgen-corpus\", \"version\": 99}";
  CHECK_THROWS_AS(load_corpus(dir), ParseError);
  std::ofstream(dir / "manifest.json") << "{not json";
  CHECK_THROWS_AS(load_corpus(dir), ParseError);
  CHECK_THROWS_AS(load_corpus(dir / "missing"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("large external corpus is accepted") {
  // 918 graphs with n in [100, 500], the size of the protein corpus.
  const auto dir = temp_dir("large");
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> size(100, 500);
  std::vector<Graph> gs;
  for (int i = 0; i < 918; ++i) {
    const std::size_t n = size(rng);
    Graph g(n);
    for (std::size_t v = 1; v < n; ++v) g.add_edge(v - 1, v);
    for (std::size_t v = 0; v + 5 < n; v += 3) g.add_edge(v, v + 5);
    char name[32];
    std::snprintf(name, sizeof name, "p%04d.txt", i);
    save_graph(g, dir / name);
    gs.push_back(std::move(g));
  }
  const auto c = load_corpus(dir);
  CHECK(c.graphs == gs);
  CHECK(c.splits.empty());
  CHECK(load_corpus(dir / "p0000.txt").graphs.front() == gs.front());
  std::filesystem::remove_all(dir);
}

TEST_CASE("generate by name") {
  CHECK(generate("community-small", 1).graphs.size() == 100);
  CHECK_THROWS_AS(generate("qm9", 1), InvalidInput);
  CHECK(parse_split("val") == Split::Val);
  CHECK_THROWS_AS(parse_split("dev"), ParseError);
}
