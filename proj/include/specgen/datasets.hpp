#pragma once

// Synthetic corpora (Planar, SBM, Community-small), the on-disk corpus format
// and deterministic train/val/test splits.
//
// On disk a corpus is a directory holding one edge-list file per graph plus
// manifest.json. Edge-list files are ASCII: "n <count>\n" followed by one
// "u v\n" line per edge, u < v, sorted lexicographically.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "specgen/graph.hpp"

namespace specgen::datasets {

using graphs::Graph;

enum class Split { None, Train, Val, Test };
const char* split_name(Split s);
/// Throws ParseError on an unknown name.
Split parse_split(const std::string& s);

struct GraphCorpus {
  std::string name;
  std::vector<Graph> graphs;
  std::vector<Split> splits;  // empty or one tag per graph
  std::uint64_t seed = 0;
  std::map<std::string, double> params;

  /// Graphs carrying the given tag, in corpus order.
  std::vector<Graph> subset(Split s) const;
  friend bool operator==(const GraphCorpus&, const GraphCorpus&) = default;
};

// --- Delaunay ------------------------------------------------------------------

struct Point {
  double x = 0, y = 0;
};
/// Sign of the orientation of (a, b, c): +1 counter-clockwise, 0 collinear.
/// Exact: a floating-point filter falls back to rational arithmetic.
int orient2d(const Point& a, const Point& b, const Point& c);
/// Sign of d relative to the circle through counter-clockwise a, b, c:
/// +1 inside, 0 on, -1 outside. Exact.
int incircle(const Point& a, const Point& b, const Point& c, const Point& d);

/// Delaunay edges of points in general position (no three collinear, no four
/// cocircular). Throws InvalidInput on a degenerate set or fewer than 3 points.
Graph delaunay(const std::vector<Point>& pts);
/// Triangles (i, j, k), counter-clockwise, of the same triangulation.
std::vector<std::array<std::size_t, 3>> delaunay_triangles(const std::vector<Point>& pts);

// --- generators --------------------------------------------------------------------

struct PlanarParams {
  std::size_t count = 200;
  std::size_t n = 64;
};
/// Delaunay graphs of uniform points in the unit square; degenerate draws are resampled.
GraphCorpus gen_planar(const PlanarParams& p, std::uint64_t seed);

struct SbmParams {
  std::size_t count = 200;
  std::size_t min_blocks = 2, max_blocks = 5;
  std::size_t min_size = 20, max_size = 40;
  double p_within = 0.3;
  double p_between = 0.05;
};
struct SbmDraw {
  Graph graph;
  std::vector<std::size_t> blocks;  // block label per node
};
/// One connected SBM graph (disconnected draws are resampled).
SbmDraw sample_sbm(const SbmParams& p, std::mt19937_64& rng);
GraphCorpus gen_sbm(const SbmParams& p, std::uint64_t seed);

struct CommunityParams {
  std::size_t count = 100;
  std::size_t min_n = 12, max_n = 20;
  double p_within = 0.7;
  double p_between = 0.05;
};
/// Two communities of sizes floor(n/2) and ceil(n/2), each G(size, p_within);
/// cross pairs join with p_between and at least one cross edge is forced.
/// Draws with a disconnected community are resampled.
Graph sample_community(std::size_t n, const CommunityParams& p, std::mt19937_64& rng);
GraphCorpus gen_community_small(const CommunityParams& p, std::uint64_t seed);

/// Seed for graph `index` of a corpus, so generation is index-addressable.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

// --- splits ------------------------------------------------------------------------------

/// Seeded shuffle; 20% test, then 20% of the remainder validation, rest train.
/// Counts round down for test and validation.
void split(GraphCorpus& corpus, std::uint64_t seed);

// --- files -----------------------------------------------------------------------------------

std::string format_graph(const Graph& g);
/// Throws ParseError naming `source` and the line on malformed input.
Graph parse_graph(const std::string& text, const std::string& source = "<string>");
Graph load_graph(const std::filesystem::path& path);
void save_graph(const Graph& g, const std::filesystem::path& path);

/// Writes graph_%05d.txt files and manifest.json into `dir` (created if missing).
void save_corpus(const GraphCorpus& corpus, const std::filesystem::path& dir);
/// Reads a corpus directory. A plain edge-list file or a directory of .txt
/// files without a manifest is accepted as an untagged corpus.
GraphCorpus load_corpus(const std::filesystem::path& path);

/// "planar" | "sbm" | "community-small"; throws InvalidInput otherwise.
GraphCorpus generate(const std::string& name, std::uint64_t seed);

}  // namespace specgen::datasets
