#include "specgen/datasets.hpp"

#include <gmpxx.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "specgen/errors.hpp"

namespace specgen::datasets {

using json = nlohmann::json;

const char* split_name(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
    case Split::None:
      break;
  }
  return "none";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  if (s == "none") return Split::None;
  throw ParseError("unknown split tag '" + s + "'");
}

std::vector<Graph> GraphCorpus::subset(Split s) const {
  std::vector<Graph> out;
  for (std::size_t i = 0; i < graphs.size(); ++i)
    if ((splits.empty() ? Split::None : splits[i]) == s) out.push_back(graphs[i]);
  return out;
}

// --- predicates ------------------------------------------------------------------

namespace {

constexpr double kEps = 0.5 * 2.220446049250313e-16;
constexpr double kOrientBound = (3.0 + 16.0 * kEps) * kEps;
constexpr double kInCircleBound = (10.0 + 96.0 * kEps) * kEps;

int sign(const mpq_class& v) { return sgn(v); }

int orient_exact(const Point& a, const Point& b, const Point& c) {
  const mpq_class ax(a.x), ay(a.y), bx(b.x), by(b.y), cx(c.x), cy(c.y);
  return sign((ax - cx) * (by - cy) - (ay - cy) * (bx - cx));
}

int incircle_exact(const Point& a, const Point& b, const Point& c, const Point& d) {
  const mpq_class dx(d.x), dy(d.y);
  const mpq_class adx = mpq_class(a.x) - dx, ady = mpq_class(a.y) - dy;
  const mpq_class bdx = mpq_class(b.x) - dx, bdy = mpq_class(b.y) - dy;
  const mpq_class cdx = mpq_class(c.x) - dx, cdy = mpq_class(c.y) - dy;
  const mpq_class alift = adx * adx + ady * ady;
  const mpq_class blift = bdx * bdx + bdy * bdy;
  const mpq_class clift = cdx * cdx + cdy * cdy;
  return sign(alift * (bdx * cdy - cdx * bdy) + blift * (cdx * ady - adx * cdy) + clift * (adx * bdy - bdx * ady));
}

}  // namespace

int orient2d(const Point& a, const Point& b, const Point& c) {
  const double left = (a.x - c.x) * (b.y - c.y);
  const double right = (a.y - c.y) * (b.x - c.x);
  const double det = left - right;
  const double bound = kOrientBound * (std::abs(left) + std::abs(right));
  if (det > bound) return 1;
  if (-det > bound) return -1;
  return orient_exact(a, b, c);
}

int incircle(const Point& a, const Point& b, const Point& c, const Point& d) {
  const double adx = a.x - d.x, ady = a.y - d.y;
  const double bdx = b.x - d.x, bdy = b.y - d.y;
  const double cdx = c.x - d.x, cdy = c.y - d.y;
  const double bc = bdx * cdy - cdx * bdy, ca = cdx * ady - adx * cdy, ab = adx * bdy - bdx * ady;
  const double alift = adx * adx + ady * ady, blift = bdx * bdx + bdy * bdy, clift = cdx * cdx + cdy * cdy;
  const double det = alift * bc + blift * ca + clift * ab;
  const double permanent = (std::abs(bdx * cdy) + std::abs(cdx * bdy)) * alift +
                           (std::abs(cdx * ady) + std::abs(adx * cdy)) * blift +
                           (std::abs(adx * bdy) + std::abs(bdx * ady)) * clift;
  const double bound = kInCircleBound * permanent;
  if (det > bound) return 1;
  if (-det > bound) return -1;
  return incircle_exact(a, b, c, d);
}

// --- Delaunay ------------------------------------------------------------------------

// A triangle belongs to the Delaunay triangulation iff its circumcircle holds no
// other point; in general position these triangles tile the convex hull.
std::vector<std::array<std::size_t, 3>> delaunay_triangles(const std::vector<Point>& pts) {
  const std::size_t n = pts.size();
  if (n < 3) throw InvalidInput("delaunay: need at least 3 points");
  for (const auto& p : pts)
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw InvalidInput("delaunay: non-finite point");
  std::vector<std::array<std::size_t, 3>> tris;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      for (std::size_t k = j + 1; k < n; ++k) {
        const int o = orient2d(pts[i], pts[j], pts[k]);
        if (o == 0) throw InvalidInput("delaunay: collinear points");
        std::array<std::size_t, 3> t{i, j, k};
        if (o < 0) std::swap(t[1], t[2]);
        bool empty = true;
        for (std::size_t l = 0; l < n && empty; ++l) {
          if (l == i || l == j || l == k) continue;
          const int s = incircle(pts[t[0]], pts[t[1]], pts[t[2]], pts[l]);
          if (s == 0) throw InvalidInput("delaunay: cocircular points");
          empty = s < 0;
        }
        if (empty) tris.push_back(t);
      }
  return tris;
}

Graph delaunay(const std::vector<Point>& pts) {
  Graph g(pts.size());
  for (const auto& t : delaunay_triangles(pts))
    for (std::size_t e = 0; e < 3; ++e) {
      const std::size_t u = t[e], v = t[(e + 1) % 3];
      if (!g.has_edge(u, v)) g.add_edge(u, v);
    }
  return g;
}

// --- generators ----------------------------------------------------------------------------

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 over the pair
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

GraphCorpus gen_planar(const PlanarParams& p, std::uint64_t seed) {
  if (p.n < 3) throw InvalidInput("gen_planar: n must be at least 3");
  GraphCorpus c;
  c.name = "planar";
  c.seed = seed;
  c.params = {{"count", static_cast<double>(p.count)}, {"n", static_cast<double>(p.n)}};
  for (std::size_t i = 0; i < p.count; ++i) {
    std::mt19937_64 rng(derive_seed(seed, i));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (;;) {
      std::vector<Point> pts(p.n);
      for (auto& q : pts) q = {u(rng), u(rng)};
      try {
        c.graphs.push_back(delaunay(pts));
        break;
      } catch (const InvalidInput&) {
        // degenerate draw; resample
      }
    }
  }
  return c;
}

SbmDraw sample_sbm(const SbmParams& p, std::mt19937_64& rng) {
  if (p.min_blocks == 0 || p.min_blocks > p.max_blocks || p.min_size == 0 || p.min_size > p.max_size)
    throw InvalidInput("sample_sbm: invalid block ranges");
  std::uniform_int_distribution<std::size_t> nb(p.min_blocks, p.max_blocks), sz(p.min_size, p.max_size);
  std::bernoulli_distribution in(p.p_within), out(p.p_between);
  for (;;) {
    SbmDraw d;
    const std::size_t blocks = nb(rng);
    for (std::size_t b = 0; b < blocks; ++b) d.blocks.insert(d.blocks.end(), sz(rng), b);
    const std::size_t n = d.blocks.size();
    d.graph = Graph(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (d.blocks[i] == d.blocks[j] ? in(rng) : out(rng)) d.graph.add_edge(i, j);
    if (graphs::is_connected(d.graph)) return d;
  }
}

GraphCorpus gen_sbm(const SbmParams& p, std::uint64_t seed) {
  GraphCorpus c;
  c.name = "sbm";
  c.seed = seed;
  c.params = {{"count", static_cast<double>(p.count)},       {"min_blocks", static_cast<double>(p.min_blocks)},
              {"max_blocks", static_cast<double>(p.max_blocks)}, {"min_size", static_cast<double>(p.min_size)},
              {"max_size", static_cast<double>(p.max_size)},   {"p_within", p.p_within},
              {"p_between", p.p_between}};
  for (std::size_t i = 0; i < p.count; ++i) {
    std::mt19937_64 rng(derive_seed(seed, i));
    c.graphs.push_back(sample_sbm(p, rng).graph);
  }
  return c;
}

Graph sample_community(std::size_t n, const CommunityParams& p, std::mt19937_64& rng) {
  if (n < 2) throw InvalidInput("sample_community: need at least 2 nodes");
  const std::size_t h = n / 2;
  std::bernoulli_distribution in(p.p_within), out(p.p_between);
  for (;;) {
    Graph g(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if ((i < h) == (j < h) && in(rng)) g.add_edge(i, j);
    std::vector<std::size_t> left(h), right(n - h);
    for (std::size_t i = 0; i < h; ++i) left[i] = i;
    for (std::size_t i = h; i < n; ++i) right[i - h] = i;
    if (!graphs::is_connected(g.induced(left)) || !graphs::is_connected(g.induced(right))) continue;
    bool joined = false;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = h; j < n; ++j)
        if (out(rng)) {
          g.add_edge(i, j);
          joined = true;
        }
    if (!joined) g.add_edge(0, h);
    return g;
  }
}

GraphCorpus gen_community_small(const CommunityParams& p, std::uint64_t seed) {
  if (p.min_n < 2 || p.min_n > p.max_n) throw InvalidInput("gen_community_small: invalid size range");
  GraphCorpus c;
  c.name = "community-small";
  c.seed = seed;
  c.params = {{"count", static_cast<double>(p.count)}, {"min_n", static_cast<double>(p.min_n)},
              {"max_n", static_cast<double>(p.max_n)}, {"p_within", p.p_within},
              {"p_between", p.p_between}};
  for (std::size_t i = 0; i < p.count; ++i) {
    std::mt19937_64 rng(derive_seed(seed, i));
    const std::size_t n = std::uniform_int_distribution<std::size_t>(p.min_n, p.max_n)(rng);
    c.graphs.push_back(sample_community(n, p, rng));
  }
  return c;
}

GraphCorpus generate(const std::string& name, std::uint64_t seed) {
  if (name == "planar") return gen_planar({}, seed);
  if (name == "sbm") return gen_sbm({}, seed);
  if (name == "community-small") return gen_community_small({}, seed);
  throw InvalidInput("unknown dataset '" + name + "' (expected planar, sbm or community-small)");
}

// --- splits -----------------------------------------------------------------------------------

void split(GraphCorpus& corpus, std::uint64_t seed) {
  const std::size_t n = corpus.graphs.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  const std::size_t test = n / 5;
  const std::size_t val = (n - test) / 5;
  corpus.splits.assign(n, Split::Train);
  for (std::size_t i = 0; i < test; ++i) corpus.splits[order[i]] = Split::Test;
  for (std::size_t i = test; i < test + val; ++i) corpus.splits[order[i]] = Split::Val;
}

// --- files --------------------------------------------------------------------------------------

std::string format_graph(const Graph& g) {
  std::string out = "n " + std::to_string(g.n()) + "\n";
  for (const auto& [u, v] : g.edges()) out += std::to_string(u) + " " + std::to_string(v) + "\n";
  return out;
}

namespace {

[[noreturn]] void parse_fail(const std::string& source, std::size_t line, const std::string& what) {
  throw ParseError(source + ":" + std::to_string(line) + ": " + what);
}

bool parse_size(const std::string& tok, std::size_t& out) {
  if (tok.empty() || tok.size() > 18 || !std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; }))
    return false;
  out = std::stoull(tok);
  return true;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

Graph parse_graph(const std::string& text, const std::string& source) {
  if (text.empty()) parse_fail(source, 1, "empty file");
  if (text.back() != '\n') {
    const auto lines = static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) + 1;
    parse_fail(source, lines, "missing final newline (truncated file?)");
  }
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0, n = 0;
  Graph g;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string a, b, extra;
    ls >> a >> b;
    if (ls >> extra) parse_fail(source, lineno, "expected two fields, got more");
    if (!header) {
      if (a != "n" || !parse_size(b, n)) parse_fail(source, lineno, "expected header 'n <count>'");
      g = Graph(n);
      header = true;
      continue;
    }
    std::size_t u = 0, v = 0;
    if (!parse_size(a, u) || !parse_size(b, v)) parse_fail(source, lineno, "expected edge 'u v'");
    if (u >= n || v >= n) parse_fail(source, lineno, "node index out of range for n = " + std::to_string(n));
    if (u == v) parse_fail(source, lineno, "self-loop");
    if (g.has_edge(u, v)) parse_fail(source, lineno, "duplicate edge");
    g.add_edge(u, v);
  }
  if (!header) parse_fail(source, lineno, "missing header");
  return g;
}

Graph load_graph(const std::filesystem::path& path) { return parse_graph(read_file(path), path.string()); }

void save_graph(const Graph& g, const std::filesystem::path& path) { write_file(path, format_graph(g)); }

void save_corpus(const GraphCorpus& corpus, const std::filesystem::path& dir) {
  if (!corpus.splits.empty() && corpus.splits.size() != corpus.graphs.size())
    throw InvalidInput("save_corpus: split tags do not match graph count");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  json m;
  m["format"] = "specgen-corpus";
  m["version"] = 1;
  m["name"] = corpus.name;
  m["seed"] = corpus.seed;
  m["params"] = corpus.params;
  m["graphs"] = json::array();
  for (std::size_t i = 0; i < corpus.graphs.size(); ++i) {
    char file[32];
    std::snprintf(file, sizeof file, "graph_%05zu.txt", i);
    save_graph(corpus.graphs[i], dir / file);
    m["graphs"].push_back({{"file", file},
                           {"n", corpus.graphs[i].n()},
                           {"m", corpus.graphs[i].edge_count()},
                           {"split", split_name(corpus.splits.empty() ? Split::None : corpus.splits[i])}});
  }
  write_file(dir / "manifest.json", m.dump(1) + "\n");
}

GraphCorpus load_corpus(const std::filesystem::path& path) {
  GraphCorpus c;
  if (std::filesystem::is_regular_file(path)) {
    c.name = path.stem().string();
    c.graphs.push_back(load_graph(path));
    return c;
  }
  if (!std::filesystem::is_directory(path)) throw IoError("no such corpus: " + path.string());
  const auto manifest = path / "manifest.json";
  if (!std::filesystem::exists(manifest)) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(path))
      if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no graph files in " + path.string());
    c.name = path.filename().string();
    for (const auto& f : files) c.graphs.push_back(load_graph(f));
    return c;
  }
  json m;
  try {
    m = json::parse(read_file(manifest));
  } catch (const json::parse_error& e) {
    throw ParseError(manifest.string() + ": " + e.what());
  }
  try {
    if (m.at("format") != "specgen-corpus") throw ParseError(manifest.string() + ": not a corpus manifest");
    if (m.at("version") != 1)
      throw ParseError(manifest.string() + ": unsupported manifest version " + m.at("version").dump());
    c.name = m.at("name");
    c.seed = m.at("seed");
    c.params = m.at("params").get<std::map<std::string, double>>();
    bool tagged = false;
    std::size_t record = 0;
    for (const auto& rec : m.at("graphs")) {
      const std::string file = rec.at("file");
      Graph g = load_graph(path / file);
      if (g.n() != rec.at("n").get<std::size_t>() || g.edge_count() != rec.at("m").get<std::size_t>())
        throw ParseError(manifest.string() + ": record " + std::to_string(record) + " (" + file +
                         "): size differs from manifest (truncated file?)");
      const Split s = parse_split(rec.at("split"));
      tagged = tagged || s != Split::None;
      c.graphs.push_back(std::move(g));
      c.splits.push_back(s);
      ++record;
    }
    if (!tagged) c.splits.clear();
  } catch (const json::exception& e) {
    throw ParseError(manifest.string() + ": " + e.what());
  }
  return c;
}

}  // namespace specgen::datasets
