#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "specgen/errors.hpp"
#include "specgen/graph.hpp"
#include "specgen/manifold.hpp"
#include "specgen/training.hpp"

using namespace specgen;
using namespace specgen::ad;
using namespace specgen::training;
using models::ModelConfig;

namespace {

ModelConfig toy(std::size_t n_max, std::size_t k) {
  ModelConfig c;
  c.n_max = n_max;
  c.k = k;
  c.noise_width = 8;
  c.bank_size = 4;
  c.rotation_layers = 1;
  c.set_hidden = 8;
  c.head_hidden = 8;
  c.gen_ppgn_width = 8;
  c.gen_ppgn_layers = 2;
  c.disc_ppgn_width = 8;
  c.disc_ppgn_layers = 2;
  return c;
}

// Two dense blocks joined by one edge; connected for every n >= 4.
std::vector<Graph> two_block_graphs(std::size_t count, std::size_t lo, std::size_t hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> size(lo, hi);
  std::bernoulli_distribution keep(0.7);
  std::vector<Graph> out;
  for (std::size_t t = 0; t < count; ++t) {
    const std::size_t n = size(rng), h = n / 2;
    Graph g(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if ((i < h) == (j < h) && (j == i + 1 || keep(rng))) g.add_edge(i, j);
    g.add_edge(h - 1, h);
    out.push_back(g);
  }
  return out;
}

TrainConfig quick() {
  TrainConfig t;
  t.batch_size = 4;
  t.warmup_steps = 2;
  t.anneal_steps = 4;
  t.seed = 7;
  return t;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("specgen_test_training_" + name);
}

}  // namespace

TEST_CASE("wgan losses on identical and shifted scores") {
  const Tensor d = Tensor::constant({3}, {0.3, -0.2, 1.1});
  const Tensor zero = Tensor::constant({}, {0.0});
  auto l = wgan_lp_losses(d, d, zero, 5.0);
  CHECK(l.d.item() == doctest::Approx(0.0).epsilon(1e-15));

  l = wgan_lp_losses(d, d, Tensor::constant({}, {1.0}), 5.0);
  CHECK(l.d.item() == doctest::Approx(5.0));

  const double delta = 0.25;
  const Tensor up = add_scalar(d, delta);
  l = wgan_lp_losses(up, d, zero, 5.0);
  CHECK(l.d.item() == doctest::Approx(-delta));
  CHECK(l.g.item() == doctest::Approx(-(0.3 - 0.2 + 1.1) / 3.0));
}

TEST_CASE("gradient penalty of linear critics") {
  const Tensor x = Tensor::constant({4, 3}, std::vector<double>(12, 0.5));
  for (const auto& [slope, expected] : std::vector<std::pair<double, double>>{{0.5, 0.0}, {2.0, 1.0}, {3.0, 4.0}}) {
    // d(x)_b = slope * x_b0, so the per-sample gradient norm is |slope|.
    auto d = [slope = slope](const Tensor& in) {
      return scale(reshape(slice(in, 1, 0, 1), {in.size(0)}), slope);
    };
    CHECK(gradient_penalty(d, x, 1.0).item() == doctest::Approx(expected).epsilon(1e-9));
    CHECK(gradient_penalty(d, x, 2.5).item() == doctest::Approx(2.5 * expected).epsilon(1e-9));
  }
}

TEST_CASE("gradient penalty parameter gradient matches finite differences") {
  std::mt19937_64 rng(3);
  auto cfg = toy(12, 4);
  models::EigenvalueDiscriminator disc(cfg, rng);
  const auto c = models::make_conditioning({10, 12, 11}, 12);
  const Tensor x = Tensor::constant({3, 4}, {0.1, 0.5, 0.9, 1.3, 0.2, 0.4, 1.0, 1.9, 0.3, 0.6, 0.7, 1.2});
  // Scaled so the gradient norms sit well above 1 and away from the relu kink.
  auto d = [&](const Tensor& in) { return scale(disc.forward(in, c), 1e4); };
  const Tensor gp = gradient_penalty(d, x, 1.0);
  REQUIRE(gp.item() > 0.1);
  backward(gp);
  const auto params = disc.parameters("d");
  double worst = 0.0;
  std::size_t checked = 0;
  for (const auto& p : params) {
    Tensor t = p.tensor;
    // Parameters the penalty does not reach (the read-out bias) keep an empty grad.
    std::vector<double> g(t.grad().begin(), t.grad().end());
    if (g.empty()) g.assign(t.numel(), 0.0);
    for (std::size_t i = 0; i < t.numel(); i += std::max<std::size_t>(1, t.numel() / 3)) {
      const double h = 1e-5, orig = t.mutable_values()[i];
      t.mutable_values()[i] = orig + h;
      const double up = gradient_penalty(d, x, 1.0).item();
      t.mutable_values()[i] = orig - h;
      const double down = gradient_penalty(d, x, 1.0).item();
      t.mutable_values()[i] = orig;
      const double num = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(num - g[i]) / (std::abs(num) + std::abs(g[i]) + 1e-6));
      ++checked;
    }
  }
  CHECK(checked > 10);
  CHECK(worst < 1e-4);
}

TEST_CASE("graph perturbation") {
  std::mt19937_64 rng(11);
  const auto gs = two_block_graphs(3, 10, 14, 5);
  auto items = prepare(gs, 2, 16);
  std::vector<const SpectralGraph*> ptrs;
  for (auto& it : items) ptrs.push_back(&it);
  const auto batch = make_real_batch(ptrs, 16, 2);

  const Tensor same = perturb_graphs(batch.adj, batch.cond, 0.0, 0.0, rng);
  for (std::size_t i = 0; i < same.numel(); ++i) CHECK(same.values()[i] == batch.adj.values()[i]);

  const Tensor p = perturb_graphs(batch.adj, batch.cond, 0.1, 0.05, rng);
  const auto v = p.values();
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t i = 0; i < 16; ++i) {
      CHECK(v[(b * 16 + i) * 16 + i] == 0.0);
      for (std::size_t j = 0; j < 16; ++j) {
        const double x = v[(b * 16 + i) * 16 + j];
        CHECK(x == v[(b * 16 + j) * 16 + i]);
        CHECK(x >= 0.0);
        CHECK(x <= 1.0);
        if (i >= gs[b].n() || j >= gs[b].n()) CHECK(x == 0.0);
      }
    }
}

TEST_CASE("rewiring flips about a fraction p of slots") {
  std::mt19937_64 rng(12);
  const std::size_t n = 100, b = 21;  // 21 * 4950 = 103950 slots
  const auto c = models::make_conditioning(std::vector<std::size_t>(b, n), n);
  const Tensor zero = Tensor::constant({b, n, n}, std::vector<double>(b * n * n, 0.0));
  const Tensor p = perturb_graphs(zero, c, 0.1, 0.0, rng);
  double flipped = 0.0;
  for (double x : p.values()) flipped += x;
  const double frac = flipped / 2.0 / (b * n * (n - 1) / 2.0);
  CHECK(frac == doctest::Approx(0.1).epsilon(0.1));  // 0.1 +- 0.01
}

TEST_CASE("eigenvalue and eigenvector interpolation") {
  std::mt19937_64 rng(4);
  const Tensor r = Tensor::constant({2, 2}, {0.2, 0.8, 0.1, 0.3});
  const Tensor f = Tensor::constant({2, 2}, {1.2, 1.8, 0.1, 0.3});
  const Tensor i = interpolate_eigenvalues(r, f, rng);
  const double t = i.values()[0] - 0.2;
  CHECK(t >= 0.0);
  CHECK(t <= 1.0);
  CHECK(i.values()[1] == doctest::Approx(0.8 + t));
  CHECK(i.values()[2] == 0.1);

  const auto c = models::make_conditioning({6, 9}, 10);
  std::vector<double> ru(2 * 10 * 3, 0.0), fu(2 * 10 * 3, 0.0);
  for (std::size_t s = 0; s < 2; ++s) {
    const auto a = manifold::random_stiefel(c.ns[s], 3, rng), b = manifold::random_stiefel(c.ns[s], 3, rng);
    for (std::size_t p = 0; p < c.ns[s]; ++p)
      for (std::size_t q = 0; q < 3; ++q) {
        ru[(s * 10 + p) * 3 + q] = a(p, q);
        fu[(s * 10 + p) * 3 + q] = b(p, q);
      }
  }
  const Tensor out = interpolate_eigenvectors(Tensor::constant({2, 10, 3}, ru), Tensor::constant({2, 10, 3}, fu), c, rng);
  const auto v = out.values();
  for (std::size_t s = 0; s < 2; ++s) {
    linalg::Matrix m(c.ns[s], 3);
    for (std::size_t p = 0; p < 10; ++p)
      for (std::size_t q = 0; q < 3; ++q) {
        if (p >= c.ns[s]) {
          CHECK(v[(s * 10 + p) * 3 + q] == 0.0);
          continue;
        }
        m(p, q) = v[(s * 10 + p) * 3 + q];
      }
    const auto gram = linalg::matmul(m.transposed(), m);
    for (std::size_t p = 0; p < 3; ++p)
      for (std::size_t q = 0; q < 3; ++q) CHECK(gram(p, q) == doctest::Approx(p == q ? 1.0 : 0.0).epsilon(1e-9));
  }
}

TEST_CASE("teacher forcing schedule") {
  TrainConfig cfg;
  CHECK(teacher_tau(0, cfg) == 1.0);
  CHECK(teacher_tau(899, cfg) == 1.0);
  CHECK(teacher_tau(900, cfg) == doctest::Approx(1.0));
  CHECK(teacher_tau(1350, cfg) == doctest::Approx(0.9));
  CHECK(teacher_tau(1800, cfg) == doctest::Approx(0.8));
  CHECK(teacher_tau(4999, cfg) == doctest::Approx(0.8));
  for (std::size_t s = 900; s < 1800; ++s) CHECK(teacher_tau(s + 1, cfg) <= teacher_tau(s, cfg));

  std::mt19937_64 rng(1);
  for (bool b : teacher_forcing_mix(10, 50, cfg, rng)) CHECK(b);
  std::size_t real = 0;
  for (bool b : teacher_forcing_mix(3000, 10000, cfg, rng)) real += b;
  CHECK(real / 10000.0 == doctest::Approx(0.8).epsilon(0.02));
}

TEST_CASE("Adam leaves parameters unchanged under zero gradient") {
  Tensor w = Tensor::leaf({3}, {1.0, -2.0, 0.5});
  Adam opt({{"w", w}}, 1e-3, 0.5, 0.9, 1e-8);
  for (int i = 0; i < 5; ++i) {
    backward(scale(sum_all(w), 0.0));
    opt.step();
  }
  CHECK(w.values()[0] == 1.0);
  CHECK(w.values()[1] == -2.0);
  CHECK(w.values()[2] == 0.5);
  CHECK(opt.steps() == 5);
}

TEST_CASE("Adam first step moves each coordinate by lr against the gradient sign") {
  Tensor w = Tensor::leaf({2}, {1.0, 1.0});
  Adam opt({{"w", w}}, 0.01, 0.5, 0.9, 1e-12);
  backward(sum_all(mul(w, Tensor::constant({2}, {3.0, -0.2}))));
  opt.step();
  CHECK(w.values()[0] == doctest::Approx(0.99));
  CHECK(w.values()[1] == doctest::Approx(1.01));
  CHECK(w.grad().empty());
}

TEST_CASE("EMA converges to frozen parameters") {
  Tensor w = Tensor::leaf({2}, {3.0, -1.0});
  std::vector<std::vector<double>> shadow{{0.0, 0.0}};
  for (int i = 0; i < 5000; ++i) ema_update(shadow, {{"w", w}}, 0.995);
  CHECK(shadow[0][0] == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(shadow[0][1] == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("prepare skips graphs too small for k") {
  std::vector<Graph> gs = two_block_graphs(4, 8, 10, 2);
  gs.push_back(Graph::from_edges(3, {{0, 1}, {1, 2}}));
  std::size_t skipped = 0;
  const auto items = prepare(gs, 2, 20, &skipped);
  CHECK(items.size() == 4);
  CHECK(skipped == 1);
}

TEST_CASE("training steps keep the bank on the manifold and the losses finite") {
  const auto gs = two_block_graphs(12, 10, 16, 1);
  Trainer tr(toy(16, 2), quick(), gs);
  for (int i = 0; i < 8; ++i) {
    const auto log = tr.step();
    CHECK(std::isfinite(log.d_a));
    CHECK(std::isfinite(log.g_u));
    CHECK(log.bank_drift < 1e-6);
  }
  CHECK(tr.step_count() == 8);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto gs = two_block_graphs(12, 10, 16, 1);
  Trainer a(toy(16, 2), quick(), gs), b(toy(16, 2), quick(), gs);
  for (int i = 0; i < 10; ++i) {
    const auto la = a.step(), lb = b.step();
    CHECK(la.to_json() == lb.to_json());
  }
}

TEST_CASE("checkpoint round trip and resume") {
  const auto gs = two_block_graphs(12, 10, 16, 1);
  const auto path = temp_path("ckpt.bin");
  Trainer a(toy(16, 2), quick(), gs);
  for (int i = 0; i < 4; ++i) a.step();
  a.save_checkpoint(path);

  Trainer b(toy(16, 2), quick(), gs);
  b.load_checkpoint(path);
  CHECK(b.step_count() == 4);
  for (int i = 0; i < 4; ++i) CHECK(a.step().to_json() == b.step().to_json());

  const auto ema = load_ema_model(path);
  CHECK(ema.parameters().size() == a.model().parameters().size());
  CHECK(checkpoint_model_config(path).k == 2);

  ModelConfig other = toy(16, 2);
  other.gen_ppgn_width = 4;
  Trainer c(other, quick(), gs);
  CHECK_THROWS_AS(c.load_checkpoint(path), IoError);
  std::filesystem::remove(path);
}

TEST_CASE("corrupted checkpoints are rejected") {
  const auto gs = two_block_graphs(6, 10, 12, 1);
  const auto path = temp_path("corrupt.bin");
  Trainer a(toy(12, 2), quick(), gs);
  a.step();
  a.save_checkpoint(path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(200);
    char ch = 0;
    f.read(&ch, 1);
    f.seekp(200);
    ch = static_cast<char>(ch ^ 0x40);
    f.write(&ch, 1);
  }
  Trainer b(toy(12, 2), quick(), gs);
  CHECK_THROWS_AS(b.load_checkpoint(path), IoError);
  CHECK_THROWS_AS(load_ema_model(path), IoError);
  std::filesystem::resize_file(path, 10);
  CHECK_THROWS_AS(b.load_checkpoint(path), IoError);
  CHECK_THROWS_AS(b.load_checkpoint(temp_path("missing.bin")), IoError);
  std::filesystem::remove(path);
}

TEST_CASE("sampling yields valid graphs of the requested sizes") {
  const auto gs = two_block_graphs(8, 10, 14, 1);
  Trainer tr(toy(16, 2), quick(), gs);
  std::mt19937_64 rng(9);
  const std::vector<std::size_t> ns{10, 16, 12, 14, 11};
  const auto out = sample_graphs(tr.ema_model(), ns, rng, 2);
  REQUIRE(out.size() == ns.size());
  for (std::size_t i = 0; i < ns.size(); ++i) CHECK(out[i].n() == ns[i]);

  const auto items = prepare(gs, 2, 16);
  std::vector<std::size_t> real_ns;
  for (const auto& it : items) real_ns.push_back(it.graph.n());
  CHECK(sample_graphs(tr.model(), real_ns, rng, 3, &items).size() == items.size());
  CHECK_THROWS_AS(sample_graphs(tr.model(), {17}, rng), InvalidInput);
}

TEST_CASE("train config validation") {
  TrainConfig t;
  t.lr = 0.0;
  CHECK_THROWS_AS(t.validate(), InvalidInput);
  t = TrainConfig{};
  t.tau_end = 1.5;
  CHECK_THROWS_AS(t.validate(), InvalidInput);
  t = TrainConfig{};
  CHECK_NOTHROW(t.validate());
}

TEST_CASE("model selection prefers samples resembling the data") {
  const auto train = two_block_graphs(12, 10, 16, 1);
  const auto val = two_block_graphs(8, 10, 16, 2);
  std::mt19937_64 rng(3);
  std::vector<Graph> noise;
  for (const auto& g : val) {
    Graph r(g.n());
    for (std::size_t u = 0; u < g.n(); ++u)
      for (std::size_t v = u + 1; v < g.n(); ++v)
        if (rng() % 2) r.add_edge(u, v);
    noise.push_back(r);
  }
  auto copies = std::vector<Graph>(train.begin(), train.begin() + 8);
  auto sel = select_samples({noise, copies}, train, val);
  CHECK(sel.best == 1);
  CHECK(sel.scores[1] < sel.scores[0]);
  CHECK_THROWS_AS(select_samples({}, train, val), InvalidInput);
  CHECK_THROWS_AS(select_samples({copies}, train, {}), InvalidInput);
  CHECK_THROWS_AS(select_model({}, train, val), InvalidInput);

  Trainer tr(toy(16, 2), quick(), train);
  tr.step();
  auto path = temp_path("select.ckpt");
  tr.save_checkpoint(path);
  auto one = select_model({path}, train, val, 5);
  CHECK(one.best == 0);
  CHECK(one.scores.size() == 1);
  CHECK(std::isfinite(one.scores[0]));
}
