#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <span>

#include "doctest.h"
#include "specgen/errors.hpp"
#include "specgen/grad_check.hpp"
#include "specgen/nn.hpp"

using namespace specgen;
using namespace specgen::ad;
using namespace specgen::nn;

namespace {

Tensor rand_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor::constant(std::move(shape), std::move(v));
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// Rows of a [1, N, C] tensor reordered so out row perm[i] = in row i.
Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return index_select(x, 1, inv);
}

// Simultaneous row/column permutation of a [1, N, N, C] tensor.
Tensor conjugate(const Tensor& x, const std::vector<std::size_t>& perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return index_select(index_select(x, 1, inv), 2, inv);
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

}  // namespace

TEST_CASE("MLP: zero-initialised final layer outputs zero") {
  std::mt19937_64 rng(1);
  const MLP mlp({5, 8, 8, 3}, rng, true);
  const Tensor y = mlp.forward(rand_tensor({4, 5}, 2));
  for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("MLP: width-100 noise MLP on unit-norm input is finite") {
  std::mt19937_64 rng(3);
  const MLP mlp({100, 100, 100, 100, 100}, rng);
  Tensor z = rand_tensor({3, 100}, 4);
  std::vector<double> v = vec(z);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 100; ++j) s += v[r * 100 + j] * v[r * 100 + j];
    for (std::size_t j = 0; j < 100; ++j) v[r * 100 + j] /= std::sqrt(s);
  }
  const Tensor y = mlp.forward(Tensor::constant({3, 100}, v));
  CHECK(y.shape() == Shape{3, 100});
  for (double x : y.values()) CHECK(std::isfinite(x));
}

TEST_CASE("MLP: gradient matches finite differences") {
  std::mt19937_64 rng(5);
  const MLP mlp({4, 6, 6, 2}, rng);
  const Tensor w = rand_tensor({3, 2}, 6);
  const double err = grad_check([&](const Tensor& x) { return sum_all(mul(mlp.forward(x), w)); },
                                rand_tensor({3, 4}, 7));
  CHECK(err < 1e-5);
  // and with respect to a weight
  const auto params = mlp.parameters();
  CHECK(params.size() == 3 * 2 + 2 * 2);
  const Tensor x = rand_tensor({3, 4}, 8);
  const Tensor y = sum_all(mul(mlp.forward(x), w));
  backward(y);
  for (const auto& p : params) CHECK(p.tensor.grad().size() == p.tensor.numel());
}

TEST_CASE("Linear: shape mismatch") {
  std::mt19937_64 rng(9);
  const Linear lin(3, 2, rng);
  CHECK_THROWS_AS(lin.forward(Tensor::zeros({2, 4})), InvalidInput);
  CHECK_THROWS_AS(Linear(0, 2, rng), InvalidInput);
}

TEST_CASE("PointNetST: permutation equivariance") {
  std::mt19937_64 rng(10);
  const PointNetST net(3, 8, 4, rng);
  const Tensor x = rand_tensor({1, 9, 3}, 11);
  const Tensor mask = node_mask({9}, 9);
  const auto perm = shuffled(9, 12);
  const Tensor a = permute_rows(net.forward(x, mask), perm);
  const Tensor b = net.forward(permute_rows(x, perm), mask);
  CHECK(max_abs_diff(a.values(), b.values()) < 1e-12);
}

TEST_CASE("PointNetST: constant rows give constant rows") {
  std::mt19937_64 rng(13);
  const PointNetST net(2, 4, 3, rng);
  const Tensor x = Tensor::full({1, 6, 2}, 0.7);
  const Tensor y = net.forward(x, node_mask({6}, 6));
  for (std::size_t i = 1; i < 6; ++i)
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(y.at(i * 3 + c) - y.at(c)) < 1e-12);
}

TEST_CASE("PointNetST: padded rows do not change true rows") {
  std::mt19937_64 rng(14);
  const PointNetST net(3, 6, 2, rng);
  const Tensor x = rand_tensor({1, 5, 3}, 15);
  const Tensor padded = concat({x, rand_tensor({1, 4, 3}, 16, -10.0, 10.0)}, 1);
  const Tensor a = net.forward(x, node_mask({5}, 5));
  const Tensor b = slice(net.forward(padded, node_mask({5}, 9)), 1, 0, 5);
  CHECK(max_abs_diff(a.values(), b.values()) < 1e-10);
  const Tensor tail = slice(net.forward(padded, node_mask({5}, 9)), 1, 5, 4);
  for (double v : tail.values()) CHECK(v == 0.0);
}

TEST_CASE("PPGNLayer: conjugation equivariance") {
  std::mt19937_64 rng(17);
  const PPGNLayer layer(3, 5, rng);
  const std::size_t n = 7;
  const Tensor x = rand_tensor({1, n, n, 3}, 18);
  const Tensor mask = pair_mask({n}, n);
  const Tensor s = inv_sqrt_counts({n});
  const auto perm = shuffled(n, 19);
  const Tensor a = conjugate(layer.forward(x, mask, s), perm);
  const Tensor b = layer.forward(conjugate(x, perm), mask, s);
  CHECK(max_abs_diff(a.values(), b.values()) < 1e-10);
  CHECK_THROWS_AS(layer.forward(Tensor::zeros({1, 3, 4, 3}), mask, s), InvalidInput);
}

TEST_CASE("PPGNLayer: single node") {
  std::mt19937_64 rng(20);
  const PPGNLayer layer(2, 3, rng);
  const Tensor y = layer.forward(rand_tensor({1, 1, 1, 2}, 21), pair_mask({1}, 1), inv_sqrt_counts({1}));
  CHECK(y.shape() == Shape{1, 1, 1, 3});
  for (double v : y.values()) CHECK(std::isfinite(v));
}

TEST_CASE("PPGNLayer: activation variance stays bounded over 8 layers") {
  std::mt19937_64 rng(22);
  const std::size_t n = 24, c = 16;
  std::vector<PPGNLayer> layers;
  for (int l = 0; l < 8; ++l) layers.emplace_back(c, c, rng);
  Tensor h = rand_tensor({2, n, n, c}, 23, -3.0, 3.0);
  const Tensor mask = pair_mask({n, n}, n);
  const Tensor s = inv_sqrt_counts({n, n});
  for (const auto& layer : layers) {
    h = layer.forward(h, mask, s);
    double mean = 0.0, sq = 0.0;
    for (double v : h.values()) {
      mean += v;
      sq += v * v;
    }
    mean /= static_cast<double>(h.numel());
    const double var = sq / static_cast<double>(h.numel()) - mean * mean;
    CHECK(var >= 0.1);
    CHECK(var <= 10.0);
  }
}

TEST_CASE("PPGNStack: masked batch equals per-sample unpadded evaluation") {
  std::mt19937_64 rng(24);
  const PPGNStack stack(2, 8, 3, 2, rng);
  const std::vector<std::size_t> ns = {12, 20, 15, 17};
  const std::size_t n_max = 20;
  const Tensor x = rand_tensor({ns.size(), n_max, n_max, 2}, 25, -10.0, 10.0);
  const Tensor y = stack.forward(x, pair_mask(ns, n_max), inv_sqrt_counts(ns), {});
  for (std::size_t b = 0; b < ns.size(); ++b) {
    const std::size_t n = ns[b];
    const Tensor xb = slice(slice(slice(x, 0, b, 1), 1, 0, n), 2, 0, n);
    const Tensor yb = stack.forward(xb, pair_mask({n}, n), inv_sqrt_counts({n}), {});
    const Tensor from_batch = slice(slice(slice(y, 0, b, 1), 1, 0, n), 2, 0, n);
    CHECK(max_abs_diff(yb.values(), from_batch.values()) < 1e-10);
    for (double v : yb.values()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("PPGNStack: dropout only in training and needs an RNG") {
  std::mt19937_64 rng(26);
  const PPGNStack stack(1, 4, 1, 1, rng);
  const Tensor x = rand_tensor({1, 4, 4, 1}, 27);
  const Tensor m = pair_mask({4}, 4), s = inv_sqrt_counts({4});
  CHECK_THROWS_AS(stack.forward(x, m, s, Context{true, nullptr}), InvalidInput);
  const auto a = vec(stack.forward(x, m, s, {}));
  CHECK(vec(stack.forward(x, m, s, {})) == a);
  CHECK_THROWS_AS(PPGNStack(1, 4, 1, 1, rng, 1.0), InvalidInput);
}

TEST_CASE("PPGNStack: 8 layers, width 64, n = 64 forward in under 2 s") {
  std::mt19937_64 rng(28);
  const PPGNStack stack(4, 64, 8, 1, rng);
  const Tensor x = rand_tensor({1, 64, 64, 4}, 29);
  NoGradGuard guard;
  const auto t0 = std::chrono::steady_clock::now();
  const Tensor y = stack.forward(x, pair_mask({64}, 64), inv_sqrt_counts({64}), {});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("PPGN forward seconds: " << secs);
  CHECK(secs < 2.0);
  CHECK(y.shape() == Shape{1, 64, 64, 1});
}

TEST_CASE("gumbel_softmax: normalisation and low-temperature concentration") {
  std::mt19937_64 rng(30);
  const Tensor logits = Tensor::constant({1, 3}, {0.0, 1.0, 2.0});
  int concentrated = 0;
  for (int t = 0; t < 100; ++t) {
    const Tensor w = gumbel_softmax(logits, 1.0, rng, false);
    double s = 0.0;
    for (double v : w.values()) s += v;
    CHECK(std::abs(s - 1.0) < 1e-12);
    // Same noise draw at two temperatures: the cold sample sits on the argmax
    // of the perturbed logits, which the warm sample also ranks first.
    std::mt19937_64 a(1000 + t), b(1000 + t);
    const Tensor warm = gumbel_softmax(logits, 1.0, a, false);
    const Tensor cold = gumbel_softmax(logits, 0.01, b, false);
    const auto wv = warm.values(), cv = cold.values();
    CHECK(std::max_element(wv.begin(), wv.end()) - wv.begin() == std::max_element(cv.begin(), cv.end()) - cv.begin());
    if (*std::max_element(cv.begin(), cv.end()) > 0.99) ++concentrated;
  }
  // The noise occasionally brings two perturbed logits within tau * ln 99.
  CHECK(concentrated >= 90);
  CHECK_THROWS_AS(gumbel_softmax(logits, 0.0, rng, false), InvalidInput);
}

TEST_CASE("gumbel_softmax: equal logits select uniformly") {
  std::mt19937_64 rng(31);
  const std::size_t m = 5, trials = 10000;
  const Tensor logits = Tensor::zeros({1, m});
  std::vector<double> count(m, 0.0);
  for (std::size_t t = 0; t < trials; ++t) {
    const Tensor w = gumbel_softmax(logits, 1.0, rng, true);
    for (std::size_t j = 0; j < m; ++j) count[j] += w.at(j);
  }
  const double p = 1.0 / m, sigma = std::sqrt(trials * p * (1 - p));
  for (double c : count) CHECK(std::abs(c - trials * p) < 3.0 * sigma);
}

TEST_CASE("gumbel_softmax: hard sample is one-hot with the soft gradient") {
  const Tensor logits = Tensor::leaf({1, 3}, {0.3, -0.2, 0.9});
  const Tensor w = Tensor::constant({1, 3}, {1.0, 2.0, 3.0});
  std::mt19937_64 r1(32), r2(32);
  const Tensor hard = gumbel_softmax(logits, 1.0, r1, true);
  const Tensor soft = gumbel_softmax(logits, 1.0, r2, false);
  double s = 0.0;
  for (double v : hard.values()) {
    CHECK((v == 0.0 || v == 1.0));
    s += v;
  }
  CHECK(s == 1.0);
  const auto gh = grad(sum_all(mul(hard, w)), std::vector<Tensor>{logits});
  const auto gs = grad(sum_all(mul(soft, w)), std::vector<Tensor>{logits});
  CHECK(max_abs_diff(gh[0].values(), gs[0].values()) < 1e-15);
}

TEST_CASE("GatedConv1d: bounded output and saturated gate") {
  std::mt19937_64 rng(33);
  GatedConv1d conv(2, 3, 5, 1, true, rng);
  const Tensor x = rand_tensor({2, 8, 2}, 34, -10.0, 10.0);
  const Tensor y = conv.forward(x);
  CHECK(y.shape() == Shape{2, 8, 3});
  for (double v : y.values()) CHECK(std::abs(v) < 1.0);
  for (double& v : conv.gate_bias().mutable_values()) v = 1e3;
  const Tensor saturated = conv.forward(x);
  ParamList ps = conv.parameters();
  const Tensor branch = tanh(conv1d(x, ps[0].tensor, ps[1].tensor, 5));
  CHECK(max_abs_diff(saturated.values(), branch.values()) < 1e-12);
}

TEST_CASE("GatedConv1d: gradient matches finite differences") {
  std::mt19937_64 rng(35);
  const GatedConv1d conv(2, 2, 3, 2, true, rng);
  const Tensor w = rand_tensor({1, 4, 2}, 36);
  const double err =
      grad_check([&](const Tensor& x) { return sum_all(mul(conv.forward(x), w)); }, rand_tensor({1, 7, 2}, 37));
  CHECK(err < 1e-5);
}

TEST_CASE("node masks") {
  const Tensor m = node_mask({2, 3}, 3);
  CHECK(vec(m) == std::vector<double>{1, 1, 0, 1, 1, 1});
  const Tensor p = pair_mask({1}, 2);
  CHECK(vec(p) == std::vector<double>{1, 0, 0, 0});
  CHECK(inv_sqrt_counts({4}).item() == 0.5);
  CHECK_THROWS_AS(node_mask({4}, 3), InvalidInput);
}
