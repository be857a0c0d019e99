#include <cmath>
#include <random>

#include "doctest.h"
#include "specgen/errors.hpp"
#include "specgen/grad_check.hpp"
#include "specgen/manifold.hpp"
#include "specgen/ops.hpp"

using namespace specgen;
using namespace specgen::manifold;
using linalg::Matrix;

namespace {

Matrix randn(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Matrix m(r, c);
  for (double& v : m.data()) v = nd(rng);
  return m;
}

Matrix rotation2(double theta) {
  return Matrix(2, 2, {std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta)});
}

}  // namespace

TEST_CASE("random_stiefel: parameter count and zero parameters") {
  CHECK(stiefel_parameter_count(10, 3) == 24);
  std::size_t free_entries = 0;
  for (std::size_t j = 0; j < 3; ++j) free_entries += 10 - 1 - j;
  CHECK(free_entries == 24);
  CHECK(stiefel_parameter_count(2, 2) == 1);
  const Matrix s = stiefel_skew(2, 2, {0.0});
  CHECK(linalg::matrix_exp(s).left_columns(2) == Matrix::identity(2));
  CHECK_THROWS_AS(stiefel_parameter_count(2, 3), InvalidInput);
}

TEST_CASE("random_stiefel: skew structure touches only the first k columns") {
  std::vector<double> p(stiefel_parameter_count(5, 2), 1.0);
  const Matrix s = stiefel_skew(5, 2, p);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(s(i, j) == -s(j, i));
      if (i > j) CHECK((s(i, j) != 0.0) == (j < 2));
    }
}

TEST_CASE("random_stiefel: orthonormal columns") {
  std::mt19937_64 rng(1);
  double mean_norm = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const Matrix u = random_stiefel(6, 2, rng);
    CHECK(linalg::orthonormality_error(u) < 1e-8);
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < 6; ++i) s += u(i, j) * u(i, j);
      mean_norm += std::sqrt(s);
    }
  }
  CHECK(std::abs(mean_norm / 2000.0 - 1.0) < 1e-8);
}

TEST_CASE("canonical_metric") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    const Matrix b = random_stiefel(7, 3, rng);
    CHECK(canonical_metric(b, b) == 1.0);
    CHECK(canonical_metric_raw(b, b) == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(canonical_metric(b * -1.0, b) == doctest::Approx(-1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(canonical_metric(Matrix(3, 2), Matrix(3, 1)), InvalidInput);
}

TEST_CASE("canonical_metric: tensor form agrees") {
  std::mt19937_64 rng(3);
  const Matrix q = randn(5, 2, rng), b = random_stiefel(5, 2, rng);
  const auto tq = ad::Tensor::constant({1, 5, 2}, q.vec());
  const auto tb = ad::Tensor::constant({1, 5, 2}, b.vec());
  CHECK(tensor::canonical_metric_raw(tq, tb).item() == doctest::Approx(canonical_metric_raw(q, b)).epsilon(1e-12));
}

TEST_CASE("proj_to_rotation") {
  CHECK(proj_to_rotation(Matrix(4, 4)) == Matrix::identity(4));
  Matrix upper(3, 3);
  upper(0, 1) = 2.0;
  upper(1, 1) = -1.0;
  upper(0, 2) = 5.0;
  CHECK(linalg::frobenius_distance(proj_to_rotation(upper), Matrix::identity(3)) < 1e-15);
  std::mt19937_64 rng(4);
  for (std::size_t n = 2; n <= 16; ++n) {
    Matrix x = randn(n, n, rng);
    const Matrix r = proj_to_rotation(x);
    CHECK(linalg::orthonormality_error(r) < 1e-8);
    CHECK(linalg::determinant(r) == doctest::Approx(1.0).epsilon(1e-6));
    // insensitive to the upper triangle and diagonal
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) x(i, j) = 0.0;
    CHECK(linalg::frobenius_distance(proj_to_rotation(x), r) < 1e-14);
  }
}

TEST_CASE("proj_to_rotation: tensor form matches and passes finite differences") {
  std::mt19937_64 rng(5);
  const Matrix x = randn(4, 4, rng);
  const auto t = tensor::proj_to_rotation(ad::Tensor::constant({4, 4}, x.vec()));
  const Matrix r = proj_to_rotation(x);
  for (std::size_t i = 0; i < 16; ++i) CHECK(t.at(i) == doctest::Approx(r.data()[i]).epsilon(1e-13));
  const Matrix w = randn(4, 4, rng);
  const auto wt = ad::Tensor::constant({4, 4}, w.vec());
  const double err = ad::grad_check(
      [&](const ad::Tensor& v) { return ad::sum_all(ad::mul(tensor::proj_to_rotation(v), wt)); },
      ad::Tensor::constant({4, 4}, x.vec()));
  CHECK(err < 1e-5);
}

TEST_CASE("apply_rotations") {
  std::mt19937_64 rng(6);
  const Matrix u = random_stiefel(6, 2, rng);
  CHECK(apply_rotations(u, Matrix::identity(6), Matrix::identity(2)).u == u);

  Matrix cur = u;
  for (int layer = 0; layer < 3; ++layer) {
    const auto r = apply_rotations(cur, proj_to_rotation(randn(6, 6, rng)), proj_to_rotation(randn(2, 2, rng)));
    CHECK(r.drift < 1e-7);
    CHECK_FALSE(r.reorthonormalized);
    cur = r.u;
  }
  CHECK(linalg::orthonormality_error(cur) < 1e-7);

  const auto fwd = apply_rotations(u, Matrix::identity(6), rotation2(0.7));
  const auto back = apply_rotations(fwd.u, Matrix::identity(6), rotation2(-0.7));
  CHECK(linalg::frobenius_distance(back.u, u) < 1e-14);
  CHECK_THROWS_AS(apply_rotations(u, Matrix::identity(5), Matrix::identity(2)), InvalidInput);
}

TEST_CASE("apply_rotations: drift over ten layers stays small") {
  std::mt19937_64 rng(7);
  Matrix cur = random_stiefel(12, 4, rng);
  for (int layer = 0; layer < 10; ++layer)
    cur = apply_rotations(cur, proj_to_rotation(randn(12, 12, rng)), proj_to_rotation(randn(4, 4, rng))).u;
  CHECK(linalg::orthonormality_error(cur) < 1e-7);
}

TEST_CASE("apply_rotations: drift beyond threshold triggers QR") {
  Matrix u(3, 1, std::vector<double>{1.0 + 1e-3, 0.0, 0.0});
  const auto r = apply_rotations(u, Matrix::identity(3), Matrix::identity(1));
  CHECK(r.reorthonormalized);
  CHECK(linalg::orthonormality_error(r.u) < 1e-12);
}

TEST_CASE("canonicalize") {
  Matrix col(2, 1, std::vector<double>{-0.9, 0.1});
  canonicalize_signs(col);
  CHECK(col(0, 0) == 0.9);
  CHECK(col(1, 0) == -0.1);

  std::mt19937_64 rng(8);
  std::bernoulli_distribution coin(0.5);
  for (int t = 0; t < 50; ++t) {
    const Matrix u = random_stiefel(8, 3, rng);
    const auto c = canonicalize(u);
    CHECK(canonicalize(c.u).u == c.u);
    Matrix flipped = u;
    for (std::size_t j = 0; j < 3; ++j)
      if (coin(rng))
        for (std::size_t i = 0; i < 8; ++i) flipped(i, j) = -flipped(i, j);
    CHECK(canonicalize(flipped).u == c.u);
    // rows are sorted descending
    for (std::size_t i = 1; i < 8; ++i) CHECK(c.u(i - 1, 0) >= c.u(i, 0) - kLexTolerance);
    // row_order maps back to the (sign-fixed) input rows
    for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(c.u(i, 1)) == std::abs(u(c.row_order[i], 1)));
  }
}

TEST_CASE("canonicalize: row permutation of the input does not change the result") {
  std::mt19937_64 rng(9);
  const Matrix u = random_stiefel(7, 2, rng);
  std::vector<std::size_t> p = {3, 0, 6, 1, 5, 2, 4};
  Matrix pu(7, 2);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 2; ++j) pu(p[i], j) = u(i, j);
  CHECK(canonicalize(pu).u == canonicalize(u).u);
}

TEST_CASE("interpolate") {
  std::mt19937_64 rng(10);
  for (int t = 0; t < 20; ++t) {
    const Matrix a = random_stiefel(9, 3, rng), b = random_stiefel(9, 3, rng);
    const Matrix i0 = interpolate(a, b, 0.0);
    const Matrix i1 = interpolate(a, b, 1.0);
    const Matrix ca = canonicalize(a).u, cb = canonicalize(b).u;
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t i = 0; i < 9; ++i) {
        const double s0 = i0(0, j) * ca(0, j) >= 0 ? 1.0 : -1.0;
        const double s1 = i1(0, j) * cb(0, j) >= 0 ? 1.0 : -1.0;
        CHECK(std::abs(i0(i, j) - s0 * ca(i, j)) < 1e-10);
        CHECK(std::abs(i1(i, j) - s1 * cb(i, j)) < 1e-10);
      }
    CHECK(linalg::orthonormality_error(interpolate(a, b, 0.5)) < 1e-8);
  }
  // Halfway between I and a reflection the blend is singular.
  const double c = M_SQRT1_2;
  CHECK_THROWS_AS(interpolate(Matrix::identity(2), Matrix(2, 2, {c, c, c, -c}), 0.5), RankDeficient);
}

TEST_CASE("gram_schmidt tensor matches QR with positive diagonal") {
  std::mt19937_64 rng(11);
  const Matrix x = randn(6, 3, rng);
  const auto q = tensor::gram_schmidt(ad::Tensor::constant({6, 3}, x.vec()));
  const Matrix ref = linalg::qr(x).q;
  for (std::size_t i = 0; i < 18; ++i) CHECK(q.at(i) == doctest::Approx(ref.data()[i]).epsilon(1e-10));
  const double err = ad::grad_check(
      [](const ad::Tensor& v) { return ad::sum_all(ad::mul(tensor::gram_schmidt(v), ad::Tensor::full({6, 3}, 0.3))); },
      ad::Tensor::constant({6, 3}, x.vec()));
  CHECK(err < 1e-5);
}
