#include "specgen/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "specgen/errors.hpp"
#include "specgen/ops.hpp"

namespace specgen::manifold {

std::size_t stiefel_parameter_count(std::size_t n, std::size_t k) {
  if (k > n) throw InvalidInput("stiefel: k > n");
  return n * k - k * (k + 1) / 2;
}

Matrix stiefel_skew(std::size_t n, std::size_t k, const std::vector<double>& params) {
  if (params.size() != stiefel_parameter_count(n, k))
    throw InvalidInput("stiefel_skew: expected " + std::to_string(stiefel_parameter_count(n, k)) +
                       " parameters, got " + std::to_string(params.size()));
  Matrix s(n, n);
  std::size_t p = 0;
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = j + 1; i < n; ++i) {
      s(i, j) = params[p++];
      s(j, i) = -s(i, j);
    }
  return s;
}

Matrix random_stiefel(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::vector<double> params(stiefel_parameter_count(n, k));
  for (double& v : params) v = nd(rng);
  return linalg::matrix_exp(stiefel_skew(n, k, params)).left_columns(k);
}

double canonical_metric_raw(const Matrix& q, const Matrix& b) {
  if (q.rows() != b.rows() || q.cols() != b.cols())
    throw InvalidInput("canonical_metric: shape mismatch");
  const Matrix qtb = linalg::matmul(q.transposed(), b);
  const Matrix btb = linalg::matmul(b.transposed(), b);
  return qtb.trace() - 0.5 * linalg::matmul(qtb, btb).trace();
}

double canonical_metric(const Matrix& q, const Matrix& b) {
  return canonical_metric_raw(q, b) / canonical_metric_raw(b, b);
}

Matrix proj_to_rotation(const Matrix& x) {
  if (!x.square()) throw InvalidInput("proj_to_rotation: matrix must be square");
  Matrix s(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < i; ++j) {
      s(i, j) = x(i, j);
      s(j, i) = -x(i, j);
    }
  return linalg::matrix_exp(s);
}

Rotated apply_rotations(const Matrix& u, const Matrix& r_left, const Matrix& r_right) {
  if (r_left.rows() != u.rows() || !r_left.square() || r_right.rows() != u.cols() || !r_right.square())
    throw InvalidInput("apply_rotations: shape mismatch");
  Rotated out;
  out.u = linalg::matmul(linalg::matmul(r_left, u), r_right);
  out.drift = linalg::orthonormality_error(out.u);
  if (out.drift > kDriftThreshold) {
    out.u = linalg::qr(out.u).q;
    out.reorthonormalized = true;
  }
  return out;
}

void canonicalize_signs(Matrix& u) {
  for (std::size_t j = 0; j < u.cols(); ++j) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < u.rows(); ++i)
      if (std::abs(u(i, j)) > std::abs(u(best, j))) best = i;
    if (u.rows() && u(best, j) < 0)
      for (std::size_t i = 0; i < u.rows(); ++i) u(i, j) = -u(i, j);
  }
}

Canonical canonicalize(const Matrix& u) {
  Canonical c;
  Matrix s = u;
  canonicalize_signs(s);
  c.row_order.resize(s.rows());
  std::iota(c.row_order.begin(), c.row_order.end(), 0);
  auto greater = [&](std::size_t a, std::size_t b) {
    for (std::size_t j = 0; j < s.cols(); ++j) {
      const double d = s(a, j) - s(b, j);
      if (d > kLexTolerance) return true;
      if (d < -kLexTolerance) return false;
    }
    return false;
  };
  std::stable_sort(c.row_order.begin(), c.row_order.end(), greater);
  c.u = Matrix(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t j = 0; j < s.cols(); ++j) c.u(i, j) = s(c.row_order[i], j);
  return c;
}

Matrix interpolate(const Matrix& u1, const Matrix& u2, double t) {
  if (u1.rows() != u2.rows() || u1.cols() != u2.cols())
    throw InvalidInput("interpolate: shape mismatch");
  Matrix blend = canonicalize(u1).u * (1.0 - t);
  blend += canonicalize(u2).u * t;
  return linalg::qr(blend).q;
}

namespace tensor {

using namespace specgen::ad;

Tensor proj_to_rotation(const Tensor& x) {
  const Tensor l = tril_strict(x);
  return matrix_exp(sub(l, transpose(l)));
}

Tensor gram_schmidt(const Tensor& x) {
  if (x.dim() < 2) throw InvalidInput("gram_schmidt: need [..., n, k]");
  const std::size_t ax = x.dim() - 1;
  const std::size_t k = x.size(ax);
  std::vector<Tensor> q;
  q.reserve(k);
  for (std::size_t j = 0; j < k; ++j) {
    Tensor v = slice(x, ax, j, 1);
    for (const Tensor& qi : q) v = sub(v, mul(qi, sum(mul(qi, v), ax - 1, true)));
    q.push_back(div(v, sqrt(sum(square(v), ax - 1, true))));
  }
  return concat(std::span<const Tensor>(q), ax);
}

Tensor canonical_metric_raw(const Tensor& q, const Tensor& b) {
  if (q.shape() != b.shape() || q.dim() != 3) throw InvalidInput("canonical_metric: shape mismatch");
  const std::size_t k = q.size(2);
  const Tensor m = matmul(transpose(q), b);
  const Tensor g = matmul(transpose(b), b);
  std::vector<double> e(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) e[i * k + i] = 1.0;
  const Tensor eye = Tensor::constant({k, k}, std::move(e));
  auto trace = [&](const Tensor& t) { return sum(sum(mul(t, eye), 2), 1); };
  return sub(trace(m), scale(trace(matmul(m, g)), 0.5));
}

}  // namespace tensor

}  // namespace specgen::manifold
