#pragma once

// Stiefel manifold and SO(n) helpers, in plain matrices and as differentiable
// tensor ops.

#include <random>
#include <vector>

#include "specgen/linalg.hpp"
#include "specgen/tensor.hpp"

namespace specgen::manifold {

using linalg::Matrix;

inline constexpr double kLexTolerance = 1e-9;
inline constexpr double kDriftThreshold = 1e-6;

/// nk - k(k+1)/2
std::size_t stiefel_parameter_count(std::size_t n, std::size_t k);
/// Skew-symmetric n x n matrix with params filling S(i, j), i > j, j < k, column by column.
Matrix stiefel_skew(std::size_t n, std::size_t k, const std::vector<double>& params);
/// First k columns of exp(S) for a random S with i.i.d. standard normal parameters.
Matrix random_stiefel(std::size_t n, std::size_t k, std::mt19937_64& rng);

/// tr(Q^T (I - BB^T/2) B) without normalisation.
double canonical_metric_raw(const Matrix& q, const Matrix& b);
/// canonical_metric_raw(q, b) / canonical_metric_raw(b, b).
double canonical_metric(const Matrix& q, const Matrix& b);

/// exp(tril(X) - tril(X)^T), strict lower triangle.
Matrix proj_to_rotation(const Matrix& x);

struct Rotated {
  Matrix u;
  double drift = 0.0;          // ||U^T U - I||_F before any correction
  bool reorthonormalized = false;
};
/// R_L U R_R, re-projected with QR when drift exceeds kDriftThreshold.
Rotated apply_rotations(const Matrix& u, const Matrix& r_left, const Matrix& r_right);

/// Flips each column so its largest-magnitude entry is positive (first index wins ties).
void canonicalize_signs(Matrix& u);

struct Canonical {
  Matrix u;
  std::vector<std::size_t> row_order;  // u.row(i) = signed input row row_order[i]
};
/// Sign canonicalisation, then rows (nodes) sorted in descending lexicographic
/// order with per-entry tolerance kLexTolerance.
Canonical canonicalize(const Matrix& u);

/// QR down-projection of (1-t) canonicalize(u1) + t canonicalize(u2). Throws RankDeficient.
Matrix interpolate(const Matrix& u1, const Matrix& u2, double t);

// --- differentiable counterparts ------------------------------------------------
namespace tensor {
using ad::Tensor;
/// exp(tril(X) - tril(X)^T) over the last two axes.
Tensor proj_to_rotation(const Tensor& x);
/// Modified Gram-Schmidt on the columns of [..., n, k].
Tensor gram_schmidt(const Tensor& x);
/// Raw canonical metric for batched [B, n, k] q and b: result [B].
Tensor canonical_metric_raw(const Tensor& q, const Tensor& b);
}  // namespace tensor

}  // namespace specgen::manifold
