#pragma once

// Differentiable tensor operations. Binary elementwise ops broadcast with numpy
// rules. Shape errors throw InvalidInput.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "specgen/tensor.hpp"

namespace specgen::ad {

// --- shape ------------------------------------------------------------------
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::vector<std::size_t> axes);
/// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor broadcast_to(const Tensor& x, const Shape& shape);
/// Sums broadcast axes away so the result has `shape`.
Tensor sum_to(const Tensor& x, const Shape& shape);
Tensor concat(std::span<const Tensor> xs, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> xs, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
/// Zero padding along one axis.
Tensor pad(const Tensor& x, std::size_t axis, std::size_t before, std::size_t after);
Tensor index_select(const Tensor& x, std::size_t axis, std::vector<std::size_t> index);
/// out[..., index[i], ...] += x[..., i, ...]; the axis of the result has `size`.
Tensor index_add(const Tensor& x, std::size_t axis, std::vector<std::size_t> index,
                 std::size_t size);

// --- elementwise --------------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor erf(const Tensor& x);
Tensor square(const Tensor& x);
/// max(0, x); the derivative mask is a constant.
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }

// --- reductions -----------------------------------------------------------------
Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor sum_all(const Tensor& x);
Tensor mean(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean_all(const Tensor& x);
/// Sum of x*mask over `axis` divided by the mask sum over the same axis.
/// `mask` is a constant broadcastable to x.
Tensor masked_mean(const Tensor& x, const Tensor& mask, std::size_t axis, bool keepdim = false);

// --- linear algebra -------------------------------------------------------------
/// [..., m, k] x [..., k, n] with identical batch axes, or [..., m, k] x [k, n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// x x^T over the last two axes.
Tensor outer(const Tensor& x);
/// Strict lower triangle of the last two axes (diagonal excluded).
Tensor tril_strict(const Tensor& x);
/// exp of each square matrix in the last two axes; scaling and squaring with
/// the same Taylor order as linalg::matrix_exp, composed from matmuls.
Tensor matrix_exp(const Tensor& x);

// --- normalisation / nn primitives --------------------------------------------
Tensor softmax(const Tensor& x, std::size_t axis);
/// Normalises the last axis, then applies per-feature gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
/// x: [B, ..., C]; normalises every channel of every sample over the masked
/// middle axes. mask: [B, ..., 1] constant.
Tensor instance_norm(const Tensor& x, const Tensor& mask, double eps = 1e-5);
/// Inverted dropout with an explicit RNG stream; identity when !training.
Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng);

enum class Padding { Same, Valid };
/// x: [B, L, Cin], weight: [K*Cin, Cout], bias: [Cout].
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t kernel,
              std::size_t stride = 1, Padding padding = Padding::Same);
/// Nearest-neighbour upsampling along axis 1.
Tensor upsample(const Tensor& x, std::size_t factor);

/// Straight-through helper: forward value of `hard`, gradient of `soft`.
Tensor straight_through(const Tensor& hard, const Tensor& soft);

}  // namespace specgen::ad
