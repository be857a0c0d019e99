#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace specgen::linalg {

// Library-wide numerical tolerances. Every check in this module reads from here.
namespace tol {
inline constexpr double kSymmetry = 1e-10;      // sym_eig input symmetry check
inline constexpr double kRank = 1e-12;          // |r_ii| threshold for full column rank
inline constexpr double kExpScaledNorm = 0.5;   // ||S / 2^j||_1 bound before Taylor
inline constexpr int kExpTaylorTerms = 18;
inline constexpr int kEigMaxIterations = 60;    // per eigenvalue in implicit QL
}  // namespace tol

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  /// Throws InvalidInput when data.size() != rows*cols or any entry is non-finite.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& vec() const { return data_; }

  Matrix transposed() const;
  std::vector<double> column(std::size_t j) const;
  void set_column(std::size_t j, std::span<const double> v);
  /// First `k` columns.
  Matrix left_columns(std::size_t k) const;

  double frobenius_norm() const;
  double one_norm() const;  // max column abs-sum
  double trace() const;

  Matrix& operator+=(const Matrix& o);
  Matrix& operator-=(const Matrix& o);
  Matrix& operator*=(double s);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix diag(std::span<const double> d);

/// ||a - b||_F; shapes must agree.
double frobenius_distance(const Matrix& a, const Matrix& b);
/// ||m^T m - I||_F.
double orthonormality_error(const Matrix& m);
double determinant(const Matrix& m);
bool is_symmetric(const Matrix& m, double tol = tol::kSymmetry);

struct EigenDecomposition {
  std::vector<double> values;  // ascending
  Matrix vectors;              // column i pairs with values[i]
};

/// Symmetric eigendecomposition: Householder tridiagonalisation followed by
/// implicit-shift QL. Deterministic.
EigenDecomposition sym_eig(const Matrix& m);

struct QrDecomposition {
  Matrix q;  // n x k, orthonormal columns
  Matrix r;  // k x k upper triangular, diag(r) >= 0
};

/// Thin Householder QR of an n x k matrix (n >= k). Throws RankDeficient.
QrDecomposition qr(const Matrix& m);

/// exp(s) by scaling and squaring with a truncated Taylor series.
Matrix matrix_exp(const Matrix& s);

/// Number of squarings j such that ||s / 2^j||_1 <= tol::kExpScaledNorm.
int exp_scaling_exponent(double one_norm);

}  // namespace specgen::linalg
