#pragma once

#include <optional>
#include <span>
#include <vector>

#include "rfact/matrix.hpp"

namespace rfact {

/// Real symmetric n-by-n matrix with packed upper-triangle storage.
///
/// Each off-diagonal entry is stored once, so symmetry is a property of the
/// representation and never drifts under arithmetic. Diagonal and
/// zero-diagonal matrices are runtime-checked subsets of the same type.
class SymMat {
 public:
  SymMat() = default;
  explicit SymMat(int n);

  static SymMat identity(int n);
  static SymMat diag(std::span<const double> d);

  int dim() const { return n_; }

  double operator()(int i, int j) const { return a_[index(i, j)]; }
  /// Mutable access; writing (i,j) and (j,i) hits the same slot.
  double& operator()(int i, int j) { return a_[index(i, j)]; }

  SymMat& operator+=(const SymMat& o);
  SymMat& operator-=(const SymMat& o);
  SymMat& operator*=(double c);

  friend SymMat operator+(SymMat a, const SymMat& b) { return a += b; }
  friend SymMat operator-(SymMat a, const SymMat& b) { return a -= b; }
  friend SymMat operator*(double c, SymMat a) { return a *= c; }

  double trace() const;
  std::vector<double> diagonal() const;
  /// Largest |entry|.
  double max_abs() const;
  /// Largest |diagonal entry| ignored; largest |off-diagonal entry|.
  double max_abs_offdiag() const;
  bool is_diagonal(double tol) const;

  Matrix to_dense() const;
  std::span<const double> packed() const { return a_; }
  std::span<double> packed() { return a_; }

 private:
  static size_t packed_size(int n) { return static_cast<size_t>(n) * (n + 1) / 2; }
  size_t index(int i, int j) const;

  int n_ = 0;
  std::vector<double> a_;
};

struct SpectralDecomposition {
  std::vector<double> eigenvalues;  // nonincreasing
  Matrix eigenvectors;              // columns, orthonormal

  /// V diag(w) V^T rebuilt as an exactly symmetric matrix.
  SymMat reconstruct() const;
};

/// Lower-triangular Cholesky factor of a positive definite SymMat.
class CholeskyFactor {
 public:
  const Matrix& lower() const { return l_; }
  double logdet() const;
  SymMat inverse() const;
  /// Solve L L^T x = b.
  std::vector<double> solve(std::vector<double> b) const;

  friend std::optional<CholeskyFactor> cholesky(const SymMat& m);

 private:
  Matrix l_;
};

/// Factor m = L L^T; empty when m is not positive definite.
std::optional<CholeskyFactor> cholesky(const SymMat& m);

/// Orthogonal projection onto the zero-diagonal subspace: copies the
/// off-diagonal entries and zeroes the diagonal.
SymMat chi(const SymMat& m);

/// <A,B> = tr(AB).
double inner(const SymMat& a, const SymMat& b);

/// log|M| for M > 0, from the Cholesky diagonal.
double logdet_pd(const SymMat& m);

/// M^{-1} for M > 0; result exactly symmetric by construction.
SymMat inv_pd(const SymMat& m);

/// Full eigendecomposition (tridiagonalization + implicit-shift QL),
/// eigenvalues sorted nonincreasing.
SpectralDecomposition eig_sym(const SymMat& m);

/// Count of eigenvalues with |w_i| > rel_tol * max(|w_1|, 1e-14).
int numerical_rank(const SymMat& m, double rel_tol);
int numerical_rank(const SpectralDecomposition& ed, double rel_tol);

/// ||M||_2 = max |eigenvalue|.
double spectral_norm(const SymMat& m);

/// U Q U^T for U (n x r) and Q (r x r) symmetric.
SymMat sym_sandwich(const Matrix& u, const SymMat& q);

}  // namespace rfact
