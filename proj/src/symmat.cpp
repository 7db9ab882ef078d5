#include "rfact/symmat.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rfact/errors.hpp"

namespace rfact {

SymMat::SymMat(int n) : n_(n), a_(packed_size(n), 0.0) {
  if (n < 1) throw DimensionMismatch("SymMat: dimension must be >= 1");
}

SymMat SymMat::identity(int n) {
  SymMat m(n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

SymMat SymMat::diag(std::span<const double> d) {
  SymMat m(static_cast<int>(d.size()));
  for (int i = 0; i < m.n_; ++i) m(i, i) = d[i];
  return m;
}

size_t SymMat::index(int i, int j) const {
  if (i > j) std::swap(i, j);
  // row-major packed upper triangle
  return static_cast<size_t>(i) * (2 * n_ - i - 1) / 2 + j;
}

SymMat& SymMat::operator+=(const SymMat& o) {
  if (o.n_ != n_) throw DimensionMismatch("SymMat: dimension mismatch in +");
  for (size_t k = 0; k < a_.size(); ++k) a_[k] += o.a_[k];
  return *this;
}

SymMat& SymMat::operator-=(const SymMat& o) {
  if (o.n_ != n_) throw DimensionMismatch("SymMat: dimension mismatch in -");
  for (size_t k = 0; k < a_.size(); ++k) a_[k] -= o.a_[k];
  return *this;
}

SymMat& SymMat::operator*=(double c) {
  for (double& v : a_) v *= c;
  return *this;
}

double SymMat::trace() const {
  double t = 0.0;
  for (int i = 0; i < n_; ++i) t += (*this)(i, i);
  return t;
}

std::vector<double> SymMat::diagonal() const {
  std::vector<double> d(n_);
  for (int i = 0; i < n_; ++i) d[i] = (*this)(i, i);
  return d;
}

double SymMat::max_abs() const {
  double m = 0.0;
  for (double v : a_) m = std::max(m, std::abs(v));
  return m;
}

double SymMat::max_abs_offdiag() const {
  double m = 0.0;
  for (int i = 0; i < n_; ++i)
    for (int j = i + 1; j < n_; ++j) m = std::max(m, std::abs((*this)(i, j)));
  return m;
}

bool SymMat::is_diagonal(double tol) const { return max_abs_offdiag() <= tol; }

Matrix SymMat::to_dense() const {
  Matrix m(n_, n_);
  for (int i = 0; i < n_; ++i)
    for (int j = i; j < n_; ++j) m(i, j) = m(j, i) = (*this)(i, j);
  return m;
}

SymMat SpectralDecomposition::reconstruct() const {
  const int n = eigenvectors.rows();
  SymMat m(n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += eigenvectors(i, k) * eigenvalues[k] * eigenvectors(j, k);
      m(i, j) = s;
    }
  }
  return m;
}

std::optional<CholeskyFactor> cholesky(const SymMat& m) {
  const int n = m.dim();
  CholeskyFactor f;
  f.l_ = Matrix(n, n);
  Matrix& l = f.l_;
  for (int j = 0; j < n; ++j) {
    double s = m(j, j);
    for (int k = 0; k < j; ++k) s -= l(j, k) * l(j, k);
    if (!(s > 0.0) || !std::isfinite(s)) return std::nullopt;
    const double ljj = std::sqrt(s);
    l(j, j) = ljj;
    for (int i = j + 1; i < n; ++i) {
      double t = m(i, j);
      for (int k = 0; k < j; ++k) t -= l(i, k) * l(j, k);
      l(i, j) = t / ljj;
    }
  }
  return f;
}

double CholeskyFactor::logdet() const {
  double s = 0.0;
  for (int i = 0; i < l_.rows(); ++i) s += std::log(l_(i, i));
  return 2.0 * s;
}

SymMat CholeskyFactor::inverse() const {
  const int n = l_.rows();
  // Invert L by forward substitution, then M^{-1} = L^{-T} L^{-1}.
  Matrix linv(n, n);
  for (int j = 0; j < n; ++j) {
    linv(j, j) = 1.0 / l_(j, j);
    for (int i = j + 1; i < n; ++i) {
      double s = 0.0;
      for (int k = j; k < i; ++k) s += l_(i, k) * linv(k, j);
      linv(i, j) = -s / l_(i, i);
    }
  }
  SymMat inv(n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      double s = 0.0;
      for (int k = j; k < n; ++k) s += linv(k, i) * linv(k, j);
      inv(i, j) = s;
    }
  }
  return inv;
}

std::vector<double> CholeskyFactor::solve(std::vector<double> b) const {
  const int n = l_.rows();
  if (static_cast<int>(b.size()) != n) throw DimensionMismatch("CholeskyFactor::solve");
  for (int i = 0; i < n; ++i) {
    double s = b[i];
    for (int k = 0; k < i; ++k) s -= l_(i, k) * b[k];
    b[i] = s / l_(i, i);
  }
  for (int i = n - 1; i >= 0; --i) {
    double s = b[i];
    for (int k = i + 1; k < n; ++k) s -= l_(k, i) * b[k];
    b[i] = s / l_(i, i);
  }
  return b;
}

SymMat chi(const SymMat& m) {
  SymMat r = m;
  for (int i = 0; i < m.dim(); ++i) r(i, i) = 0.0;
  return r;
}

double inner(const SymMat& a, const SymMat& b) {
  if (a.dim() != b.dim()) throw DimensionMismatch("inner: dimension mismatch");
  double diag = 0.0, off = 0.0;
  for (int i = 0; i < a.dim(); ++i) {
    diag += a(i, i) * b(i, i);
    for (int j = i + 1; j < a.dim(); ++j) off += a(i, j) * b(i, j);
  }
  return diag + 2.0 * off;
}

double logdet_pd(const SymMat& m) {
  auto f = cholesky(m);
  if (!f) throw NotPositiveDefinite("logdet_pd: matrix is not positive definite");
  return f->logdet();
}

SymMat inv_pd(const SymMat& m) {
  auto f = cholesky(m);
  if (!f) throw NotPositiveDefinite("inv_pd: matrix is not positive definite");
  return f->inverse();
}

namespace {

// Householder reduction of a dense symmetric matrix to tridiagonal form,
// accumulating the orthogonal transform in z (EISPACK tred2 lineage).
void tridiagonalize(Matrix& z, std::vector<double>& d, std::vector<double>& e) {
  const int n = z.rows();
  for (int j = 0; j < n; ++j) d[j] = z(n - 1, j);

  for (int i = n - 1; i > 0; --i) {
    double scale = 0.0, h = 0.0;
    for (int k = 0; k < i; ++k) scale += std::abs(d[k]);
    if (scale == 0.0) {
      e[i] = d[i - 1];
      for (int j = 0; j < i; ++j) {
        d[j] = z(i - 1, j);
        z(i, j) = 0.0;
        z(j, i) = 0.0;
      }
    } else {
      for (int k = 0; k < i; ++k) {
        d[k] /= scale;
        h += d[k] * d[k];
      }
      double f = d[i - 1];
      double g = (f > 0.0) ? -std::sqrt(h) : std::sqrt(h);
      e[i] = scale * g;
      h -= f * g;
      d[i - 1] = f - g;
      for (int j = 0; j < i; ++j) e[j] = 0.0;

      for (int j = 0; j < i; ++j) {
        f = d[j];
        z(j, i) = f;
        g = e[j] + z(j, j) * f;
        for (int k = j + 1; k < i; ++k) {
          g += z(k, j) * d[k];
          e[k] += z(k, j) * f;
        }
        e[j] = g;
      }
      f = 0.0;
      for (int j = 0; j < i; ++j) {
        e[j] /= h;
        f += e[j] * d[j];
      }
      const double hh = f / (h + h);
      for (int j = 0; j < i; ++j) e[j] -= hh * d[j];
      for (int j = 0; j < i; ++j) {
        f = d[j];
        g = e[j];
        for (int k = j; k < i; ++k) z(k, j) -= f * e[k] + g * d[k];
        d[j] = z(i - 1, j);
        z(i, j) = 0.0;
      }
    }
    d[i] = h;
  }

  // accumulate transformations
  for (int i = 0; i < n - 1; ++i) {
    z(n - 1, i) = z(i, i);
    z(i, i) = 1.0;
    const double h = d[i + 1];
    if (h != 0.0) {
      for (int k = 0; k <= i; ++k) d[k] = z(k, i + 1) / h;
      for (int j = 0; j <= i; ++j) {
        double g = 0.0;
        for (int k = 0; k <= i; ++k) g += z(k, i + 1) * z(k, j);
        for (int k = 0; k <= i; ++k) z(k, j) -= g * d[k];
      }
    }
    for (int k = 0; k <= i; ++k) z(k, i + 1) = 0.0;
  }
  for (int j = 0; j < n; ++j) {
    d[j] = z(n - 1, j);
    z(n - 1, j) = 0.0;
  }
  z(n - 1, n - 1) = 1.0;
  e[0] = 0.0;
}

// Implicit-shift QL on the tridiagonal (d, e), rotations applied to z.
// Total sweep budget 30n; beyond that the input is declared ill-conditioned.
void ql_implicit(Matrix& z, std::vector<double>& d, std::vector<double>& e) {
  const int n = z.rows();
  for (int i = 1; i < n; ++i) e[i - 1] = e[i];
  e[n - 1] = 0.0;

  double f = 0.0, tst1 = 0.0;
  const double eps = std::ldexp(1.0, -52);
  const int sweep_cap = 30 * n;
  int sweeps = 0;

  for (int l = 0; l < n; ++l) {
    tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
    int m = l;
    while (m < n && std::abs(e[m]) > eps * tst1) ++m;

    if (m > l) {
      do {
        if (++sweeps > sweep_cap)
          throw EigenConvergence("eig_sym: QL iteration exceeded 30n sweeps");
        double g = d[l];
        double p = (d[l + 1] - g) / (2.0 * e[l]);
        double r = std::hypot(p, 1.0);
        if (p < 0.0) r = -r;
        d[l] = e[l] / (p + r);
        d[l + 1] = e[l] * (p + r);
        const double dl1 = d[l + 1];
        double h = g - d[l];
        for (int i = l + 2; i < n; ++i) d[i] -= h;
        f += h;

        p = d[m];
        double c = 1.0, c2 = c, c3 = c;
        const double el1 = e[l + 1];
        double s = 0.0, s2 = 0.0;
        for (int i = m - 1; i >= l; --i) {
          c3 = c2;
          c2 = c;
          s2 = s;
          g = c * e[i];
          h = c * p;
          r = std::hypot(p, e[i]);
          e[i + 1] = s * r;
          s = e[i] / r;
          c = p / r;
          p = c * d[i] - s * g;
          d[i + 1] = h + s * (c * g + s * d[i]);
          for (int k = 0; k < n; ++k) {
            h = z(k, i + 1);
            z(k, i + 1) = s * z(k, i) + c * h;
            z(k, i) = c * z(k, i) - s * h;
          }
        }
        p = -s * s2 * c3 * el1 * e[l] / dl1;
        e[l] = s * p;
        d[l] = c * p;
      } while (std::abs(e[l]) > eps * tst1);
    }
    d[l] += f;
    e[l] = 0.0;
  }
}

}  // namespace

SpectralDecomposition eig_sym(const SymMat& m) {
  const int n = m.dim();
  SpectralDecomposition ed;
  ed.eigenvectors = m.to_dense();
  ed.eigenvalues.assign(n, 0.0);
  std::vector<double> e(n, 0.0);

  if (n == 1) {
    ed.eigenvalues[0] = m(0, 0);
    ed.eigenvectors(0, 0) = 1.0;
    return ed;
  }

  tridiagonalize(ed.eigenvectors, ed.eigenvalues, e);
  ql_implicit(ed.eigenvectors, ed.eigenvalues, e);

  // sort nonincreasing, carrying eigenvector columns along
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return ed.eigenvalues[a] > ed.eigenvalues[b]; });
  std::vector<double> w(n);
  Matrix v(n, n);
  for (int k = 0; k < n; ++k) {
    w[k] = ed.eigenvalues[order[k]];
    for (int i = 0; i < n; ++i) v(i, k) = ed.eigenvectors(i, order[k]);
  }
  ed.eigenvalues = std::move(w);
  ed.eigenvectors = std::move(v);
  return ed;
}

int numerical_rank(const SpectralDecomposition& ed, double rel_tol) {
  double wmax = 0.0;
  for (double w : ed.eigenvalues) wmax = std::max(wmax, std::abs(w));
  const double cut = rel_tol * std::max(wmax, 1e-14);
  int r = 0;
  for (double w : ed.eigenvalues)
    if (std::abs(w) > cut) ++r;
  return r;
}

int numerical_rank(const SymMat& m, double rel_tol) {
  if (rel_tol <= 0.0) throw Error("numerical_rank: rel_tol must be positive");
  return numerical_rank(eig_sym(m), rel_tol);
}

double spectral_norm(const SymMat& m) {
  const auto ed = eig_sym(m);
  double s = 0.0;
  for (double w : ed.eigenvalues) s = std::max(s, std::abs(w));
  return s;
}

SymMat sym_sandwich(const Matrix& u, const SymMat& q) {
  if (u.cols() != q.dim()) throw DimensionMismatch("sym_sandwich: dimension mismatch");
  const int n = u.rows(), r = u.cols();
  // T = U Q, then (UQU^T)_{ij} over i <= j only
  Matrix t(n, r);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < r; ++k) {
      double s = 0.0;
      for (int l = 0; l < r; ++l) s += u(i, l) * q(l, k);
      t(i, k) = s;
    }
  SymMat m(n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < r; ++k) s += t(i, k) * u(j, k);
      m(i, j) = s;
    }
  return m;
}

}  // namespace rfact
