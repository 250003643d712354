#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "adacap/rng.hpp"

namespace adacap::linalg {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) +
                                  " does not match shape " + std::to_string(rows_) + "x" +
                                  std::to_string(cols_));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw std::invalid_argument("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  static Matrix column(const Vector& v) { return Matrix(v.size(), 1, v); }
  static Matrix scalar(double x) { return Matrix(1, 1, x); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }
  double& operator[](std::size_t k) noexcept { return data_[k]; }
  double operator[](std::size_t k) const noexcept { return data_[k]; }

  std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  Vector col(std::size_t j) const {
    Vector c(rows_);
    for (std::size_t i = 0; i < rows_; ++i) c[i] = (*this)(i, j);
    return c;
  }
  void set_col(std::size_t j, std::span<const double> c) {
    for (std::size_t i = 0; i < rows_; ++i) (*this)(i, j) = c[i];
  }

  double item() const {
    if (data_.size() != 1) throw std::invalid_argument("Matrix::item on non-scalar " + shape());
    return data_[0];
  }

  std::string shape() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  Matrix& operator+=(const Matrix& o) {
    require_same(o, "+=");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    require_same(o, "-=");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
    return *this;
  }
  Matrix& operator*=(double s) noexcept {
    for (double& x : data_) x *= s;
    return *this;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  void require_same(const Matrix& o, const char* op) const {
    if (rows_ != o.rows_ || cols_ != o.cols_) {
      throw std::invalid_argument(std::string("Matrix ") + op + ": shape mismatch " + shape() +
                                  " vs " + o.shape());
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
inline Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
inline Matrix operator*(Matrix a, double s) { return a *= s; }

inline void require_shape(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  if (!ok) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape() + " vs " +
                                b.shape());
  }
}

/// C = A * B
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  require_shape(a.cols() == b.rows(), "matmul", a, b);
  Matrix c(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* ci = c.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* bk = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

/// C = A^T * B
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  require_shape(a.rows() == b.rows(), "matmul_tn", a, b);
  Matrix c(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* ak = a.row(k).data();
    const double* bk = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = ak[i];
      if (aki == 0.0) continue;
      double* ci = c.row(i).data();
      for (std::size_t j = 0; j < n; ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

/// C = A * B^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require_shape(a.cols() == b.cols(), "matmul_nt", a, b);
  Matrix c(a.rows(), b.rows());
  const std::size_t kk = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ai = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* bj = b.row(j).data();
      double s = 0.0;
      for (std::size_t k = 0; k < kk; ++k) s += ai[k] * bj[k];
      c(i, j) = s;
    }
  }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline Vector matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) {
    throw std::invalid_argument("matvec: shape mismatch " + a.shape() + " vs vector " +
                                std::to_string(x.size()));
  }
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) s += r[j] * x[j];
    y[i] = s;
  }
  return y;
}

/// y = A^T x
inline Vector matvec_t(const Matrix& a, std::span<const double> x) {
  if (a.rows() != x.size()) {
    throw std::invalid_argument("matvec_t: shape mismatch " + a.shape() + " vs vector " +
                                std::to_string(x.size()));
  }
  Vector y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    const double xi = x[i];
    for (std::size_t j = 0; j < r.size(); ++j) y[j] += r[j] * xi;
  }
  return y;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double frobenius(const Matrix& a) { return norm2(a.values()); }

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline Matrix random_normal(std::size_t rows, std::size_t cols, CounterRng& rng) {
  Matrix m(rows, cols);
  for (double& x : m.values()) x = rng.normal();
  return m;
}

/// Thin SVD: A = U diag(s) V^T with U (n x r), s (r, non-increasing), Vt (r x d),
/// r = min(n, d).
struct SvdFactorization {
  Matrix u;
  Vector singular_values;
  Matrix vt;

  std::size_t rows() const noexcept { return u.rows(); }
  std::size_t cols() const noexcept { return vt.cols(); }
  std::size_t rank_bound() const noexcept { return singular_values.size(); }

  /// Numerical rank with the usual max(n, d) * eps * s_max cutoff.
  std::size_t numerical_rank() const noexcept {
    if (singular_values.empty()) return 0;
    const double cutoff = singular_tolerance();
    return static_cast<std::size_t>(
        std::count_if(singular_values.begin(), singular_values.end(),
                      [cutoff](double s) { return s > cutoff; }));
  }
  double singular_tolerance() const noexcept {
    if (singular_values.empty()) return 0.0;
    return static_cast<double>(std::max(rows(), cols())) *
           std::numeric_limits<double>::epsilon() * singular_values.front();
  }

  Matrix reconstruct() const {
    Matrix us = u;
    for (std::size_t i = 0; i < us.rows(); ++i)
      for (std::size_t j = 0; j < us.cols(); ++j) us(i, j) *= singular_values[j];
    return matmul(us, vt);
  }
};

class SvdError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kSvdMaxSweeps = 100;
inline constexpr double kSvdTolerance = 1e-12;

namespace detail {

/// Columns of a tall matrix stored contiguously: cols[j] has length n.
using ColumnSet = std::vector<Vector>;

inline ColumnSet to_columns(const Matrix& a) {
  ColumnSet c(a.cols(), Vector(a.rows()));
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) c[j][i] = a(i, j);
  return c;
}

/// Householder QR of a tall column set (n >= d). On return `cols` holds the
/// reflector vectors (unit norm, leading zeros implicit) and R is returned.
inline Matrix householder_qr(ColumnSet& cols, std::vector<Vector>& reflectors) {
  const std::size_t d = cols.size();
  const std::size_t n = d ? cols[0].size() : 0;
  reflectors.assign(d, Vector{});
  for (std::size_t k = 0; k < d; ++k) {
    Vector& x = cols[k];
    double norm = 0.0;
    for (std::size_t i = k; i < n; ++i) norm += x[i] * x[i];
    norm = std::sqrt(norm);
    Vector v(n - k, 0.0);
    if (norm == 0.0) {
      reflectors[k] = std::move(v);
      continue;
    }
    const double alpha = x[k] >= 0.0 ? -norm : norm;
    for (std::size_t i = k; i < n; ++i) v[i - k] = x[i];
    v[0] -= alpha;
    const double vnorm = norm2(v);
    if (vnorm == 0.0) {
      reflectors[k] = Vector(n - k, 0.0);
      continue;
    }
    for (double& e : v) e /= vnorm;
    for (std::size_t j = k; j < d; ++j) {
      Vector& c = cols[j];
      double s = 0.0;
      for (std::size_t i = k; i < n; ++i) s += v[i - k] * c[i];
      s *= 2.0;
      for (std::size_t i = k; i < n; ++i) c[i] -= s * v[i - k];
    }
    reflectors[k] = std::move(v);
  }
  Matrix r(d, d);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t i = 0; i <= j; ++i) r(i, j) = cols[j][i];
  return r;
}

/// Applies Q (product of reflectors) to each column vector: c <- Q c.
inline void apply_q(const std::vector<Vector>& reflectors, ColumnSet& cols) {
  for (std::size_t kk = reflectors.size(); kk-- > 0;) {
    const Vector& v = reflectors[kk];
    if (v.empty()) continue;
    for (Vector& c : cols) {
      double s = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * c[kk + i];
      if (s == 0.0) continue;
      s *= 2.0;
      for (std::size_t i = 0; i < v.size(); ++i) c[kk + i] -= s * v[i];
    }
  }
}

/// Adds orthonormal columns so that every zero entry of `u` is replaced by a
/// unit vector orthogonal to all others (Gram-Schmidt against the basis).
inline void complete_orthonormal(ColumnSet& u, const std::vector<bool>& filled) {
  const std::size_t n = u.empty() ? 0 : u[0].size();
  std::size_t candidate = 0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    if (filled[j]) continue;
    for (; candidate < n; ++candidate) {
      Vector e(n, 0.0);
      e[candidate] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < u.size(); ++k) {
          if (k == j || (!filled[k] && k > j)) continue;
          const double proj = dot(e, u[k]);
          for (std::size_t i = 0; i < n; ++i) e[i] -= proj * u[k][i];
        }
      }
      const double len = norm2(e);
      if (len > 1e-6) {
        for (double& x : e) x /= len;
        u[j] = std::move(e);
        ++candidate;
        break;
      }
    }
  }
}

/// One-sided Jacobi on the columns of a tall (n >= d) matrix. `g` is rotated
/// in place into U * diag(s); `v` accumulates the right rotations.
inline void one_sided_jacobi(ColumnSet& g, ColumnSet& v, std::size_t n_rows, std::size_t n_cols) {
  const std::size_t d = g.size();
  v.assign(d, Vector(d, 0.0));
  for (std::size_t j = 0; j < d; ++j) v[j][j] = 1.0;
  for (int sweep = 0;; ++sweep) {
    if (sweep == kSvdMaxSweeps) {
      throw SvdError("svd: no convergence after " + std::to_string(kSvdMaxSweeps) +
                     " sweeps for matrix of shape " + std::to_string(n_rows) + "x" +
                     std::to_string(n_cols));
    }
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        Vector& gp = g[p];
        Vector& gq = g[q];
        const double alpha = dot(gp, gp);
        const double beta = dot(gq, gq);
        const double gamma = dot(gp, gq);
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= kSvdTolerance * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < gp.size(); ++i) {
          const double a = gp[i];
          const double b = gq[i];
          gp[i] = c * a - s * b;
          gq[i] = s * a + c * b;
        }
        Vector& vp = v[p];
        Vector& vq = v[q];
        for (std::size_t i = 0; i < d; ++i) {
          const double a = vp[i];
          const double b = vq[i];
          vp[i] = c * a - s * b;
          vq[i] = s * a + c * b;
        }
      }
    }
    if (!rotated) return;
  }
}

/// SVD of a tall matrix (rows >= cols), QR-preconditioned when strictly tall.
inline SvdFactorization svd_tall(const Matrix& a) {
  const std::size_t n = a.rows();
  const std::size_t d = a.cols();
  ColumnSet cols = to_columns(a);
  std::vector<Vector> reflectors;
  const bool use_qr = n > d;
  ColumnSet g;
  if (use_qr) {
    const Matrix r = householder_qr(cols, reflectors);
    g = to_columns(r);
  } else {
    g = std::move(cols);
  }
  ColumnSet v;
  one_sided_jacobi(g, v, n, d);

  Vector s(d);
  for (std::size_t j = 0; j < d; ++j) s[j] = norm2(g[j]);
  std::vector<std::size_t> order = iota_indices(d);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return s[x] > s[y]; });
  const double smax = d ? s[order[0]] : 0.0;
  const double cutoff = smax * 1e-14;

  const std::size_t m = g.empty() ? 0 : g[0].size();
  ColumnSet u(d, Vector(m, 0.0));
  std::vector<bool> filled(d, false);
  Vector sv(d, 0.0);
  Matrix vt(d, d);
  for (std::size_t k = 0; k < d; ++k) {
    const std::size_t j = order[k];
    if (s[j] > cutoff && s[j] > 0.0) {
      sv[k] = s[j];
      for (std::size_t i = 0; i < m; ++i) u[k][i] = g[j][i] / s[j];
      filled[k] = true;
    }
    for (std::size_t i = 0; i < d; ++i) vt(k, i) = v[j][i];
  }
  complete_orthonormal(u, filled);

  if (use_qr) {
    for (Vector& c : u) c.resize(n, 0.0);
    apply_q(reflectors, u);
  }
  Matrix um(n, d);
  for (std::size_t j = 0; j < d; ++j) um.set_col(j, u[j]);
  return {std::move(um), std::move(sv), std::move(vt)};
}

}  // namespace detail

/// Thin singular value decomposition by QR-preconditioned one-sided Jacobi.
inline SvdFactorization svd(const Matrix& m) {
  if (m.rows() == 0 || m.cols() == 0) {
    throw std::invalid_argument("svd: empty matrix of shape " + m.shape());
  }
  if (!m.all_finite()) throw std::invalid_argument("svd: non-finite entries in " + m.shape());
  if (m.rows() >= m.cols()) return detail::svd_tall(m);
  SvdFactorization t = detail::svd_tall(transpose(m));
  return {transpose(t.vt), std::move(t.singular_values), transpose(t.u)};
}

namespace detail {

inline void check_lambda(const SvdFactorization& f, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw std::invalid_argument("ridge_solve: lambda must be finite and >= 0, got " +
                                std::to_string(lambda));
  }
  if (lambda == 0.0 && (f.rank_bound() < f.cols() || f.numerical_rank() < f.cols())) {
    throw std::invalid_argument("ridge_solve: lambda = 0 requires full column rank, factored " +
                                std::to_string(f.rows()) + "x" + std::to_string(f.cols()) +
                                " matrix has rank " + std::to_string(f.numerical_rank()));
  }
}

}  // namespace detail

/// W(lambda) = V diag(s / (s^2 + lambda)) U^T y.
inline Vector ridge_solve(const SvdFactorization& f, std::span<const double> y, double lambda) {
  if (y.size() != f.rows()) {
    throw std::invalid_argument("ridge_solve: target length " + std::to_string(y.size()) +
                                " != factored rows " + std::to_string(f.rows()));
  }
  detail::check_lambda(f, lambda);
  const Vector uty = matvec_t(f.u, y);
  Vector coef(f.rank_bound(), 0.0);
  for (std::size_t i = 0; i < coef.size(); ++i) {
    const double s = f.singular_values[i];
    if (s == 0.0) continue;
    coef[i] = s / (s * s + lambda) * uty[i];
  }
  return matvec_t(f.vt, coef);
}

/// Column-wise ridge solves sharing one factorization: Y (n x m) -> W (d x m).
inline Matrix ridge_solve_many(const SvdFactorization& f, const Matrix& y, double lambda) {
  if (y.rows() != f.rows()) {
    throw std::invalid_argument("ridge_solve_many: targets " + y.shape() +
                                " do not match factored rows " + std::to_string(f.rows()));
  }
  detail::check_lambda(f, lambda);
  Matrix uty = matmul_tn(f.u, y);
  for (std::size_t i = 0; i < uty.rows(); ++i) {
    const double s = f.singular_values[i];
    const double scale = s == 0.0 ? 0.0 : s / (s * s + lambda);
    for (double& x : uty.row(i)) x *= scale;
  }
  return matmul_tn(f.vt, uty);
}

}  // namespace adacap::linalg
