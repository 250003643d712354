#pragma once

// Independent reference computations used only by the test suites. Nothing
// here calls into the factorization or autodiff code it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <vector>

#include "adacap/linalg.hpp"

namespace adacap::oracle {

using linalg::Matrix;
using linalg::Vector;

/// Gaussian elimination with partial pivoting on a square system.
inline Vector gaussian_solve(Matrix a, Vector b) {
  const std::size_t n = a.rows();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(piv, k))) piv = i;
    if (a(piv, k) == 0.0) throw std::runtime_error("gaussian_solve: singular");
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
      std::swap(b[k], b[piv]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a(i, k) / a(k, k);
      for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
      b[i] -= f * b[k];
    }
  }
  Vector x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= a(i, j) * x[j];
    x[i] = s / a(i, i);
  }
  return x;
}

/// (H^T H + lambda I)^{-1} H^T y, formed explicitly and solved directly.
inline Vector direct_ridge(const Matrix& h, const Vector& y, double lambda) {
  const std::size_t n = h.rows();
  const std::size_t d = h.cols();
  Matrix a(d, d);
  Vector rhs(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < n; ++r) s += h(r, i) * h(r, j);
      a(i, j) = s + (i == j ? lambda : 0.0);
    }
    for (std::size_t r = 0; r < n; ++r) rhs[i] += h(r, i) * y[r];
  }
  return gaussian_solve(std::move(a), std::move(rhs));
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, sorted descending.
inline Vector symmetric_eigenvalues(Matrix a) {
  const std::size_t n = a.rows();
  for (int sweep = 0; sweep < 200; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (off < 1e-26) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1.0 / std::sqrt(t * t + 1);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  Vector ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
  std::sort(ev.begin(), ev.end(), std::greater<>());
  return ev;
}

/// Central finite difference of a scalar function of a flat parameter vector.
inline Vector finite_difference(const std::function<double(const Vector&)>& f, Vector x,
                                double h = 1e-5) {
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f(x);
    x[i] = keep - h;
    const double fm = f(x);
    x[i] = keep;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Two-sided Wilcoxon exact p-value by dynamic programming over doubled
/// integer ranks (the library enumerates sign patterns instead).
inline double wilcoxon_exact_dp(const std::vector<double>& ranks, double w_plus) {
  std::vector<long> doubled;
  long total = 0;
  for (double r : ranks) {
    doubled.push_back(std::lround(2.0 * r));
    total += doubled.back();
  }
  std::vector<double> count(total + 1, 0.0);
  count[0] = 1.0;
  for (long r : doubled)
    for (long s = total; s >= r; --s) count[s] += count[s - r];
  const long w = std::lround(2.0 * w_plus);
  double le = 0.0;
  double ge = 0.0;
  double all = 0.0;
  for (long s = 0; s <= total; ++s) {
    all += count[s];
    if (s <= w) le += count[s];
    if (s >= w) ge += count[s];
  }
  return std::min(1.0, 2.0 * std::min(le, ge) / all);
}

/// Average ranks of |x| (ties share the mean rank), computed by counting.
inline Vector average_abs_ranks(const Vector& x) {
  Vector r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0.0;
    double equal = 0.0;
    for (double y : x) {
      if (std::abs(y) < std::abs(x[i])) less += 1.0;
      if (std::abs(y) == std::abs(x[i])) equal += 1.0;
    }
    r[i] = less + (equal + 1.0) / 2.0;
  }
  return r;
}

}  // namespace adacap::oracle
