#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "adacap/autodiff.hpp"
#include "adacap/contrastive.hpp"
#include "adacap/linalg.hpp"

namespace adacap::tikhonov {

using autodiff::Value;
using linalg::Matrix;
using linalg::SvdFactorization;
using linalg::Vector;

/// Trainable ridge strength, parameterized as lambda = exp(log_lambda) > 0.
struct RidgeHead {
  double log_lambda = 0.0;
  double lambda() const { return std::exp(log_lambda); }
};

struct RidgeBatchOutput {
  Value y_hat;
  std::vector<Value> y_hat_perm;
  std::shared_ptr<const SvdFactorization> cached;
  Vector w_true;
};

namespace detail {

/// Op over inputs H (n x d), log_lambda (1 x 1), targets T (n x m) whose
/// forward is H W with W = ridge_solve_many(f, T, lambda) precomputed.
///
/// Adjoints with A = H^T H + lambda I, W = A^-1 H^T t, rho = t - H W, upstream r,
/// s = A^-1 H^T r (itself a ridge solve of r on the cached factorization):
///   dH = r W^T + rho s^T - H s W^T,  dlambda = -s^T W,  dt = H s.
inline autodiff::CustomOp make_ridge_op(std::shared_ptr<const SvdFactorization> f,
                                        std::shared_ptr<const Matrix> w, double lambda) {
  return autodiff::register_custom(
      "tikhonov_head",
      [w](const autodiff::MatrixRefs& in) {
        return autodiff::CustomForwardResult{linalg::matmul(in[0].get(), *w), {}};
      },
      [f, w, lambda](const autodiff::MatrixRefs& in, const Matrix& out, const Matrix& upstream,
                     const std::any&) {
        const Matrix& h = in[0].get();
        const Matrix& targets = in[2].get();
        const Matrix s = linalg::ridge_solve_many(*f, upstream, lambda);
        const Matrix rho = targets - out;
        const Matrix hs = linalg::matmul(h, s);
        Matrix dh = linalg::matmul_nt(upstream, *w);
        dh += linalg::matmul_nt(rho, s);
        dh -= linalg::matmul_nt(hs, *w);
        double dlambda = 0.0;
        for (std::size_t k = 0; k < s.size(); ++k) dlambda -= s[k] * (*w)[k];
        return std::vector<Matrix>{std::move(dh), Matrix::scalar(dlambda * lambda), hs};
      });
}

inline bool is_permutation_of(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  Vector x(a.begin(), a.end());
  Vector y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  return x == y;
}

}  // namespace detail

/// Closed-form ridge predictions for the true target and every permuted target,
/// all from one factorization of H.
inline RidgeBatchOutput ridge_predict(const Value& h, const Value& log_lambda, const Vector& y,
                                      const std::vector<Vector>& permuted_ys) {
  const std::size_t n = h.rows();
  if (n < 2) {
    throw std::invalid_argument("ridge_predict: need at least 2 rows, got " + std::to_string(n));
  }
  if (y.size() != n) {
    throw std::invalid_argument("ridge_predict: target length " + std::to_string(y.size()) +
                                " != representation rows " + std::to_string(n));
  }
  if (!h.data().all_finite()) {
    throw std::invalid_argument("ridge_predict: non-finite entries in representation " +
                                h.data().shape());
  }
  for (std::size_t p = 0; p < permuted_ys.size(); ++p) {
    if (!detail::is_permutation_of(y, permuted_ys[p])) {
      throw std::invalid_argument("ridge_predict: permuted target " + std::to_string(p) +
                                  " is not a permutation of the target");
    }
  }
  const std::size_t m = permuted_ys.size() + 1;
  Matrix targets(n, m);
  targets.set_col(0, y);
  for (std::size_t p = 0; p < permuted_ys.size(); ++p) targets.set_col(p + 1, permuted_ys[p]);

  auto f = std::make_shared<const SvdFactorization>(linalg::svd(h.data()));
  const double lambda = std::exp(log_lambda.item());
  auto w = std::make_shared<const Matrix>(linalg::ridge_solve_many(*f, targets, lambda));

  autodiff::Tape& tape = *h.tape();
  Value t = tape.constant(std::move(targets));
  Value all = detail::make_ridge_op(f, w, lambda)({h, log_lambda, t});

  RidgeBatchOutput out;
  out.y_hat = autodiff::slice_cols(all, 0, 1);
  for (std::size_t p = 1; p < m; ++p) out.y_hat_perm.push_back(autodiff::slice_cols(all, p, 1));
  out.cached = std::move(f);
  out.w_true = w->col(0);
  return out;
}

// ---------------------------------------------------------------------------
// Lambda initialization

/// Log-uniform grid from lo to hi inclusive.
inline std::vector<double> lambda_grid(double lo = 1e-3, double hi = 1e3, std::size_t points = 13) {
  if (!(lo > 0.0) || !(hi > lo) || points < 2) {
    throw std::invalid_argument("lambda_grid: need 0 < lo < hi and at least 2 points");
  }
  std::vector<double> grid(points);
  const double a = std::log10(lo);
  const double b = std::log10(hi);
  for (std::size_t i = 0; i < points; ++i) {
    grid[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1));
  }
  return grid;
}

struct LambdaChoice {
  double lambda = 1.0;
  bool flat = false;  // every grid loss equal; lambda fell back to 1
  std::size_t bracket = 0;  // chosen pair is (grid[bracket], grid[bracket + 1])
  std::vector<double> grid;
  std::vector<double> losses;
};

/// Picks the geometric mean of the adjacent grid pair with the largest
/// absolute loss change. Ties go to the smaller lambda.
inline LambdaChoice choose_lambda(std::span<const double> grid, std::span<const double> losses) {
  if (grid.size() != losses.size() || grid.size() < 2) {
    throw std::invalid_argument("choose_lambda: need matching grid and losses of length >= 2");
  }
  LambdaChoice c;
  c.grid.assign(grid.begin(), grid.end());
  c.losses.assign(losses.begin(), losses.end());
  double best = -1.0;
  double scale = 0.0;
  for (double l : losses) scale = std::max(scale, std::abs(l));
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    const double delta = std::abs(losses[i + 1] - losses[i]);
    if (delta > best) {
      best = delta;
      c.bracket = i;
    }
  }
  if (!(best > 1e-12 * (1.0 + scale))) {
    c.flat = true;
    c.lambda = 1.0;
    return c;
  }
  c.lambda = std::sqrt(grid[c.bracket] * grid[c.bracket + 1]);
  return c;
}

/// AdaCap loss of a fixed representation at one lambda, reusing a factorization.
/// targets columns: true target first, then the permuted targets.
inline double contrastive_loss_at(const SvdFactorization& f, const Matrix& h, const Matrix& targets,
                                  double lambda,
                                  contrastive::NormKind kind = contrastive::NormKind::euclidean) {
  const Matrix pred = linalg::matmul(h, linalg::ridge_solve_many(f, targets, lambda));
  const std::size_t m = targets.cols();
  Vector norms(m, 0.0);
  for (std::size_t i = 0; i < targets.rows(); ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double r = targets(i, j) - pred(i, j);
      norms[j] += r * r;
    }
  if (kind == contrastive::NormKind::euclidean)
    for (double& v : norms) v = std::sqrt(v);
  double contrast = 0.0;
  for (std::size_t j = 1; j < m; ++j) contrast += norms[j];
  return norms[0] - contrast / static_cast<double>(m - 1);
}

/// One pass over a fixed representation: L(lambda_i) at every grid point.
inline LambdaChoice init_lambda(const Matrix& h, const Vector& y, const std::vector<Vector>& permuted_ys,
                                std::span<const double> grid,
                                contrastive::NormKind kind = contrastive::NormKind::euclidean) {
  if (permuted_ys.empty()) throw std::invalid_argument("init_lambda: need at least one permutation");
  if (y.size() != h.rows()) throw std::invalid_argument("init_lambda: target length mismatch");
  Matrix targets(h.rows(), permuted_ys.size() + 1);
  targets.set_col(0, y);
  for (std::size_t p = 0; p < permuted_ys.size(); ++p) targets.set_col(p + 1, permuted_ys[p]);
  const SvdFactorization f = linalg::svd(h);
  std::vector<double> losses;
  losses.reserve(grid.size());
  for (double lambda : grid) losses.push_back(contrastive_loss_at(f, h, targets, lambda, kind));
  return choose_lambda(grid, losses);
}

}  // namespace adacap::tikhonov
