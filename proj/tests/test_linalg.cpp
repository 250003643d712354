#include <gtest/gtest.h>

#include "adacap/linalg.hpp"
#include "oracles.hpp"

using namespace adacap;
using namespace adacap::linalg;

namespace {

double relative_reconstruction_error(const Matrix& m, const SvdFactorization& f) {
  return frobenius(f.reconstruct() - m) / std::max(frobenius(m), 1e-300);
}

double orthonormality_error(const Matrix& q) {
  // max |Q^T Q - I|
  const Matrix g = matmul_tn(q, q);
  double e = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j)
      e = std::max(e, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
  return e;
}

void expect_valid_svd(const Matrix& m, const SvdFactorization& f) {
  const std::size_t r = std::min(m.rows(), m.cols());
  ASSERT_EQ(f.u.rows(), m.rows());
  ASSERT_EQ(f.u.cols(), r);
  ASSERT_EQ(f.vt.rows(), r);
  ASSERT_EQ(f.vt.cols(), m.cols());
  for (std::size_t i = 1; i < r; ++i) EXPECT_GE(f.singular_values[i - 1], f.singular_values[i]);
  for (double s : f.singular_values) EXPECT_GE(s, 0.0);
  EXPECT_LT(orthonormality_error(f.u), 1e-8);
  EXPECT_LT(orthonormality_error(transpose(f.vt)), 1e-8);
  EXPECT_LT(relative_reconstruction_error(m, f), 1e-8);
}

}  // namespace

TEST(Svd, IdentityHasUnitSingularValues) {
  const auto f = svd(Matrix::identity(3));
  for (double s : f.singular_values) EXPECT_NEAR(s, 1.0, 1e-15);
  expect_valid_svd(Matrix::identity(3), f);
}

TEST(Svd, DiagonalSingularValuesSorted) {
  const Matrix d{{1, 0, 0}, {0, 3, 0}, {0, 0, 2}};
  const auto f = svd(d);
  EXPECT_NEAR(f.singular_values[0], 3.0, 1e-14);
  EXPECT_NEAR(f.singular_values[1], 2.0, 1e-14);
  EXPECT_NEAR(f.singular_values[2], 1.0, 1e-14);
}

TEST(Svd, RandomTallMatchesEigenOracle) {
  CounterRng rng(7);
  const Matrix m = random_normal(7, 4, rng);
  const auto f = svd(m);
  EXPECT_LT(relative_reconstruction_error(m, f), 1e-10);
  const Vector ev = oracle::symmetric_eigenvalues(matmul_tn(m, m));
  for (std::size_t i = 0; i < 4; ++i)
    EXPECT_NEAR(f.singular_values[i], std::sqrt(std::max(ev[i], 0.0)), 1e-10);
  expect_valid_svd(m, f);
}

TEST(Svd, WideAndRankDeficientShapes) {
  CounterRng rng(11);
  const Matrix wide = random_normal(3, 9, rng);
  expect_valid_svd(wide, svd(wide));

  // Rank-2 6x5 matrix: outer products.
  Matrix low(6, 5);
  const Matrix a = random_normal(6, 2, rng);
  const Matrix b = random_normal(2, 5, rng);
  low = matmul(a, b);
  const auto f = svd(low);
  expect_valid_svd(low, f);
  EXPECT_EQ(f.numerical_rank(), 2u);

  Matrix zero(4, 3);
  const auto fz = svd(zero);
  expect_valid_svd(Matrix::identity(3), svd(Matrix::identity(3)));
  EXPECT_EQ(fz.numerical_rank(), 0u);
  EXPECT_LT(orthonormality_error(fz.u), 1e-8);
}

TEST(Svd, PropertyRandomShapes) {
  CounterRng rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 1 + rng.below(40);
    const std::size_t d = 1 + rng.below(20);
    const Matrix m = random_normal(n, d, rng);
    const auto f = svd(m);
    expect_valid_svd(m, f);
    EXPECT_EQ(svd(m).singular_values, f.singular_values) << "determinism";
  }
}

TEST(Svd, RejectsNonFiniteAndEmpty) {
  Matrix m(2, 2, 1.0);
  m(0, 1) = std::nan("");
  EXPECT_THROW(svd(m), std::invalid_argument);
  EXPECT_THROW(svd(Matrix()), std::invalid_argument);
}

TEST(RidgeSolve, IdentityLeastSquaresAndInfiniteShrinkage) {
  const auto f = svd(Matrix::identity(3));
  const Vector y{1, 2, 3};
  const Vector w0 = ridge_solve(f, y, 0.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(w0[i], y[i], 1e-14);
  const Vector winf = ridge_solve(f, y, 1e300);
  for (double w : winf) EXPECT_NEAR(w, 0.0, 1e-290);
}

TEST(RidgeSolve, SmallCaseAgainstGaussianElimination) {
  const Matrix h{{1, 0}, {0, 1}, {1, 1}};
  const Vector y{1, 2, 3};
  // (H^T H + I) W = H^T y  ->  [[3,1],[1,3]] W = [4,5]  ->  W = (7/8, 11/8)
  const Vector w = ridge_solve(svd(h), y, 1.0);
  const Vector ref = oracle::direct_ridge(h, y, 1.0);
  EXPECT_NEAR(ref[0], 7.0 / 8.0, 1e-15);
  EXPECT_NEAR(ref[1], 11.0 / 8.0, 1e-15);
  EXPECT_LT(max_abs_diff(w, ref), 1e-14);
}

TEST(RidgeSolve, ErrorsOnNegativeLambdaAndRankDeficientZero) {
  const auto f = svd(Matrix{{1, 1}, {1, 1}, {2, 2}});
  const Vector y{1, 2, 3};
  EXPECT_THROW(ridge_solve(f, y, -1.0), std::invalid_argument);
  EXPECT_THROW(ridge_solve(f, y, 0.0), std::invalid_argument);
  EXPECT_NO_THROW(ridge_solve(f, y, 0.5));
  const auto wide = svd(Matrix{{1, 0, 0}, {0, 1, 0}});
  EXPECT_THROW(ridge_solve(wide, Vector{1, 2}, 0.0), std::invalid_argument);
  EXPECT_THROW(ridge_solve(f, Vector{1, 2}, 1.0), std::invalid_argument);
}

TEST(RidgeSolve, MatchesDirectSolveAcrossLambdas) {
  CounterRng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 8 + rng.below(40);
    const std::size_t d = 1 + rng.below(8);
    const Matrix h = random_normal(n, d, rng);
    Vector y(n);
    for (double& v : y) v = rng.normal();
    const auto f = svd(h);
    for (double lambda : {1e-3, 1.0, 1e3}) {
      const Vector ref = oracle::direct_ridge(h, y, lambda);
      EXPECT_LT(max_abs_diff(ridge_solve(f, y, lambda), ref), 1e-8);
    }
  }
}

TEST(RidgeSolve, MonotoneShrinkage) {
  CounterRng rng(5);
  const Matrix h = random_normal(30, 6, rng);
  Vector y(30);
  for (double& v : y) v = rng.normal();
  const auto f = svd(h);
  double prev = std::numeric_limits<double>::infinity();
  for (double lambda = 1e-4; lambda < 1e5; lambda *= 3.0) {
    const double norm = norm2(ridge_solve(f, y, lambda));
    EXPECT_LE(norm, prev);
    prev = norm;
  }
}

TEST(RidgeSolve, ManyRightHandSidesEqualIndependentSolves) {
  CounterRng rng(17);
  const Matrix h = random_normal(25, 5, rng);
  const Matrix ys = random_normal(25, 4, rng);
  const auto f = svd(h);
  const Matrix w = ridge_solve_many(f, ys, 0.7);
  for (std::size_t j = 0; j < 4; ++j) {
    const Vector single = ridge_solve(f, ys.col(j), 0.7);
    EXPECT_LT(max_abs_diff(single, w.col(j)), 1e-12);
  }
}
