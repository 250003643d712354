#include <gtest/gtest.h>

#include <map>

#include "adacap/contrastive.hpp"
#include "adacap/tikhonov.hpp"

using namespace adacap;
using namespace adacap::contrastive;
using autodiff::Tape;
using autodiff::Value;
using linalg::Matrix;
using linalg::Vector;

TEST(Permutations, RejectsDegenerateSizes) {
  EXPECT_THROW(sample_permutations(1, 3, 0), std::invalid_argument);
  EXPECT_THROW(sample_permutations(5, 0, 0), std::invalid_argument);
}

TEST(Permutations, DeterministicPerSeed) {
  const auto a = sample_permutations(5, 2, 42);
  const auto b = sample_permutations(5, 2, 42);
  EXPECT_EQ(a.perms, b.perms);
  EXPECT_NE(a.perms, sample_permutations(5, 2, 43).perms);
}

TEST(Permutations, EachIsABijection) {
  const auto set = sample_permutations(37, 10, 9);
  for (const auto& perm : set.perms) {
    std::vector<bool> seen(37, false);
    for (std::size_t i : perm) {
      ASSERT_LT(i, 37u);
      EXPECT_FALSE(seen[i]);
      seen[i] = true;
    }
  }
}

TEST(Permutations, UniformOverSymmetricGroupOfThree) {
  const std::size_t samples = 100000;
  const auto set = sample_permutations(3, samples, 2024);
  std::map<std::vector<std::size_t>, std::size_t> counts;
  for (const auto& perm : set.perms) ++counts[perm];
  ASSERT_EQ(counts.size(), 6u);
  double chi2 = 0.0;
  const double expected = samples / 6.0;
  for (const auto& [perm, c] : counts) {
    EXPECT_NEAR(static_cast<double>(c) / samples, 1.0 / 6.0, 0.01);
    chi2 += (c - expected) * (c - expected) / expected;
  }
  // chi-square with 5 dof, 99.9% quantile = 20.52
  EXPECT_LT(chi2, 20.52);
}

TEST(Permutations, PreserveMarginal) {
  Vector y{3.0, -1.0, 2.5, 2.5, 7.0, 0.0};
  const auto set = sample_permutations(y.size(), 4, 1);
  Vector sorted_y = y;
  std::sort(sorted_y.begin(), sorted_y.end());
  for (std::size_t p = 0; p < set.p; ++p) {
    Vector py = set.apply(p, y);
    std::sort(py.begin(), py.end());
    EXPECT_EQ(py, sorted_y);
  }
}

TEST(AdaCapLoss, ThreeFourFive) {
  Tape t;
  Value y = t.constant(Matrix{{0}, {0}});
  Value yhat = t.leaf(Matrix{{3}, {4}});
  Value py = t.constant(Matrix{{1}, {2}});
  Value pyhat = t.leaf(Matrix{{1}, {2}});
  const LossValue l = adacap_loss(y, yhat, {py}, {pyhat});
  EXPECT_DOUBLE_EQ(l.total.item(), 5.0);
  EXPECT_DOUBLE_EQ(l.fit_term, 5.0);
  EXPECT_DOUBLE_EQ(l.contrast_term, 0.0);
  EXPECT_NEAR(l.total.item(), l.fit_term - l.contrast_term, 1e-12);
}

TEST(AdaCapLoss, SquaredToggle) {
  Tape t;
  Value y = t.constant(Matrix{{0}, {0}});
  Value yhat = t.leaf(Matrix{{3}, {4}});
  const LossValue l = adacap_loss(y, yhat, {y}, {y}, NormKind::squared);
  EXPECT_DOUBLE_EQ(l.total.item(), 25.0);
}

TEST(AdaCapLoss, RejectsEmptyAndMismatched) {
  Tape t;
  Value empty = t.constant(Matrix(0, 1));
  EXPECT_THROW(adacap_loss(empty, empty, {empty}, {empty}), std::invalid_argument);
  Value a = t.constant(Matrix(3, 1));
  Value b = t.constant(Matrix(2, 1));
  EXPECT_THROW(adacap_loss(a, b, {a}, {a}), std::invalid_argument);
  EXPECT_THROW(adacap_loss(a, a, {}, {}), std::invalid_argument);
}

TEST(AdaCapLoss, IdentityPermutationCancelsFitExactly) {
  CounterRng rng(5);
  const Matrix h = linalg::random_normal(12, 3, rng);
  Vector y(12);
  for (double& v : y) v = rng.normal();
  Tape t;
  Value hv = t.leaf(h);
  Value ll = t.leaf(Matrix::scalar(0.3));
  const auto out = tikhonov::ridge_predict(hv, ll, y, {y});
  Value yv = t.constant(Matrix::column(y));
  const LossValue l = adacap_loss(yv, out.y_hat, {yv}, out.y_hat_perm);
  EXPECT_EQ(l.total.item(), 0.0);
  EXPECT_EQ(l.fit_term, l.contrast_term);
}

TEST(MseLoss, PerfectOffsetAndHandSum) {
  Tape t;
  Value y = t.constant(Matrix{{1}, {2}, {3}});
  EXPECT_EQ(mse_loss(y, y).total.item(), 0.0);
  Value shifted = t.constant(Matrix{{1.5}, {2.5}, {3.5}});
  EXPECT_DOUBLE_EQ(mse_loss(y, shifted).total.item(), 0.25);

  CounterRng rng(77);
  Matrix a(20, 1), b(20, 1);
  double sq = 0.0, ab = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    a[i] = rng.normal();
    b[i] = rng.normal();
    sq += (a[i] - b[i]) * (a[i] - b[i]);
    ab += std::abs(a[i] - b[i]);
  }
  Value av = t.constant(a);
  Value bv = t.constant(b);
  EXPECT_NEAR(mse_loss(av, bv).total.item(), sq / 20, 1e-14);
  EXPECT_NEAR(mae_loss(av, bv).total.item(), ab / 20, 1e-14);
}
