#include <gtest/gtest.h>

#include "adacap/tikhonov.hpp"
#include "oracles.hpp"

using namespace adacap;
using namespace adacap::tikhonov;
using autodiff::Tape;
using autodiff::Value;
using contrastive::LossValue;
using linalg::Matrix;
using linalg::Vector;

namespace {

Vector random_vector(std::size_t n, CounterRng& rng) {
  Vector v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

Value full_loss(Tape& t, const Value& h, const Value& log_lambda, const Vector& y,
                const std::vector<Vector>& perms) {
  const auto out = ridge_predict(h, log_lambda, y, perms);
  std::vector<Value> pys;
  for (const auto& p : perms) pys.push_back(t.constant(Matrix::column(p)));
  return contrastive::adacap_loss(t.constant(Matrix::column(y)), out.y_hat, pys, out.y_hat_perm).total;
}

}  // namespace

TEST(RidgePredict, IdentityInterpolatesAsLambdaVanishes) {
  const Vector y{0.5, -2.0, 3.0, 1.25};
  Tape t;
  Value h = t.leaf(Matrix::identity(4));
  Value ll = t.leaf(Matrix::scalar(std::log(1e-14)));
  const auto out = ridge_predict(h, ll, y, {});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out.y_hat.data()(i, 0), y[i], 1e-12);
}

TEST(RidgePredict, ForwardMatchesDirectSolve) {
  CounterRng rng(16);
  const Matrix h = linalg::random_normal(16, 4, rng);
  const Vector y = random_vector(16, rng);
  const auto perms = contrastive::sample_permutations(16, 3, 11).apply_all(y);
  const double lambda = 0.37;
  Tape t;
  const auto out = ridge_predict(t.leaf(h), t.leaf(Matrix::scalar(std::log(lambda))), y, perms);

  const Vector w_ref = oracle::direct_ridge(h, y, lambda);
  EXPECT_LT(linalg::max_abs_diff(out.w_true, w_ref), 1e-8);
  EXPECT_LT(linalg::max_abs_diff(out.y_hat.data().values(), linalg::matvec(h, w_ref)), 1e-8);
  for (std::size_t p = 0; p < 3; ++p) {
    const Vector pred = linalg::matvec(h, oracle::direct_ridge(h, perms[p], lambda));
    EXPECT_LT(linalg::max_abs_diff(out.y_hat_perm[p].data().values(), pred), 1e-8);
  }
  ASSERT_TRUE(out.cached);
  EXPECT_EQ(out.cached->rows(), 16u);
}

TEST(RidgePredict, BackwardMatchesFiniteDifferences) {
  CounterRng rng(21);
  const Matrix h = linalg::random_normal(16, 4, rng);
  const Vector y = random_vector(16, rng);
  const auto perms = contrastive::sample_permutations(16, 3, 5).apply_all(y);
  const auto r = autodiff::check_gradients(
      [&](Tape& t, std::span<const Value> in) { return full_loss(t, in[0], in[1], y, perms); },
      {h, Matrix::scalar(std::log(0.8))});
  EXPECT_LT(r.max_relative_error, 1e-4) << "input " << r.worst_input << " entry " << r.worst_entry;
}

TEST(RidgePredict, AdjointsEntrywiseOnThreeByTwo) {
  // Each adjoint formula checked alone: upstream is a fixed random weight on
  // the predictions, so the scalar is linear in Yhat.
  CounterRng rng(3);
  const Matrix h0 = linalg::random_normal(3, 2, rng);
  const Vector y = random_vector(3, rng);
  const Matrix weight = linalg::random_normal(3, 1, rng);
  const double log_lambda0 = std::log(0.6);

  auto scalar = [&](const Matrix& h, double log_lambda) {
    const Vector w = oracle::direct_ridge(h, y, std::exp(log_lambda));
    const Vector pred = linalg::matvec(h, w);
    return linalg::dot(pred, weight.values());
  };

  Tape t;
  Value hv = t.leaf(h0);
  Value lv = t.leaf(Matrix::scalar(log_lambda0));
  const auto out = ridge_predict(hv, lv, y, {});
  t.backward(autodiff::sum(autodiff::hadamard(out.y_hat, t.constant(weight))));

  const double step = 1e-6;
  for (std::size_t k = 0; k < h0.size(); ++k) {
    Matrix hp = h0, hm = h0;
    hp[k] += step;
    hm[k] -= step;
    const double numeric = (scalar(hp, log_lambda0) - scalar(hm, log_lambda0)) / (2 * step);
    EXPECT_NEAR(hv.grad()[k], numeric, 1e-7) << "dH entry " << k;
  }
  const double numeric_l =
      (scalar(h0, log_lambda0 + step) - scalar(h0, log_lambda0 - step)) / (2 * step);
  EXPECT_NEAR(lv.grad().item(), numeric_l, 1e-7);
}

TEST(RidgePredict, SharedFactorizationEqualsIndependentPipelines) {
  CounterRng rng(8);
  const Matrix h = linalg::random_normal(30, 6, rng);
  const Vector y = random_vector(30, rng);
  const auto perms = contrastive::sample_permutations(30, 10, 1).apply_all(y);
  Tape t;
  Value hv = t.leaf(h);
  Value lv = t.leaf(Matrix::scalar(0.2));
  const auto shared = ridge_predict(hv, lv, y, perms);
  for (std::size_t p = 0; p < perms.size(); ++p) {
    Tape ti;
    const auto alone = ridge_predict(ti.leaf(h), ti.leaf(Matrix::scalar(0.2)), perms[p], {});
    EXPECT_LT(linalg::max_abs_diff(shared.y_hat_perm[p].data().values(), alone.y_hat.data().values()),
              1e-12);
  }
}

TEST(RidgePredict, Preconditions) {
  Tape t;
  Value one_row = t.leaf(Matrix{{1.0, 2.0}});
  EXPECT_THROW(ridge_predict(one_row, t.leaf(Matrix::scalar(0)), {1.0}, {}), std::invalid_argument);
  Matrix bad(3, 2, 1.0);
  bad(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(ridge_predict(t.leaf(bad), t.leaf(Matrix::scalar(0)), {1, 2, 3}, {}),
               std::invalid_argument);
  Value h = t.leaf(Matrix(3, 2, 1.0));
  EXPECT_THROW(ridge_predict(h, t.leaf(Matrix::scalar(0)), {1, 2}, {}), std::invalid_argument);
  EXPECT_THROW(ridge_predict(h, t.leaf(Matrix::scalar(0)), {1, 2, 3}, {{1, 2, 4}}),
               std::invalid_argument);
}

TEST(RidgeHeadTest, LambdaPositiveForAnyLogLambda) {
  for (double ll : {-700.0, -30.0, 0.0, 30.0, 700.0}) EXPECT_GT(RidgeHead{ll}.lambda(), 0.0);
}

TEST(AdaCapLossLimit, HugeLambdaDrivesLossToZero) {
  CounterRng rng(31);
  const Matrix h = linalg::random_normal(20, 5, rng);
  const Vector y = random_vector(20, rng);
  const auto perms = contrastive::sample_permutations(20, 10, 2).apply_all(y);
  Tape t;
  Value loss = full_loss(t, t.leaf(h), t.leaf(Matrix::scalar(std::log(1e12))), y, perms);
  EXPECT_LT(std::abs(loss.item()), 1e-6);
}

TEST(AdaCapLossLimit, UninformativeRepresentationCentersOnZero) {
  const int seeds = 200;
  std::vector<double> losses;
  for (int s = 0; s < seeds; ++s) {
    CounterRng rng(derive_seed(1000, static_cast<std::uint64_t>(s)));
    const Matrix h = linalg::random_normal(64, 8, rng);
    const Vector y = random_vector(64, rng);
    const auto perms = contrastive::sample_permutations(64, 10, derive_seed(s, 99)).apply_all(y);
    Tape t;
    losses.push_back(full_loss(t, t.leaf(h), t.leaf(Matrix::scalar(0.0)), y, perms).item());
  }
  double mean = 0.0;
  for (double l : losses) mean += l;
  mean /= seeds;
  double var = 0.0;
  for (double l : losses) var += (l - mean) * (l - mean);
  const double se = std::sqrt(var / (seeds - 1)) / std::sqrt(static_cast<double>(seeds));
  EXPECT_LT(std::abs(mean), 2.576 * se) << "mean " << mean << " se " << se;
}

TEST(LambdaInit, GridHasThirteenLogUniformPoints) {
  const auto g = lambda_grid();
  ASSERT_EQ(g.size(), 13u);
  EXPECT_NEAR(g.front(), 1e-3, 1e-15);
  EXPECT_NEAR(g[6], 1.0, 1e-12);
  EXPECT_NEAR(g.back(), 1e3, 1e-9);
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_NEAR(g[i] / g[i - 1], std::sqrt(10.0), 1e-9);
}

TEST(LambdaInit, StepFunctionPicksBracketingGeometricMean) {
  const auto g = lambda_grid();
  std::vector<double> losses(13, 5.0);
  losses[0] = losses[1] = 0.0;
  const auto c = choose_lambda(g, losses);
  EXPECT_FALSE(c.flat);
  EXPECT_EQ(c.bracket, 1u);
  EXPECT_NEAR(c.lambda, std::sqrt(g[1] * g[2]), 1e-15);
}

TEST(LambdaInit, ConstantLossFallsBackToOneAndFlags) {
  const auto g = lambda_grid();
  const std::vector<double> losses(13, -2.5);
  const auto c = choose_lambda(g, losses);
  EXPECT_TRUE(c.flat);
  EXPECT_EQ(c.lambda, 1.0);
}

TEST(LambdaInit, ScanUsesAdaCapLossOnFixedRepresentation) {
  CounterRng rng(4);
  const Matrix h = linalg::random_normal(40, 6, rng);
  Vector y = linalg::matvec(h, random_vector(6, rng));
  const auto perms = contrastive::sample_permutations(40, 5, 3).apply_all(y);
  const auto grid = lambda_grid();
  const auto c = init_lambda(h, y, perms, grid);
  ASSERT_EQ(c.losses.size(), 13u);
  // Cross-check one grid point through the differentiable path.
  Tape t;
  const double via_tape =
      full_loss(t, t.leaf(h), t.leaf(Matrix::scalar(std::log(grid[4]))), y, perms).item();
  EXPECT_NEAR(c.losses[4], via_tape, 1e-10);
  EXPECT_GE(c.lambda, grid.front());
  EXPECT_LE(c.lambda, grid.back());
}
