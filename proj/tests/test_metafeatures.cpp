#include <gtest/gtest.h>

#include <cmath>

#include "adacap/metafeatures.hpp"

using namespace adacap;
using namespace adacap::metafeatures;
using linalg::Matrix;
using linalg::Vector;

namespace {

// Sample-sd forms of G1 and G2, computed in long double as an independent oracle.
double oracle_skew(const Vector& x) {
  const long double n = x.size();
  long double m = 0;
  for (double v : x) m += v;
  m /= n;
  long double ss = 0;
  for (double v : x) ss += (v - m) * (v - m);
  const long double s = std::sqrt(ss / (n - 1));
  long double t = 0;
  for (double v : x) t += std::pow((v - m) / s, 3);
  return static_cast<double>(n / ((n - 1) * (n - 2)) * t);
}

double oracle_kurt(const Vector& x) {
  const long double n = x.size();
  long double m = 0;
  for (double v : x) m += v;
  m /= n;
  long double ss = 0;
  for (double v : x) ss += (v - m) * (v - m);
  const long double s = std::sqrt(ss / (n - 1));
  long double t = 0;
  for (double v : x) t += std::pow((v - m) / s, 4);
  return static_cast<double>(n * (n + 1) / ((n - 1) * (n - 2) * (n - 3)) * t -
                             3 * (n - 1) * (n - 1) / ((n - 2) * (n - 3)));
}

data::Dataset numeric_dataset(const Matrix& x, const Vector& y) {
  data::Dataset ds;
  ds.id = "t";
  ds.numeric = x;
  ds.target = y;
  for (std::size_t j = 0; j < x.cols(); ++j) ds.schema.numeric_names.push_back("x" + std::to_string(j));
  ds.schema.target_name = "y";
  return ds;
}

data::Dataset mixed(std::size_t n, std::uint64_t seed) {
  auto s = data::synth({.kind = data::SynthKind::friedman, .n = n, .k = 5, .noise = 0.3, .seed = seed,
                        .n_categorical = 2, .cardinality = 3});
  return s.dataset;
}

ExtractOptions quick() {
  ExtractOptions o;
  o.forest.n_trees = 30;
  return o;
}

}  // namespace

TEST(Estimators, SkewAndKurtosisMatchBruteForce) {
  CounterRng rng(1);
  Vector x(37);
  for (double& v : x) v = std::exp(rng.normal());
  EXPECT_NEAR(skewness(x), oracle_skew(x), 1e-10);
  EXPECT_NEAR(excess_kurtosis(x), oracle_kurt(x), 1e-10);
}

TEST(Estimators, SymmetricSampleHasZeroSkew) {
  const Vector y{-3, -1, -0.5, 0, 0.5, 1, 3};
  EXPECT_NEAR(skewness(y), 0.0, 1e-15);
}

TEST(Estimators, GaussianMomentsNearZero) {
  CounterRng rng(2);
  Vector x(10000);
  for (double& v : x) v = rng.normal();
  EXPECT_NEAR(skewness(x), 0.0, 0.1);
  EXPECT_NEAR(excess_kurtosis(x), 0.0, 0.15);
}

TEST(Estimators, ConstantAndTinySamplesAreZero) {
  EXPECT_EQ(skewness(Vector(10, 2.0)), 0.0);
  EXPECT_EQ(excess_kurtosis(Vector(10, 2.0)), 0.0);
  EXPECT_EQ(excess_kurtosis(Vector{1, 2, 3}), 0.0);
}

TEST(Estimators, InterpolatedQuantilesAndTukeyFences) {
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.5), 2.5);
  // Q1 = 3.25, Q3 = 7.75, fences [-3.5, 14.5]: only 100 is out.
  const Vector x{1, 2, 3, 4, 5, 6, 7, 8, 9, 100};
  EXPECT_DOUBLE_EQ(tukey_outlier_share(x), 0.1);
}

TEST(Estimators, PcaOfDuplicatedColumnIsOneDimensional) {
  CounterRng rng(3);
  Matrix x(50, 2);
  for (std::size_t i = 0; i < 50; ++i) x(i, 0) = x(i, 1) = rng.normal();
  const Vector r = pca_ratios(x);
  EXPECT_NEAR(r[0], 1.0, 1e-12);
  EXPECT_NEAR(r[1], 0.0, 1e-12);
  EXPECT_EQ(intrinsic_dimension(r), 1u);
  EXPECT_EQ(intrinsic_dimension({0.5, 0.3, 0.15, 0.05}), 3u);
}

TEST(Extract, DuplicatedFeatureGivesMaxCorrelationOne) {
  CounterRng rng(4);
  Matrix x = linalg::random_normal(80, 3, rng);
  for (std::size_t i = 0; i < 80; ++i) x(i, 2) = x(i, 0);
  Vector y(80);
  for (double& v : y) v = rng.normal();
  const auto mf = extract(numeric_dataset(x, y), quick());
  EXPECT_NEAR(mf.abs_correlation.max, 1.0, 1e-12);
  EXPECT_LT(mf.abs_correlation.min, 0.5);
}

TEST(Extract, FieldsMatchOracles) {
  CounterRng rng(5);
  Matrix x = linalg::random_normal(60, 3, rng);
  for (std::size_t i = 0; i < 60; ++i) x(i, 1) = std::exp(x(i, 1));
  Vector y(60);
  for (std::size_t i = 0; i < 60; ++i) y[i] = x(i, 0) * x(i, 0);
  const auto mf = extract(numeric_dataset(x, y), quick());
  Vector sk, ku;
  for (std::size_t j = 0; j < 3; ++j) {
    sk.push_back(oracle_skew(x.col(j)));
    ku.push_back(oracle_kurt(x.col(j)));
  }
  EXPECT_NEAR(mf.num_skewness.max, *std::max_element(sk.begin(), sk.end()), 1e-10);
  EXPECT_NEAR(mf.num_skewness.mean, (sk[0] + sk[1] + sk[2]) / 3, 1e-10);
  EXPECT_NEAR(mf.num_kurtosis.min, *std::min_element(ku.begin(), ku.end()), 1e-10);
  EXPECT_NEAR(mf.target_skewness, oracle_skew(y), 1e-10);
  EXPECT_NEAR(mf.target_kurtosis, oracle_kurt(y), 1e-10);
  EXPECT_EQ(mf.n_instances, 60);
  EXPECT_EQ(mf.n_features, 3);
  double total = 0;
  for (double r : mf.pca_variance_ratios) total += r;
  EXPECT_NEAR(total, 1.0, 1e-12);  // three components, all listed
}

TEST(Extract, NoiseEstimateSeparatesSignalFromNoise) {
  CounterRng rng(6);
  const Matrix x = linalg::random_normal(1000, 2, rng);
  Vector clean(1000), noise(1000);
  for (std::size_t i = 0; i < 1000; ++i) {
    clean[i] = x(i, 0) + 0.5 * x(i, 1);
    noise[i] = rng.normal();
  }
  EXPECT_LT(extract(numeric_dataset(x, clean)).noise_estimate, 0.1);
  EXPECT_GT(extract(numeric_dataset(x, noise)).noise_estimate, 0.8);
}

TEST(Extract, InvariantToRowOrder) {
  const auto ds = mixed(150, 7);
  std::vector<std::size_t> perm = iota_indices(ds.rows());
  CounterRng rng(99);
  shuffle(perm, rng);
  data::Dataset shuffled = ds;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t j = 0; j < ds.numeric.cols(); ++j) shuffled.numeric(i, j) = ds.numeric(perm[i], j);
    for (std::size_t j = 0; j < ds.n_categorical(); ++j)
      shuffled.categorical[i * ds.n_categorical() + j] = ds.categorical[perm[i] * ds.n_categorical() + j];
    shuffled.target[i] = ds.target[perm[i]];
  }
  EXPECT_EQ(to_json(extract(ds, quick())).dump(), to_json(extract(shuffled, quick())).dump());
}

TEST(Extract, ScaleAndShiftInvariantStatistics) {
  const auto ds = mixed(120, 8);
  data::Dataset moved = ds;
  for (std::size_t i = 0; i < ds.rows(); ++i)
    for (std::size_t j = 0; j < ds.numeric.cols(); ++j) moved.numeric(i, j) = 3.0 * ds.numeric(i, j) - 7.0;
  const auto a = extract(ds, quick()).named();
  const auto b = extract(moved, quick()).named();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i].second, b[i].second, 1e-9) << a[i].first;
}

TEST(Extract, AllCategoricalIsMasked) {
  data::Dataset ds;
  ds.schema.categorical_names = {"a", "b"};
  ds.schema.cardinalities = {4, 3};
  ds.numeric = Matrix(40, 0);
  for (std::size_t i = 0; i < 40; ++i) {
    ds.categorical.push_back(i % 4);
    ds.categorical.push_back(i % 3);
    ds.target.push_back(static_cast<double>(i % 4) + 0.1 * static_cast<double>(i % 3));
  }
  const auto mf = extract(ds, quick());
  EXPECT_TRUE(mf.numeric_masked);
  EXPECT_EQ(mf.num_skewness.max, 0.0);
  EXPECT_EQ(mf.cat_cardinality.max, 4.0);
  EXPECT_EQ(mf.n_categorical, 2.0);
}

TEST(Extract, SubsampleIsRecorded) {
  auto o = quick();
  o.max_rows = 50;
  const auto mf = extract(mixed(120, 9), o);
  EXPECT_TRUE(mf.subsampled);
  EXPECT_EQ(mf.rows_used, 50u);
  EXPECT_EQ(mf.n_instances, 120);
}

TEST(Extract, JsonRoundTripAndDisplayNames) {
  const auto mf = extract(mixed(60, 10), quick());
  const auto back = from_json(nlohmann::json::parse(to_json(mf).dump()));
  EXPECT_EQ(to_json(back).dump(), to_json(mf).dump());
  EXPECT_EQ(display_name("target_skewness"), "Target Skewness");
  EXPECT_EQ(display_name("pca_ratio_2"), "PCA Variance Ratio 2");
  EXPECT_THROW(extract(numeric_dataset(Matrix(2, 1), Vector(2))), std::invalid_argument);
}
