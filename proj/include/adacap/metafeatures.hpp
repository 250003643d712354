#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "adacap/data.hpp"
#include "adacap/linalg.hpp"
#include "adacap/trees.hpp"

namespace adacap::metafeatures {

using linalg::Matrix;
using linalg::Vector;

struct MinMeanMax {
  double min = 0.0;
  double mean = 0.0;
  double max = 0.0;
};

inline MinMeanMax summarize(const Vector& v) {
  if (v.empty()) return {};
  MinMeanMax s{v.front(), 0.0, v.front()};
  for (double x : v) {
    s.min = std::min(s.min, x);
    s.max = std::max(s.max, x);
    s.mean += x;
  }
  s.mean /= static_cast<double>(v.size());
  return s;
}

struct MetaFeatureVector {
  double n_instances = 0;
  double n_features = 0;
  double n_categorical = 0;
  MinMeanMax cat_cardinality;
  MinMeanMax num_skewness;
  MinMeanMax num_kurtosis;
  MinMeanMax abs_correlation;
  double outlier_ratio = 0;
  double intrinsic_dim = 0;
  std::array<double, 5> pca_variance_ratios{};
  double target_skewness = 0;
  double target_kurtosis = 0;
  double noise_estimate = 0;

  // Metadata, not features.
  bool numeric_masked = false;  // no numeric columns: numeric stats are placeholders
  std::size_t rows_used = 0;
  bool subsampled = false;

  /// (name, value) in a fixed order.
  std::vector<std::pair<std::string, double>> named() const {
    std::vector<std::pair<std::string, double>> f{
        {"n_instances", n_instances},
        {"n_features", n_features},
        {"n_categorical", n_categorical},
        {"cat_cardinality_min", cat_cardinality.min},
        {"cat_cardinality_mean", cat_cardinality.mean},
        {"cat_cardinality_max", cat_cardinality.max},
        {"num_skewness_min", num_skewness.min},
        {"num_skewness_mean", num_skewness.mean},
        {"num_skewness_max", num_skewness.max},
        {"num_kurtosis_min", num_kurtosis.min},
        {"num_kurtosis_mean", num_kurtosis.mean},
        {"num_kurtosis_max", num_kurtosis.max},
        {"abs_correlation_min", abs_correlation.min},
        {"abs_correlation_mean", abs_correlation.mean},
        {"abs_correlation_max", abs_correlation.max},
        {"outlier_ratio", outlier_ratio},
        {"intrinsic_dim", intrinsic_dim},
    };
    for (std::size_t i = 0; i < 5; ++i) f.emplace_back("pca_ratio_" + std::to_string(i + 1), pca_variance_ratios[i]);
    f.emplace_back("target_skewness", target_skewness);
    f.emplace_back("target_kurtosis", target_kurtosis);
    f.emplace_back("noise_estimate", noise_estimate);
    return f;
  }

  static MetaFeatureVector from_named(const std::map<std::string, double>& m) {
    MetaFeatureVector v;
    auto get = [&](const std::string& k) {
      const auto it = m.find(k);
      if (it == m.end()) throw std::invalid_argument("meta-feature vector missing '" + k + "'");
      return it->second;
    };
    v.n_instances = get("n_instances");
    v.n_features = get("n_features");
    v.n_categorical = get("n_categorical");
    v.cat_cardinality = {get("cat_cardinality_min"), get("cat_cardinality_mean"), get("cat_cardinality_max")};
    v.num_skewness = {get("num_skewness_min"), get("num_skewness_mean"), get("num_skewness_max")};
    v.num_kurtosis = {get("num_kurtosis_min"), get("num_kurtosis_mean"), get("num_kurtosis_max")};
    v.abs_correlation = {get("abs_correlation_min"), get("abs_correlation_mean"), get("abs_correlation_max")};
    v.outlier_ratio = get("outlier_ratio");
    v.intrinsic_dim = get("intrinsic_dim");
    for (std::size_t i = 0; i < 5; ++i) v.pca_variance_ratios[i] = get("pca_ratio_" + std::to_string(i + 1));
    v.target_skewness = get("target_skewness");
    v.target_kurtosis = get("target_kurtosis");
    v.noise_estimate = get("noise_estimate");
    return v;
  }
};

/// Human-readable labels for reports.
inline std::string display_name(const std::string& key) {
  static const std::map<std::string, std::string> names{
      {"n_instances", "Number of Instances"},
      {"n_features", "Number of Features"},
      {"n_categorical", "Number of Categorical Features"},
      {"cat_cardinality_min", "Min Cardinality of Categorical Features"},
      {"cat_cardinality_mean", "Mean Cardinality of Categorical Features"},
      {"cat_cardinality_max", "Max Cardinality of Categorical Features"},
      {"num_skewness_min", "Min Skewness of Numerical Features"},
      {"num_skewness_mean", "Mean Skewness of Numerical Features"},
      {"num_skewness_max", "Max Skewness of Numerical Features"},
      {"num_kurtosis_min", "Min Kurtosis of Numerical Features"},
      {"num_kurtosis_mean", "Mean Kurtosis of Numerical Features"},
      {"num_kurtosis_max", "Max Kurtosis of Numerical Features"},
      {"abs_correlation_min", "Min Absolute Correlation of Numerical Features"},
      {"abs_correlation_mean", "Mean Absolute Correlation of Numerical Features"},
      {"abs_correlation_max", "Max Absolute Correlation of Numerical Features"},
      {"outlier_ratio", "Outlier Ratio of Numerical Features"},
      {"intrinsic_dim", "Intrinsic Dimensionality"},
      {"target_skewness", "Target Skewness"},
      {"target_kurtosis", "Target Kurtosis"},
      {"noise_estimate", "Noise Estimation (RF)"},
  };
  const auto it = names.find(key);
  if (it != names.end()) return it->second;
  if (key.rfind("pca_ratio_", 0) == 0) return "PCA Variance Ratio " + key.substr(10);
  return key;
}

// ---------------------------------------------------------------------------
// Estimators

/// Adjusted Fisher-Pearson skewness G1; 0 for constant data or n < 3.
inline double skewness(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  if (x.size() < 3) return 0.0;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double m2 = 0.0, m3 = 0.0;
  for (double v : x) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= n;
  m3 /= n;
  if (m2 <= 1e-300) return 0.0;
  const double g1 = m3 / std::pow(m2, 1.5);
  return g1 * std::sqrt(n * (n - 1.0)) / (n - 2.0);
}

/// Adjusted excess kurtosis G2; 0 for constant data or n < 4.
inline double excess_kurtosis(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  if (x.size() < 4) return 0.0;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double m2 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d2 = (v - mean) * (v - mean);
    m2 += d2;
    m4 += d2 * d2;
  }
  m2 /= n;
  m4 /= n;
  if (m2 <= 1e-300) return 0.0;
  const double g2 = m4 / (m2 * m2) - 3.0;
  return ((n + 1.0) * g2 + 6.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0));
}

/// Pearson correlation; 0 when either column is constant.
inline double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 1e-300 || sbb <= 1e-300) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

/// Quantile with linear interpolation between order statistics (position q*(n-1)).
inline double quantile(Vector sorted, double q) {
  std::sort(sorted.begin(), sorted.end());
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Share of values outside the Tukey fences [Q1 - 1.5 IQR, Q3 + 1.5 IQR].
inline double tukey_outlier_share(std::span<const double> x) {
  if (x.empty()) return 0.0;
  const Vector v(x.begin(), x.end());
  const double q1 = quantile(v, 0.25);
  const double q3 = quantile(v, 0.75);
  const double iqr = q3 - q1;
  const double lo = q1 - 1.5 * iqr, hi = q3 + 1.5 * iqr;
  std::size_t out = 0;
  for (double val : x) out += (val < lo || val > hi) ? 1 : 0;
  return static_cast<double>(out) / static_cast<double>(x.size());
}

/// Explained-variance ratios of PCA on column-standardized data, descending.
inline Vector pca_ratios(const Matrix& x) {
  if (x.rows() < 2 || x.cols() == 0) return {};
  Matrix z = x;
  const double n = static_cast<double>(x.rows());
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) mean += x(i, j);
    mean /= n;
    double var = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= n;
    const double sd = var > 1e-300 ? std::sqrt(var) : 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) z(i, j) = sd > 0.0 ? (x(i, j) - mean) / sd : 0.0;
  }
  const auto f = linalg::svd(z);
  Vector ev;
  double total = 0.0;
  for (double s : f.singular_values) {
    ev.push_back(s * s);
    total += s * s;
  }
  if (total <= 0.0) return Vector(ev.size(), 0.0);
  for (double& e : ev) e /= total;
  return ev;
}

inline std::size_t intrinsic_dimension(const Vector& ratios, double threshold = 0.95) {
  double cum = 0.0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    cum += ratios[i];
    if (cum >= threshold - 1e-12) return i + 1;
  }
  return ratios.size();
}

// ---------------------------------------------------------------------------
// Extraction

struct ExtractOptions {
  std::size_t max_rows = 50000;
  std::uint64_t seed = 0;  // subsample and forest streams
  trees::ForestConfig forest{};
};

namespace detail {

/// Lexicographic row order over (numeric..., categorical..., target) with NaN
/// first; makes extraction independent of the input row order.
inline std::vector<std::size_t> canonical_order(const data::Dataset& ds) {
  std::vector<std::size_t> order = iota_indices(ds.rows());
  const std::size_t k = ds.numeric.cols(), c = ds.n_categorical();
  auto less = [](double a, double b) {
    const bool na = std::isnan(a), nb = std::isnan(b);
    if (na || nb) return na && !nb;
    return a < b;
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    for (std::size_t j = 0; j < k; ++j) {
      const double va = ds.numeric(a, j), vb = ds.numeric(b, j);
      if (less(va, vb)) return true;
      if (less(vb, va)) return false;
    }
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t va = ds.categorical[a * c + j], vb = ds.categorical[b * c + j];
      if (va != vb) return va < vb;
    }
    return less(ds.target[a], ds.target[b]);
  });
  return order;
}

}  // namespace detail

/// Noise statistic: clip(OOB MSE / var(y), 0, 1) of a random forest on the
/// median-imputed numerics plus integer-coded categoricals.
inline double noise_estimate(const Matrix& features, const Vector& y, const trees::ForestConfig& cfg) {
  const auto forest = trees::fit_rf(features, y, cfg);
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  var /= static_cast<double>(y.size());
  if (var <= 1e-300) return 0.0;
  return std::clamp(forest.oob_mse(y) / var, 0.0, 1.0);
}

inline MetaFeatureVector extract(const data::Dataset& ds, const ExtractOptions& opt = {}) {
  if (ds.rows() < 3) throw std::invalid_argument("metafeatures: need at least 3 rows, got " + std::to_string(ds.rows()));
  std::vector<std::size_t> rows = detail::canonical_order(ds);
  MetaFeatureVector mf;
  if (rows.size() > opt.max_rows) {
    // Subsample canonical positions, then keep them in canonical order.
    std::vector<std::size_t> pos = iota_indices(rows.size());
    CounterRng rng(derive_seed(opt.seed, "metafeature-subsample"));
    shuffle(pos, rng);
    pos.resize(opt.max_rows);
    std::sort(pos.begin(), pos.end());
    std::vector<std::size_t> kept;
    kept.reserve(pos.size());
    for (std::size_t p : pos) kept.push_back(rows[p]);
    rows = std::move(kept);
    mf.subsampled = true;
  }
  const std::size_t n = rows.size();
  const std::size_t k = ds.numeric.cols(), c = ds.n_categorical();
  mf.rows_used = n;
  mf.n_instances = static_cast<double>(ds.rows());
  mf.n_features = static_cast<double>(k + c);
  mf.n_categorical = static_cast<double>(c);

  Vector cards;
  for (std::size_t card : ds.schema.cardinalities) cards.push_back(static_cast<double>(card));
  mf.cat_cardinality = summarize(cards);

  // Median-imputed numeric columns over the used rows.
  Matrix num(n, k);
  for (std::size_t j = 0; j < k; ++j) {
    Vector present;
    for (std::size_t r : rows)
      if (std::isfinite(ds.numeric(r, j))) present.push_back(ds.numeric(r, j));
    const double med = present.empty() ? 0.0 : quantile(present, 0.5);
    for (std::size_t i = 0; i < n; ++i) {
      const double v = ds.numeric(rows[i], j);
      num(i, j) = std::isfinite(v) ? v : med;
    }
  }
  Vector y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = ds.target[rows[i]];

  mf.numeric_masked = k == 0;
  if (k > 0) {
    Vector skews, kurts, outliers;
    for (std::size_t j = 0; j < k; ++j) {
      const Vector col = num.col(j);
      skews.push_back(skewness(col));
      kurts.push_back(excess_kurtosis(col));
      outliers.push_back(tukey_outlier_share(col));
    }
    mf.num_skewness = summarize(skews);
    mf.num_kurtosis = summarize(kurts);
    mf.outlier_ratio = summarize(outliers).mean;
    Vector corrs;
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = a + 1; b < k; ++b) corrs.push_back(std::abs(pearson(num.col(a), num.col(b))));
    mf.abs_correlation = summarize(corrs);
    const Vector ratios = pca_ratios(num);
    for (std::size_t i = 0; i < 5 && i < ratios.size(); ++i) mf.pca_variance_ratios[i] = ratios[i];
    mf.intrinsic_dim = static_cast<double>(intrinsic_dimension(ratios));
  }
  mf.target_skewness = skewness(y);
  mf.target_kurtosis = excess_kurtosis(y);

  Matrix features(n, k + c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) features(i, j) = num(i, j);
    for (std::size_t j = 0; j < c; ++j) features(i, k + j) = static_cast<double>(ds.categorical[rows[i] * c + j]);
  }
  trees::ForestConfig fc = opt.forest;
  fc.seed = derive_seed(opt.seed, "metafeature-forest");
  mf.noise_estimate = noise_estimate(features, y, fc);
  return mf;
}

inline nlohmann::ordered_json to_json(const MetaFeatureVector& mf) {
  nlohmann::ordered_json j;
  for (const auto& [name, value] : mf.named()) j[name] = value;
  j["meta"] = {{"numeric_masked", mf.numeric_masked}, {"rows_used", mf.rows_used}, {"subsampled", mf.subsampled}};
  return j;
}

inline MetaFeatureVector from_json(const nlohmann::json& j) {
  std::map<std::string, double> m;
  for (const auto& [key, value] : j.items())
    if (value.is_number()) m[key] = value.get<double>();
  MetaFeatureVector v = MetaFeatureVector::from_named(m);
  if (j.contains("meta")) {
    v.numeric_masked = j["meta"].value("numeric_masked", false);
    v.rows_used = j["meta"].value("rows_used", std::size_t{0});
    v.subsampled = j["meta"].value("subsampled", false);
  }
  return v;
}

}  // namespace adacap::metafeatures
