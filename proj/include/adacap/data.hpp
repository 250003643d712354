#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "adacap/linalg.hpp"
#include "adacap/models.hpp"
#include "adacap/rng.hpp"

namespace adacap::data {

using linalg::Matrix;
using linalg::Vector;

struct DatasetSchema {
  std::vector<std::string> numeric_names;
  std::vector<std::string> categorical_names;
  std::vector<std::size_t> cardinalities;
  std::string target_name;

  std::size_t n_features() const noexcept { return numeric_names.size() + categorical_names.size(); }
};

/// Raw typed table. Missing numerics are NaN until a split is prepared.
struct Dataset {
  std::string id;
  DatasetSchema schema;
  Matrix numeric;                                       // n x numeric
  std::vector<std::size_t> categorical;                 // n x categorical, row-major
  std::vector<std::vector<std::string>> category_labels;  // per categorical feature
  Vector target;
  std::size_t dropped_rows = 0;  // rows whose target was missing or non-numeric

  std::size_t rows() const noexcept { return target.size(); }
  std::size_t n_categorical() const noexcept { return schema.categorical_names.size(); }

  models::Batch batch(std::span<const std::size_t> rows_idx) const {
    models::Batch all{numeric, categorical, n_categorical()};
    return all.select(rows_idx);
  }
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// CSV

struct CsvOptions {
  std::string target;
  std::set<std::string> categorical;  // force categorical
  std::set<std::string> numeric;      // force numeric
  std::set<std::string> drop;         // ignore entirely
  char delimiter = ',';
  std::set<std::string> missing_tokens{"", "NA", "N/A", "NaN", "nan", "?", "null", "NULL", "None"};
  double numeric_threshold = 0.95;  // parse success share of non-missing cells
};

inline constexpr const char* kMissingCategory = "<missing>";

namespace detail {

inline std::vector<std::vector<std::string>> parse_csv(std::istream& in, char delim) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          field.push_back('"');
          in.get();
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && in.peek() == '\n') in.get();
      row.push_back(std::move(field));
      field.clear();
      if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field.push_back(c);
    }
  }
  if (quoted) throw DataError("csv: unterminated quoted field");
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

inline std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+') ++first;
  const auto r = std::from_chars(first, last, v);
  if (r.ec != std::errc() || r.ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

inline Dataset load_csv_stream(std::istream& in, const CsvOptions& opt, const std::string& id = "") {
  auto rows = detail::parse_csv(in, opt.delimiter);
  if (rows.empty()) throw DataError("csv '" + id + "': empty file");
  std::vector<std::string> header = rows.front();
  for (auto& h : header) h = detail::trim(h);
  const std::size_t width = header.size();
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != width) {
      throw DataError("csv '" + id + "': line " + std::to_string(r + 1) + " has " +
                      std::to_string(rows[r].size()) + " fields, header has " + std::to_string(width));
    }
  }
  if (rows.size() < 2) throw DataError("csv '" + id + "': header but no data rows");
  const auto target_it = std::find(header.begin(), header.end(), opt.target);
  if (opt.target.empty() || target_it == header.end()) {
    throw DataError("csv '" + id + "': target column '" + opt.target + "' not found");
  }
  const std::size_t target_col = static_cast<std::size_t>(target_it - header.begin());
  for (const auto& name : opt.categorical)
    if (opt.numeric.count(name)) throw DataError("csv: column '" + name + "' hinted both numeric and categorical");

  auto is_missing = [&](const std::string& s) { return opt.missing_tokens.count(detail::trim(s)) > 0; };

  // Rows with a usable target.
  std::vector<std::size_t> keep;
  Dataset ds;
  ds.id = id;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& cell = rows[r][target_col];
    const auto v = is_missing(cell) ? std::nullopt : detail::parse_number(detail::trim(cell));
    if (!v) {
      ++ds.dropped_rows;
      continue;
    }
    keep.push_back(r);
    ds.target.push_back(*v);
  }
  if (keep.empty()) throw DataError("csv '" + id + "': no row has a numeric target");
  ds.schema.target_name = opt.target;

  std::vector<std::size_t> numeric_cols, categorical_cols;
  for (std::size_t c = 0; c < width; ++c) {
    if (c == target_col || opt.drop.count(header[c])) continue;
    bool numeric;
    if (opt.numeric.count(header[c])) {
      numeric = true;
    } else if (opt.categorical.count(header[c])) {
      numeric = false;
    } else {
      std::size_t present = 0, parsed = 0;
      for (std::size_t r : keep) {
        if (is_missing(rows[r][c])) continue;
        ++present;
        if (detail::parse_number(detail::trim(rows[r][c]))) ++parsed;
      }
      numeric = present > 0 && static_cast<double>(parsed) > opt.numeric_threshold * static_cast<double>(present);
    }
    (numeric ? numeric_cols : categorical_cols).push_back(c);
  }
  const std::size_t n = keep.size();
  ds.numeric = Matrix(n, numeric_cols.size());
  for (std::size_t j = 0; j < numeric_cols.size(); ++j) {
    ds.schema.numeric_names.push_back(header[numeric_cols[j]]);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& cell = rows[keep[i]][numeric_cols[j]];
      const auto v = is_missing(cell) ? std::nullopt : detail::parse_number(detail::trim(cell));
      ds.numeric(i, j) = v ? *v : std::numeric_limits<double>::quiet_NaN();
    }
  }
  ds.categorical.assign(n * categorical_cols.size(), 0);
  for (std::size_t j = 0; j < categorical_cols.size(); ++j) {
    ds.schema.categorical_names.push_back(header[categorical_cols[j]]);
    std::set<std::string> labels;
    for (std::size_t r : keep) {
      const auto& cell = rows[r][categorical_cols[j]];
      labels.insert(is_missing(cell) ? kMissingCategory : detail::trim(cell));
    }
    std::vector<std::string> ordered(labels.begin(), labels.end());
    std::map<std::string, std::size_t> index;
    for (std::size_t k = 0; k < ordered.size(); ++k) index[ordered[k]] = k;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& cell = rows[keep[i]][categorical_cols[j]];
      ds.categorical[i * categorical_cols.size() + j] =
          index.at(is_missing(cell) ? kMissingCategory : detail::trim(cell));
    }
    ds.schema.cardinalities.push_back(ordered.size());
    ds.category_labels.push_back(std::move(ordered));
  }
  if (ds.schema.n_features() == 0) throw DataError("csv '" + id + "': no feature columns besides the target");
  return ds;
}

inline Dataset load_csv(const std::string& path, const CsvOptions& opt, const std::string& id = "") {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("csv: cannot open '" + path + "'");
  return load_csv_stream(in, opt, id.empty() ? path : id);
}

// ---------------------------------------------------------------------------
// Preprocessing

/// Per-column statistics fit on training rows only.
struct Standardizer {
  Vector medians;  // imputation values
  Vector means;
  Vector stds;
  std::vector<std::vector<bool>> seen_categories;  // [feature][category]

  static Standardizer fit(const Dataset& ds, std::span<const std::size_t> train_rows) {
    if (train_rows.empty()) throw std::invalid_argument("Standardizer::fit: no training rows");
    Standardizer s;
    const std::size_t k = ds.numeric.cols();
    s.medians.assign(k, 0.0);
    s.means.assign(k, 0.0);
    s.stds.assign(k, 1.0);
    for (std::size_t j = 0; j < k; ++j) {
      Vector present;
      for (std::size_t r : train_rows)
        if (std::isfinite(ds.numeric(r, j))) present.push_back(ds.numeric(r, j));
      if (present.empty()) continue;  // column entirely missing: constant 0 after imputation
      std::sort(present.begin(), present.end());
      const std::size_t m = present.size();
      s.medians[j] = m % 2 ? present[m / 2] : 0.5 * (present[m / 2 - 1] + present[m / 2]);
      double mean = 0.0;
      for (std::size_t r : train_rows) mean += s.value(ds.numeric(r, j), j);
      mean /= static_cast<double>(train_rows.size());
      double var = 0.0;
      for (std::size_t r : train_rows) {
        const double d = s.value(ds.numeric(r, j), j) - mean;
        var += d * d;
      }
      var /= static_cast<double>(train_rows.size());
      s.means[j] = mean;
      s.stds[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    const std::size_t c = ds.n_categorical();
    s.seen_categories.resize(c);
    for (std::size_t j = 0; j < c; ++j) {
      s.seen_categories[j].assign(ds.schema.cardinalities[j], false);
      for (std::size_t r : train_rows) s.seen_categories[j][ds.categorical[r * c + j]] = true;
    }
    return s;
  }

  double value(double raw, std::size_t j) const { return std::isfinite(raw) ? raw : medians[j]; }

  models::Batch transform(const Dataset& ds, std::span<const std::size_t> rows) const {
    models::Batch b = ds.batch(rows);
    for (std::size_t i = 0; i < b.numeric.rows(); ++i)
      for (std::size_t j = 0; j < b.numeric.cols(); ++j)
        b.numeric(i, j) = (value(b.numeric(i, j), j) - means[j]) / stds[j];
    // Categories absent from training rows map to the reserved unseen row.
    const std::size_t c = b.n_categorical;
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) {
        std::size_t& v = b.categorical[i * c + j];
        if (!seen_categories[j][v]) v = seen_categories[j].size();
      }
    return b;
  }
};

struct PreparedSplit {
  models::InputSchema schema;
  models::Batch train_x, test_x;
  Vector train_y, test_y;
  Standardizer stats;
};

inline models::InputSchema input_schema(const Dataset& ds) {
  return models::InputSchema{ds.numeric.cols(), ds.schema.cardinalities};
}

/// Targets stay in raw units here; fit() standardizes them internally.
inline PreparedSplit prepare_split(const Dataset& ds, std::span<const std::size_t> train_rows,
                                   std::span<const std::size_t> test_rows) {
  PreparedSplit s;
  s.schema = input_schema(ds);
  s.stats = Standardizer::fit(ds, train_rows);
  s.train_x = s.stats.transform(ds, train_rows);
  s.test_x = s.stats.transform(ds, test_rows);
  for (std::size_t r : train_rows) s.train_y.push_back(ds.target[r]);
  for (std::size_t r : test_rows) s.test_y.push_back(ds.target[r]);
  return s;
}

// ---------------------------------------------------------------------------
// Metrics

struct Metrics {
  double rmse = 0.0;
  double mae = 0.0;
  double mape = 0.0;
  std::size_t mape_skipped = 0;  // rows with |y| < 1e-12
  std::optional<double> r2;      // missing when y is constant
};

inline constexpr double kMapeGuard = 1e-12;

inline Metrics metrics(std::span<const double> y, std::span<const double> y_hat) {
  if (y.empty() || y.size() != y_hat.size()) {
    throw std::invalid_argument("metrics: need equal nonzero lengths, got " + std::to_string(y.size()) + " and " +
                                std::to_string(y_hat.size()));
  }
  const double n = static_cast<double>(y.size());
  Metrics m;
  double sse = 0.0, sae = 0.0, sape = 0.0, mean = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = y[i] - y_hat[i];
    sse += e * e;
    sae += std::abs(e);
    mean += y[i];
    if (std::abs(y[i]) < kMapeGuard) {
      ++m.mape_skipped;
    } else {
      sape += std::abs(e / y[i]);
      ++counted;
    }
  }
  mean /= n;
  double sst = 0.0;
  for (double v : y) sst += (v - mean) * (v - mean);
  m.rmse = std::sqrt(sse / n);
  m.mae = sae / n;
  m.mape = counted ? sape / static_cast<double>(counted) : 0.0;
  if (sst > 0.0) m.r2 = 1.0 - sse / sst;
  return m;
}

// ---------------------------------------------------------------------------
// Cross-validation

struct FoldPlan {
  std::size_t k = 10;
  std::uint64_t seed = 0;
  std::vector<std::size_t> assignments;  // row -> fold

  std::vector<std::size_t> test_rows(std::size_t fold) const {
    std::vector<std::size_t> r;
    for (std::size_t i = 0; i < assignments.size(); ++i)
      if (assignments[i] == fold) r.push_back(i);
    return r;
  }
  std::vector<std::size_t> train_rows(std::size_t fold) const {
    std::vector<std::size_t> r;
    for (std::size_t i = 0; i < assignments.size(); ++i)
      if (assignments[i] != fold) r.push_back(i);
    return r;
  }
  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> s(k, 0);
    for (std::size_t a : assignments) ++s[a];
    return s;
  }
};

/// Shuffled round-robin: the i-th row of a seeded shuffle goes to fold i mod k.
inline FoldPlan make_folds(std::size_t n, std::size_t k = 10, std::uint64_t seed = 0) {
  if (k < 2) throw std::invalid_argument("make_folds: need k >= 2");
  if (n < k) {
    throw std::invalid_argument("make_folds: " + std::to_string(n) + " rows cannot fill " + std::to_string(k) +
                                " folds");
  }
  FoldPlan p;
  p.k = k;
  p.seed = seed;
  std::vector<std::size_t> order = iota_indices(n);
  CounterRng rng(derive_seed(seed, "folds"));
  shuffle(order, rng);
  p.assignments.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) p.assignments[order[i]] = i % k;
  return p;
}

// ---------------------------------------------------------------------------
// Synthetic generators

enum class SynthKind { linear, friedman, heavy_noise, skewed };

inline const char* to_string(SynthKind k) {
  switch (k) {
    case SynthKind::linear: return "linear";
    case SynthKind::friedman: return "friedman";
    case SynthKind::heavy_noise: return "heavy_noise";
    case SynthKind::skewed: return "skewed";
  }
  return "?";
}

inline SynthKind parse_synth_kind(const std::string& s) {
  if (s == "linear") return SynthKind::linear;
  if (s == "friedman") return SynthKind::friedman;
  if (s == "heavy_noise") return SynthKind::heavy_noise;
  if (s == "skewed") return SynthKind::skewed;
  throw std::invalid_argument("unknown synthetic kind '" + s + "'");
}

struct SynthOptions {
  SynthKind kind = SynthKind::linear;
  std::size_t n = 200;
  std::size_t k = 8;
  double noise = 0.0;  // see SynthTruth::noise_sd for its meaning per kind
  std::uint64_t seed = 0;
  std::size_t n_categorical = 0;
  std::size_t cardinality = 4;
};

struct SynthTruth {
  std::string function;
  double noise_sd = 0.0;  // sd of the additive noise in target units
  double bayes_rmse = 0.0;
  Vector clean;           // noise-free target per row
};

struct SynthResult {
  Dataset dataset;
  SynthTruth truth;
};

/// Ground truth per kind, with x ~ N(0,1) unless noted and e ~ N(0,1):
///   linear:      y = x.beta + noise*e, beta_j ~ U(-2,2)
///   friedman:    x ~ U(0,1), y = 10 sin(pi x0 x1) + 20 (x2-0.5)^2 + 10 x3 + 5 x4 + noise*e   (k >= 5)
///   heavy_noise: y = x.beta + noise*t3/sqrt(3), t3 Student-t with 3 dof (unit-variance noise scale)
///   skewed:      z = x.beta/|beta| over the first ceil(k/2) features, y = exp(z) + noise*e
/// Categorical features add a per-level offset drawn from U(-1,1).
inline SynthResult synth(const SynthOptions& o) {
  if (o.n < 2) throw std::invalid_argument("synth: need n >= 2");
  if (o.k < 1) throw std::invalid_argument("synth: need k >= 1");
  if (o.kind == SynthKind::friedman && o.k < 5) throw std::invalid_argument("synth: friedman needs k >= 5");
  if (!(o.noise >= 0.0)) throw std::invalid_argument("synth: noise must be >= 0");
  CounterRng xr(derive_seed(o.seed, "x"));
  CounterRng br(derive_seed(o.seed, "beta"));
  CounterRng er(derive_seed(o.seed, "noise"));
  CounterRng cr(derive_seed(o.seed, "categorical"));

  SynthResult out;
  Dataset& ds = out.dataset;
  ds.id = std::string("synth-") + to_string(o.kind) + "-" + std::to_string(o.seed);
  ds.numeric = Matrix(o.n, o.k);
  for (std::size_t j = 0; j < o.k; ++j) ds.schema.numeric_names.push_back("x" + std::to_string(j));
  ds.schema.target_name = "y";
  for (double& v : ds.numeric.values()) v = o.kind == SynthKind::friedman ? xr.uniform() : xr.normal();

  Vector beta(o.k);
  for (double& b : beta) b = br.uniform(-2.0, 2.0);
  const std::size_t informative = (o.k + 1) / 2;
  double bnorm = 0.0;
  for (std::size_t j = 0; j < informative; ++j) bnorm += beta[j] * beta[j];
  bnorm = std::sqrt(bnorm);

  std::vector<Vector> offsets(o.n_categorical, Vector(o.cardinality));
  for (std::size_t c = 0; c < o.n_categorical; ++c) {
    ds.schema.categorical_names.push_back("c" + std::to_string(c));
    ds.schema.cardinalities.push_back(o.cardinality);
    std::vector<std::string> labels;
    for (std::size_t l = 0; l < o.cardinality; ++l) labels.push_back("level" + std::to_string(l));
    ds.category_labels.push_back(labels);
    for (double& v : offsets[c]) v = cr.uniform(-1.0, 1.0);
  }
  ds.categorical.assign(o.n * o.n_categorical, 0);

  SynthTruth& t = out.truth;
  t.clean.resize(o.n);
  ds.target.resize(o.n);
  for (std::size_t i = 0; i < o.n; ++i) {
    const auto x = ds.numeric.row(i);
    double f = 0.0;
    switch (o.kind) {
      case SynthKind::linear:
      case SynthKind::heavy_noise:
        f = linalg::dot(x, beta);
        break;
      case SynthKind::friedman:
        f = 10.0 * std::sin(std::numbers::pi * x[0] * x[1]) + 20.0 * (x[2] - 0.5) * (x[2] - 0.5) + 10.0 * x[3] +
            5.0 * x[4];
        break;
      case SynthKind::skewed: {
        double z = 0.0;
        for (std::size_t j = 0; j < informative; ++j) z += x[j] * beta[j];
        f = std::exp(z / bnorm);
        break;
      }
    }
    for (std::size_t c = 0; c < o.n_categorical; ++c) {
      const std::size_t level = cr.below(o.cardinality);
      ds.categorical[i * o.n_categorical + c] = level;
      f += offsets[c][level];
    }
    double e = er.normal();
    if (o.kind == SynthKind::heavy_noise) {
      double chi2 = 0.0;
      for (int d = 0; d < 3; ++d) {
        const double g = er.normal();
        chi2 += g * g;
      }
      e = e / std::sqrt(chi2 / 3.0) / std::sqrt(3.0);
    }
    t.clean[i] = f;
    ds.target[i] = f + o.noise * e;
  }
  switch (o.kind) {
    case SynthKind::linear: t.function = "y = x.beta"; break;
    case SynthKind::friedman: t.function = "10 sin(pi x0 x1) + 20 (x2-0.5)^2 + 10 x3 + 5 x4"; break;
    case SynthKind::heavy_noise: t.function = "y = x.beta, Student-t(3) noise"; break;
    case SynthKind::skewed: t.function = "y = exp(x.beta/|beta|) over the first ceil(k/2) features"; break;
  }
  // t3 has variance 3, so t3/sqrt(3) has unit variance.
  t.noise_sd = o.noise;
  t.bayes_rmse = o.noise;
  return out;
}

}  // namespace adacap::data
