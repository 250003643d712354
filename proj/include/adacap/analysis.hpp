#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "adacap/data.hpp"

namespace adacap::analysis {

// ---------------------------------------------------------------------------
// Metrics and orientation

enum class Metric { rmse, mae, mape, r2 };

inline constexpr Metric kAllMetrics[] = {Metric::rmse, Metric::mae, Metric::mape, Metric::r2};

inline std::string to_string(Metric m) {
  switch (m) {
    case Metric::rmse: return "rmse";
    case Metric::mae: return "mae";
    case Metric::mape: return "mape";
    case Metric::r2: return "r2";
  }
  return "?";
}

inline std::string column_label(Metric m) {
  switch (m) {
    case Metric::rmse: return "RMSE";
    case Metric::mae: return "MAE";
    case Metric::mape: return "MAPE";
    case Metric::r2: return "R2";
  }
  return "?";
}

inline Metric parse_metric(std::string_view s) {
  for (Metric m : kAllMetrics)
    if (s == to_string(m)) return m;
  throw std::invalid_argument("unknown metric '" + std::string(s) + "' (expected rmse, mae, mape or r2)");
}

inline bool lower_is_better(Metric m) { return m != Metric::r2; }

inline std::optional<double> metric_value(const data::Metrics& v, Metric m) {
  switch (m) {
    case Metric::rmse: return v.rmse;
    case Metric::mae: return v.mae;
    case Metric::mape: return v.mape;
    case Metric::r2: return v.r2;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank

struct WilcoxonResult {
  std::size_t n_nonzero = 0;
  double w_plus = 0.0;
  double w_minus = 0.0;
  double statistic = 0.0;  // min(W+, W-)
  double p_value = 1.0;
  double median_difference = 0.0;
  int direction = 0;  // sign of the median difference
  bool exact = false;
  bool inconclusive = false;
};

inline constexpr std::size_t kExactLimit = 12;
inline constexpr std::size_t kMinNonzero = 5;

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

}  // namespace detail

/// Average ranks of |d| (1-based), doubled so ties stay integral.
inline std::vector<long> doubled_abs_ranks(std::span<const double> d) {
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<long> ranks(d.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const long doubled = static_cast<long>(i + 1 + j + 1);  // 2 * mean of ranks i+1..j+1
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = doubled;
    i = j + 1;
  }
  return ranks;
}

/// Two-sided p of W+ under the sign-flip null, from the exact distribution of
/// all 2^m sign assignments (counted by subset-sum over doubled ranks).
inline double wilcoxon_exact_p(std::span<const long> doubled_ranks, long doubled_w_plus) {
  long total = 0;
  for (long r : doubled_ranks) total += r;
  std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
  count[0] = 1.0;
  long reach = 0;
  for (long r : doubled_ranks) {
    for (long s = reach; s >= 0; --s)
      if (count[static_cast<std::size_t>(s)] != 0.0) count[static_cast<std::size_t>(s + r)] += count[static_cast<std::size_t>(s)];
    reach += r;
  }
  const double all = std::ldexp(1.0, static_cast<int>(doubled_ranks.size()));
  double lo = 0.0, hi = 0.0;
  for (long s = 0; s <= total; ++s) {
    if (s <= doubled_w_plus) lo += count[static_cast<std::size_t>(s)];
    if (s >= doubled_w_plus) hi += count[static_cast<std::size_t>(s)];
  }
  return std::min(1.0, 2.0 * std::min(lo, hi) / all);
}

/// Normal approximation with tie-corrected variance, a continuity correction of
/// half the lattice step, and a first-order Edgeworth term for the (negative)
/// excess kurtosis of the signed-rank sum.
inline double wilcoxon_normal_p(std::span<const long> doubled_ranks, long doubled_w_plus) {
  long step = 0;
  double sum = 0.0, var = 0.0, k4 = 0.0;
  for (long r2 : doubled_ranks) {
    step = std::gcd(step, r2);
    const double r = 0.5 * static_cast<double>(r2);
    sum += r;
    var += r * r / 4.0;
    k4 -= r * r * r * r / 8.0;
  }
  if (var <= 0.0) return 1.0;
  const double mean = sum / 2.0;
  const double dev = std::abs(0.5 * static_cast<double>(doubled_w_plus) - mean);
  if (dev == 0.0) return 1.0;
  const double z = std::max(0.0, dev - 0.25 * static_cast<double>(step)) / std::sqrt(var);
  const double g2 = k4 / (var * var);
  const double phi = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0)) - phi * g2 / 24.0 * (z * z * z - 3.0 * z);
  return std::clamp(2.0 * (1.0 - cdf), 0.0, 1.0);
}

/// Test on differences a[i] - b[i]. Fewer than kMinNonzero nonzero
/// differences yields an inconclusive result (p = 1).
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                           std::size_t exact_limit = kExactLimit) {
  if (a.size() != b.size()) throw std::invalid_argument("wilcoxon: paired samples differ in length");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i] - b[i];
    if (!std::isfinite(x)) throw std::invalid_argument("wilcoxon: non-finite difference at pair " + std::to_string(i));
    if (x != 0.0) d.push_back(x);
  }
  WilcoxonResult r;
  r.n_nonzero = d.size();
  r.median_difference = detail::median(d);
  r.direction = (r.median_difference > 0) - (r.median_difference < 0);
  if (d.size() < kMinNonzero) {
    r.inconclusive = true;
    return r;
  }
  const auto ranks = doubled_abs_ranks(d);
  long wp = 0, wm = 0;
  for (std::size_t i = 0; i < d.size(); ++i) (d[i] > 0 ? wp : wm) += ranks[i];
  r.w_plus = 0.5 * static_cast<double>(wp);
  r.w_minus = 0.5 * static_cast<double>(wm);
  r.statistic = std::min(r.w_plus, r.w_minus);
  r.exact = d.size() <= exact_limit;
  r.p_value = r.exact ? wilcoxon_exact_p(ranks, wp) : wilcoxon_normal_p(ranks, wp);
  return r;
}

// ---------------------------------------------------------------------------
// Outcomes and regimes

enum class Outcome { better, worse, no_difference, inconclusive };

inline std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::better: return "significantly_better";
    case Outcome::worse: return "significantly_worse";
    case Outcome::no_difference: return "no_significant_difference";
    case Outcome::inconclusive: return "inconclusive";
  }
  return "?";
}

inline constexpr double kAlpha = 0.05;

/// Outcome for the first sample of the pair (a = with, b = without).
inline Outcome classify(const WilcoxonResult& r, Metric m, double alpha = kAlpha) {
  if (r.inconclusive) return Outcome::inconclusive;
  if (r.p_value >= alpha || r.direction == 0) return Outcome::no_difference;
  const bool improved = lower_is_better(m) ? r.direction < 0 : r.direction > 0;
  return improved ? Outcome::better : Outcome::worse;
}

enum class Regime { small, mid, large };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::small: return "small";
    case Regime::mid: return "mid";
    case Regime::large: return "large";
  }
  return "?";
}

/// small: N < 500, mid: 500 <= N <= 10000, large: N > 10000.
inline Regime regime_of(std::size_t n) {
  if (n < 500) return Regime::small;
  if (n <= 10000) return Regime::mid;
  return Regime::large;
}

// ---------------------------------------------------------------------------
// Observations and pairing

/// One evaluated (dataset, model, variant, fold) cell.
struct Observation {
  std::string dataset;
  std::string model;    // architecture name
  std::string variant;  // head kind, or a configuration label such as "P=10"
  std::size_t fold = 0;
  std::size_t n_train = 0;
  data::Metrics metrics;
};

struct Pair {
  std::string dataset;
  std::size_t fold = 0;
  std::size_t n_train = 0;
  double with = 0.0;
  double without = 0.0;
};

struct PairedResults {
  std::string model;
  Metric metric = Metric::rmse;
  std::vector<Pair> pairs;  // sorted by (dataset, fold)
};

/// Aligns the two variants of one model on (dataset, fold). Keys present for
/// only one variant are rejected by name; keys where the metric is undefined
/// for both are skipped.
inline PairedResults make_pairs(std::span<const Observation> obs, const std::string& model, Metric metric,
                                const std::string& with_variant, const std::string& without_variant) {
  using Key = std::pair<std::string, std::size_t>;
  std::map<Key, const Observation*> with, without;
  for (const auto& o : obs) {
    if (o.model != model) continue;
    auto* target = o.variant == with_variant ? &with : o.variant == without_variant ? &without : nullptr;
    if (!target) continue;
    if (!target->emplace(Key{o.dataset, o.fold}, &o).second)
      throw std::invalid_argument("duplicate observation for " + model + "/" + o.variant + " on " + o.dataset +
                                  " fold " + std::to_string(o.fold));
  }
  PairedResults out{model, metric, {}};
  std::set<Key> keys;
  for (const auto& [k, _] : with) keys.insert(k);
  for (const auto& [k, _] : without) keys.insert(k);
  for (const auto& k : keys) {
    const auto a = with.find(k), b = without.find(k);
    if (a == with.end() || b == without.end())
      throw std::invalid_argument("unpaired result for " + model + " on " + k.first + " fold " +
                                  std::to_string(k.second) + ": missing " +
                                  (a == with.end() ? with_variant : without_variant));
    const auto va = metric_value(a->second->metrics, metric), vb = metric_value(b->second->metrics, metric);
    if (!va && !vb) continue;
    if (!va || !vb)
      throw std::invalid_argument(to_string(metric) + " defined for only one variant on " + k.first + " fold " +
                                  std::to_string(k.second));
    out.pairs.push_back({k.first, k.second, a->second->n_train, *va, *vb});
  }
  return out;
}

/// Collapses folds: one pair per dataset holding the fold means.
inline PairedResults per_dataset_means(const PairedResults& in) {
  PairedResults out{in.model, in.metric, {}};
  std::map<std::string, std::tuple<double, double, std::size_t, std::size_t>> acc;
  for (const auto& p : in.pairs) {
    auto& [w, wo, c, n] = acc[p.dataset];
    w += p.with;
    wo += p.without;
    ++c;
    n += p.n_train;
  }
  for (const auto& [ds, v] : acc) {
    const auto& [w, wo, c, n] = v;
    const double cd = static_cast<double>(c);
    out.pairs.push_back({ds, 0, n / c, w / cd, wo / cd});
  }
  return out;
}

inline WilcoxonResult test_pairs(const PairedResults& p, std::size_t exact_limit = kExactLimit) {
  std::vector<double> a, b;
  for (const auto& x : p.pairs) {
    a.push_back(x.with);
    b.push_back(x.without);
  }
  return wilcoxon_signed_rank(a, b, exact_limit);
}

enum class PairingMode { fold, dataset_mean };

struct RegimeOutcome {
  Regime regime = Regime::small;
  std::string model;
  Metric metric = Metric::rmse;
  Outcome outcome = Outcome::inconclusive;
  WilcoxonResult test;
  std::size_t n_pairs = 0;
};

/// One Wilcoxon outcome per (regime, model, metric). A dataset's regime is
/// taken from its training-set size.
inline std::vector<RegimeOutcome> regime_outcomes(std::span<const Observation> obs, const std::string& with_variant,
                                                  const std::string& without_variant,
                                                  PairingMode mode = PairingMode::fold, double alpha = kAlpha) {
  std::set<std::string> models;
  for (const auto& o : obs) models.insert(o.model);
  std::vector<RegimeOutcome> out;
  for (Regime reg : {Regime::small, Regime::mid, Regime::large})
    for (const auto& model : models)
      for (Metric m : kAllMetrics) {
        PairedResults all = make_pairs(obs, model, m, with_variant, without_variant);
        if (mode == PairingMode::dataset_mean) all = per_dataset_means(all);
        PairedResults sub{model, m, {}};
        for (const auto& p : all.pairs)
          if (regime_of(p.n_train) == reg) sub.pairs.push_back(p);
        if (sub.pairs.empty()) continue;
        RegimeOutcome r{reg, model, m, Outcome::inconclusive, test_pairs(sub), sub.pairs.size()};
        r.outcome = classify(r.test, m, alpha);
        out.push_back(r);
      }
  return out;
}

inline std::string plot_data_csv(std::span<const RegimeOutcome> rows) {
  std::ostringstream s;
  s << "category,model,metric,outcome,p_value,n_pairs\n";
  for (const auto& r : rows)
    s << to_string(r.regime) << ',' << r.model << ',' << to_string(r.metric) << ',' << to_string(r.outcome) << ','
      << r.test.p_value << ',' << r.n_pairs << '\n';
  return s.str();
}

inline nlohmann::ordered_json to_json(const RegimeOutcome& r) {
  return {{"category", to_string(r.regime)},       {"model", r.model},
          {"metric", to_string(r.metric)},         {"outcome", to_string(r.outcome)},
          {"p_value", r.test.p_value},             {"statistic", r.test.statistic},
          {"median_difference", r.test.median_difference},
          {"exact", r.test.exact},                 {"n_pairs", r.n_pairs}};
}

// ---------------------------------------------------------------------------
// Win counts

struct WinRow {
  std::string config;
  std::map<Metric, std::size_t> wins;
  std::size_t total = 0;
  double percent = 0.0;  // total / number of (key, metric) cells
};

struct WinTable {
  std::string config_header = "P";
  std::vector<WinRow> rows;  // in the order configurations were given
  std::size_t cells = 0;
};

/// A configuration wins a (dataset, model, fold, metric) cell when its value
/// is strictly best; exact ties award nothing. Every configuration must cover
/// the same keys.
inline WinTable win_counts(std::span<const Observation> obs, const std::vector<std::string>& configs,
                           std::string config_header = "P") {
  using Key = std::tuple<std::string, std::string, std::size_t>;
  std::map<std::string, std::map<Key, const Observation*>> by_config;
  for (const auto& c : configs) by_config[c];
  for (const auto& o : obs) {
    auto it = by_config.find(o.variant);
    if (it == by_config.end()) continue;
    if (!it->second.emplace(Key{o.dataset, o.model, o.fold}, &o).second)
      throw std::invalid_argument("duplicate observation for " + o.variant + " on " + o.dataset + " fold " +
                                  std::to_string(o.fold));
  }
  if (configs.empty()) throw std::invalid_argument("win_counts: no configurations");
  const auto& reference = by_config.at(configs.front());
  for (const auto& c : configs) {
    const auto& m = by_config.at(c);
    bool same = m.size() == reference.size();
    for (auto a = m.begin(), b = reference.begin(); same && a != m.end(); ++a, ++b) same = a->first == b->first;
    if (!same)
      throw std::invalid_argument("win_counts: configuration '" + c + "' is not evaluated on the same keys as '" +
                                  configs.front() + "'");
  }
  WinTable t;
  t.config_header = std::move(config_header);
  for (const auto& c : configs) {
    WinRow r{c, {}, 0, 0.0};
    for (Metric m : kAllMetrics) r.wins[m] = 0;
    t.rows.push_back(r);
  }
  for (const auto& [key, _] : reference) {
    for (Metric m : kAllMetrics) {
      std::vector<std::optional<double>> v;
      for (const auto& c : configs) v.push_back(metric_value(by_config.at(c).at(key)->metrics, m));
      if (std::none_of(v.begin(), v.end(), [](const auto& x) { return x.has_value(); })) continue;
      if (std::any_of(v.begin(), v.end(), [](const auto& x) { return !x.has_value(); }))
        throw std::invalid_argument("win_counts: " + to_string(m) + " missing for some configurations on " +
                                    std::get<0>(key) + " fold " + std::to_string(std::get<2>(key)));
      ++t.cells;
      std::size_t best = 0;
      bool tie = false;
      for (std::size_t i = 1; i < v.size(); ++i) {
        const bool better = lower_is_better(m) ? *v[i] < *v[best] : *v[i] > *v[best];
        if (better) {
          best = i;
          tie = false;
        } else if (*v[i] == *v[best]) {
          tie = true;
        }
      }
      if (!tie) ++t.rows[best].wins[m];
    }
  }
  for (auto& r : t.rows) {
    for (const auto& [_, w] : r.wins) r.total += w;
    r.percent = t.cells ? 100.0 * static_cast<double>(r.total) / static_cast<double>(t.cells) : 0.0;
  }
  return t;
}

inline std::string to_csv(const WinTable& t) {
  std::ostringstream s;
  s << t.config_header;
  for (Metric m : kAllMetrics) s << ',' << column_label(m);
  s << ",Total,%\n";
  for (const auto& r : t.rows) {
    s << r.config;
    for (Metric m : kAllMetrics) s << ',' << r.wins.at(m);
    char pct[32];
    std::snprintf(pct, sizeof pct, "%.2f", r.percent);
    s << ',' << r.total << ',' << pct << '\n';
  }
  return s.str();
}

inline nlohmann::ordered_json to_json(const WinTable& t) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : t.rows) {
    nlohmann::ordered_json j{{t.config_header, r.config}};
    for (Metric m : kAllMetrics) j[column_label(m)] = r.wins.at(m);
    j["Total"] = r.total;
    j["%"] = r.percent;
    rows.push_back(j);
  }
  return {{"columns", [&] {
             std::vector<std::string> c{t.config_header};
             for (Metric m : kAllMetrics) c.push_back(column_label(m));
             c.push_back("Total");
             c.push_back("%");
             return c;
           }()},
          {"cells", t.cells},
          {"rows", rows}};
}

}  // namespace adacap::analysis
