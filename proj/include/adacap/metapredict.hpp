#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "adacap/analysis.hpp"
#include "adacap/metafeatures.hpp"
#include "adacap/trees.hpp"

namespace adacap::metapredict {

using analysis::Metric;
using analysis::Observation;
using linalg::Matrix;
using linalg::Vector;
using metafeatures::MetaFeatureVector;

struct MetaExample {
  std::string dataset;
  std::string model;
  MetaFeatureVector features;
  bool label = false;  // AdaCap's fold-mean metric strictly better than the base model's
  double with_mean = 0.0;
  double without_mean = 0.0;
};

struct MetaDataset {
  Metric metric = Metric::rmse;
  std::vector<MetaExample> examples;  // sorted by (model, dataset)
  std::size_t unpaired = 0;           // (dataset, model) groups whose folds did not align
  std::size_t missing_features = 0;   // groups whose dataset had no meta-feature vector
};

/// One example per (dataset, model). Groups are skipped (and counted) when a
/// variant is missing, the fold sets differ, or the metric is undefined.
inline MetaDataset build_meta_dataset(std::span<const Observation> obs,
                                      const std::map<std::string, MetaFeatureVector>& features, Metric metric,
                                      const std::string& with_variant = "adacap",
                                      const std::string& without_variant = "linear") {
  using Group = std::pair<std::string, std::string>;  // (model, dataset)
  std::map<Group, std::map<std::size_t, double>> with, without;
  std::set<Group> groups;
  for (const auto& o : obs) {
    const bool is_with = o.variant == with_variant;
    if (!is_with && o.variant != without_variant) continue;
    const Group g{o.model, o.dataset};
    groups.insert(g);
    const auto v = analysis::metric_value(o.metrics, metric);
    if (!v) continue;
    (is_with ? with : without)[g][o.fold] = *v;
  }
  MetaDataset md;
  md.metric = metric;
  for (const auto& g : groups) {
    const auto a = with.find(g), b = without.find(g);
    bool aligned = a != with.end() && b != without.end() && a->second.size() == b->second.size();
    if (aligned)
      for (auto i = a->second.begin(), j = b->second.begin(); i != a->second.end(); ++i, ++j) aligned &= i->first == j->first;
    if (!aligned) {
      ++md.unpaired;
      continue;
    }
    const auto f = features.find(g.second);
    if (f == features.end()) {
      ++md.missing_features;
      continue;
    }
    auto mean = [](const std::map<std::size_t, double>& m) {
      double s = 0.0;
      for (const auto& [_, v] : m) s += v;
      return s / static_cast<double>(m.size());
    };
    MetaExample e{g.second, g.first, f->second, false, mean(a->second), mean(b->second)};
    e.label = analysis::lower_is_better(metric) ? e.with_mean < e.without_mean : e.with_mean > e.without_mean;
    md.examples.push_back(std::move(e));
  }
  return md;
}

struct EvalOptions {
  double test_fraction = 0.2;
  std::size_t repetitions = 10;
  std::size_t top_k = 3;
  std::uint64_t seed = 0;
  bool pooled = false;  // also fit one classifier over all architectures
  std::size_t min_examples = 20;
  trees::BoostConfig boost{};
};

struct RankedFeature {
  std::string name;
  double gain = 0.0;
};

struct GroupReport {
  std::string group;  // architecture name or "pooled"
  std::size_t n_examples = 0;
  std::size_t n_positive = 0;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;
  double topk_accuracy_mean = 0.0;
  double topk_accuracy_std = 0.0;
  std::vector<RankedFeature> ranking;  // from a fit on every example
  std::vector<double> accuracies;      // one per repetition
  std::vector<double> topk_accuracies;
};

struct MetaReport {
  Metric metric = Metric::rmse;
  std::size_t top_k = 3;
  std::vector<GroupReport> groups;
  std::optional<double> mean_over_architectures;  // unweighted mean of per-architecture accuracy
  std::vector<std::string> skipped;               // groups that could not be evaluated, with reason
};

/// Descending gain; equal gains ordered by name so the ranking does not
/// depend on the column order of the table.
inline std::vector<RankedFeature> rank_by_gain(const Vector& gains, const std::vector<std::string>& names) {
  std::vector<RankedFeature> r;
  for (std::size_t i = 0; i < gains.size(); ++i) r.push_back({names.at(i), gains[i]});
  std::sort(r.begin(), r.end(), [](const RankedFeature& a, const RankedFeature& b) {
    return a.gain != b.gain ? a.gain > b.gain : a.name < b.name;
  });
  return r;
}

struct Table {
  Matrix x;
  std::vector<int> y;
  std::vector<std::string> names;
};

inline Table to_table(std::span<const MetaExample* const> ex, bool with_model_code) {
  Table t;
  if (ex.empty()) return t;
  for (const auto& [name, _] : ex.front()->features.named()) t.names.push_back(name);
  std::map<std::string, double> codes;
  if (with_model_code) {
    t.names.push_back("model");
    for (const auto* e : ex) codes.emplace(e->model, 0.0);
    double c = 0.0;
    for (auto& [_, v] : codes) v = c++;
  }
  t.x = Matrix(ex.size(), t.names.size());
  for (std::size_t i = 0; i < ex.size(); ++i) {
    const auto f = ex[i]->features.named();
    for (std::size_t j = 0; j < f.size(); ++j) t.x(i, j) = f[j].second;
    if (with_model_code) t.x(i, f.size()) = codes.at(ex[i]->model);
    t.y.push_back(ex[i]->label ? 1 : 0);
  }
  return t;
}

namespace detail {

inline Table subset(const Table& t, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
  Table s;
  s.x = Matrix(rows.size(), cols.size());
  for (std::size_t c : cols) s.names.push_back(t.names[c]);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) s.x(i, j) = t.x(rows[i], cols[j]);
    s.y.push_back(t.y[rows[i]]);
  }
  return s;
}

inline double accuracy(const trees::BoostedModel& m, const Table& t) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < t.y.size(); ++i) ok += m.predict(t.x.row(i)) == (t.y[i] == 1);
  return static_cast<double>(ok) / static_cast<double>(t.y.size());
}

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0};
}

}  // namespace detail

/// Repeated seeded holdout for one group. Top-k features are chosen from the
/// training split of each repetition, so the restricted score never sees the
/// held-out rows.
inline GroupReport evaluate_group(const std::string& name, const Table& t, const EvalOptions& opt) {
  const std::size_t n = t.y.size();
  std::size_t pos = 0;
  for (int l : t.y) pos += static_cast<std::size_t>(l);
  if (n < opt.min_examples)
    throw std::invalid_argument("meta-dataset '" + name + "' has " + std::to_string(n) + " examples; need at least " +
                                std::to_string(opt.min_examples));
  if (pos == 0 || pos == n)
    throw std::invalid_argument("meta-dataset '" + name + "' is single-class (all labels " +
                                (pos ? std::string("true") : std::string("false")) + ")");
  if (!(opt.test_fraction > 0.0 && opt.test_fraction < 1.0))
    throw std::invalid_argument("test_fraction must lie in (0, 1)");
  GroupReport r{name, n, pos, 0, 0, 0, 0, {}, {}, {}};
  const std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(opt.test_fraction * static_cast<double>(n))));
  const std::vector<std::size_t> all_cols = iota_indices(t.names.size());
  const std::size_t k = std::min(opt.top_k, t.names.size());
  for (std::size_t rep = 0; rep < opt.repetitions; ++rep) {
    std::vector<std::size_t> order = iota_indices(n);
    CounterRng rng(derive_seed(derive_seed(opt.seed, "meta-split"), rep));
    shuffle(order, rng);
    const std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    const std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    const Table tr = detail::subset(t, train, all_cols), te = detail::subset(t, test, all_cols);
    const auto model = trees::fit_gbdt_classifier(tr.x, tr.y, opt.boost);
    r.accuracies.push_back(detail::accuracy(model, te));

    const auto ranked = rank_by_gain(model.importance, t.names);
    std::vector<std::size_t> top;
    for (std::size_t i = 0; i < k; ++i)
      top.push_back(static_cast<std::size_t>(std::find(t.names.begin(), t.names.end(), ranked[i].name) - t.names.begin()));
    const auto restricted = trees::fit_gbdt_classifier(detail::subset(t, train, top).x, tr.y, opt.boost);
    r.topk_accuracies.push_back(detail::accuracy(restricted, detail::subset(t, test, top)));
  }
  std::tie(r.accuracy_mean, r.accuracy_std) = detail::mean_std(r.accuracies);
  std::tie(r.topk_accuracy_mean, r.topk_accuracy_std) = detail::mean_std(r.topk_accuracies);
  r.ranking = rank_by_gain(trees::fit_gbdt_classifier(t.x, t.y, opt.boost).importance, t.names);
  return r;
}

/// One classifier per architecture (plus an optional pooled one). Groups too
/// small or single-class are reported in `skipped` rather than aborting the
/// others; a meta-dataset where no group can be evaluated is an error.
inline MetaReport train_and_evaluate(const MetaDataset& md, const EvalOptions& opt = {}) {
  MetaReport rep;
  rep.metric = md.metric;
  rep.top_k = opt.top_k;
  std::map<std::string, std::vector<const MetaExample*>> by_model;
  for (const auto& e : md.examples) by_model[e.model].push_back(&e);
  std::vector<double> per_arch;
  for (const auto& [model, ex] : by_model) {
    try {
      rep.groups.push_back(evaluate_group(model, to_table(ex, false), opt));
      per_arch.push_back(rep.groups.back().accuracy_mean);
    } catch (const std::invalid_argument& err) {
      rep.skipped.push_back(err.what());
    }
  }
  if (opt.pooled) {
    std::vector<const MetaExample*> all;
    for (const auto& e : md.examples) all.push_back(&e);
    try {
      rep.groups.push_back(evaluate_group("pooled", to_table(all, true), opt));
    } catch (const std::invalid_argument& err) {
      rep.skipped.push_back(err.what());
    }
  }
  if (rep.groups.empty()) {
    std::string why = "no meta-dataset group could be evaluated";
    for (const auto& s : rep.skipped) why += "; " + s;
    throw std::invalid_argument(why);
  }
  if (!per_arch.empty()) rep.mean_over_architectures = detail::mean_std(per_arch).first;
  return rep;
}

inline std::string accuracy_csv(const MetaReport& r) {
  std::ostringstream s;
  s << "group,n_examples,n_positive,accuracy_mean,accuracy_std,top" << r.top_k << "_accuracy_mean,top" << r.top_k
    << "_accuracy_std,top_features\n";
  for (const auto& g : r.groups) {
    s << g.group << ',' << g.n_examples << ',' << g.n_positive << ',' << g.accuracy_mean << ',' << g.accuracy_std
      << ',' << g.topk_accuracy_mean << ',' << g.topk_accuracy_std << ',';
    for (std::size_t i = 0; i < r.top_k && i < g.ranking.size(); ++i) s << (i ? ";" : "") << g.ranking[i].name;
    s << '\n';
  }
  return s.str();
}

inline std::string ranking_csv(const MetaReport& r) {
  std::ostringstream s;
  s << "group,rank,feature,display_name,gain\n";
  for (const auto& g : r.groups)
    for (std::size_t i = 0; i < g.ranking.size(); ++i)
      s << g.group << ',' << i + 1 << ',' << g.ranking[i].name << ",\""
        << metafeatures::display_name(g.ranking[i].name) << "\"," << g.ranking[i].gain << '\n';
  return s.str();
}

inline nlohmann::ordered_json to_json(const MetaReport& r) {
  nlohmann::ordered_json groups = nlohmann::ordered_json::array();
  for (const auto& g : r.groups) {
    nlohmann::ordered_json ranking = nlohmann::ordered_json::array();
    for (const auto& f : g.ranking)
      ranking.push_back({{"feature", f.name}, {"display_name", metafeatures::display_name(f.name)}, {"gain", f.gain}});
    groups.push_back({{"group", g.group},
                      {"n_examples", g.n_examples},
                      {"n_positive", g.n_positive},
                      {"accuracy_mean", g.accuracy_mean},
                      {"accuracy_std", g.accuracy_std},
                      {"topk_accuracy_mean", g.topk_accuracy_mean},
                      {"topk_accuracy_std", g.topk_accuracy_std},
                      {"accuracies", g.accuracies},
                      {"topk_accuracies", g.topk_accuracies},
                      {"ranking", ranking}});
  }
  nlohmann::ordered_json j{{"metric", analysis::to_string(r.metric)}, {"top_k", r.top_k}, {"groups", groups}};
  j["mean_over_architectures"] = r.mean_over_architectures ? nlohmann::ordered_json(*r.mean_over_architectures) : nullptr;
  j["skipped"] = r.skipped;
  return j;
}

}  // namespace adacap::metapredict
