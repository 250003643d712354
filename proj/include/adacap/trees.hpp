#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "adacap/linalg.hpp"
#include "adacap/rng.hpp"

namespace adacap::trees {

using linalg::Matrix;
using linalg::Vector;

inline constexpr int kLeaf = -1;

struct TreeNode {
  int feature = kLeaf;
  double threshold = 0.0;  // go left when x[feature] <= threshold
  double value = 0.0;      // leaf output
  double gain = 0.0;       // split gain (internal nodes)
  std::size_t samples = 0;
  int left = -1;
  int right = -1;

  bool is_leaf() const noexcept { return feature == kLeaf; }
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(std::span<const double> x) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
      const auto& n = nodes[i];
      i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
    }
    return nodes[i].value;
  }

  std::size_t depth() const { return depth_from(0); }
  std::size_t leaves() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
  }

 private:
  std::size_t depth_from(std::size_t i) const {
    if (nodes[i].is_leaf()) return 0;
    return 1 + std::max(depth_from(static_cast<std::size_t>(nodes[i].left)),
                        depth_from(static_cast<std::size_t>(nodes[i].right)));
  }
};

struct TreeConfig {
  std::size_t max_depth = 12;
  std::size_t min_leaf = 1;
  double lambda = 0.0;             // L2 on leaf values (second-order form)
  std::size_t max_features = 0;    // features tried per node; 0 = all
  std::uint64_t seed = 0;
};

namespace detail {

/// Second-order split search. With g = -y and h = 1 and lambda = 0, the gain
/// equals the reduction in squared error and leaves are means.
class Builder {
 public:
  Builder(const Matrix& x, const Vector& g, const Vector& h, const TreeConfig& cfg, Vector& importance)
      : x_(x), g_(g), h_(h), cfg_(cfg), importance_(importance), rng_(cfg.seed) {}

  Tree build(std::vector<std::size_t> rows) {
    Tree t;
    grow(t, rows, 0);
    return t;
  }

 private:
  double score(double g, double h) const { return g * g / (h + cfg_.lambda); }

  int grow(Tree& t, std::vector<std::size_t>& rows, std::size_t depth) {
    double gs = 0.0, hs = 0.0;
    for (std::size_t r : rows) {
      gs += g_[r];
      hs += h_[r];
    }
    const int id = static_cast<int>(t.nodes.size());
    t.nodes.push_back({});
    t.nodes[static_cast<std::size_t>(id)].samples = rows.size();
    t.nodes[static_cast<std::size_t>(id)].value = hs + cfg_.lambda > 0.0 ? -gs / (hs + cfg_.lambda) : 0.0;
    if (depth >= cfg_.max_depth || rows.size() < 2 * std::max<std::size_t>(1, cfg_.min_leaf)) return id;

    const double parent = score(gs, hs);
    const std::size_t k = x_.cols();
    std::vector<std::size_t> features = iota_indices(k);
    if (cfg_.max_features > 0 && cfg_.max_features < k) {
      shuffle(features, rng_);
      features.resize(cfg_.max_features);
      std::sort(features.begin(), features.end());
    }

    double best_gain = 0.0;
    int best_feature = kLeaf;
    double best_threshold = 0.0;
    const std::size_t min_leaf = std::max<std::size_t>(1, cfg_.min_leaf);
    std::vector<std::size_t> sorted = rows;
    for (std::size_t f : features) {
      std::sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) {
        const double va = x_(a, f), vb = x_(b, f);
        return va < vb || (va == vb && a < b);
      });
      double gl = 0.0, hl = 0.0;
      for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        gl += g_[sorted[i]];
        hl += h_[sorted[i]];
        const double v = x_(sorted[i], f);
        const double next = x_(sorted[i + 1], f);
        if (v == next) continue;
        const std::size_t nl = i + 1;
        if (nl < min_leaf || sorted.size() - nl < min_leaf) continue;
        const double gain = score(gl, hl) + score(gs - gl, hs - hl) - parent;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_threshold = 0.5 * (v + next);
        }
      }
    }
    if (best_feature == kLeaf || !(best_gain > 1e-12 * (1.0 + std::abs(parent)))) return id;

    std::vector<std::size_t> left, right;
    for (std::size_t r : rows) (x_(r, static_cast<std::size_t>(best_feature)) <= best_threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    importance_[static_cast<std::size_t>(best_feature)] += best_gain;
    const int l = grow(t, left, depth + 1);
    const int r = grow(t, right, depth + 1);
    TreeNode& node = t.nodes[static_cast<std::size_t>(id)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.gain = best_gain;
    node.left = l;
    node.right = r;
    return id;
  }

  const Matrix& x_;
  const Vector& g_;
  const Vector& h_;
  const TreeConfig& cfg_;
  Vector& importance_;
  CounterRng rng_;
};

inline void check_xy(const Matrix& x, std::size_t n_targets, const char* op) {
  if (x.rows() == 0 || x.cols() == 0) throw std::invalid_argument(std::string(op) + ": empty feature matrix");
  if (x.rows() != n_targets) {
    throw std::invalid_argument(std::string(op) + ": " + std::to_string(x.rows()) + " rows vs " +
                                std::to_string(n_targets) + " targets");
  }
  if (!x.all_finite()) throw std::invalid_argument(std::string(op) + ": non-finite features");
}

}  // namespace detail

/// Generic second-order tree on gradients g and hessians h over `rows`.
inline Tree fit_tree(const Matrix& x, const Vector& g, const Vector& h, std::vector<std::size_t> rows,
                     const TreeConfig& cfg, Vector& importance) {
  if (importance.size() != x.cols()) importance.assign(x.cols(), 0.0);
  detail::Builder b(x, g, h, cfg, importance);
  return b.build(std::move(rows));
}

struct CartModel {
  Tree tree;
  Vector importance;
  double predict(std::span<const double> x) const { return tree.predict(x); }
};

/// Variance-reduction regression tree; gains are reductions in squared error.
inline CartModel fit_cart(const Matrix& x, const Vector& y, std::size_t max_depth = 12, std::size_t min_leaf = 1) {
  detail::check_xy(x, y.size(), "fit_cart");
  Vector g(y.size()), h(y.size(), 1.0);
  for (std::size_t i = 0; i < y.size(); ++i) g[i] = -y[i];
  TreeConfig cfg;
  cfg.max_depth = max_depth;
  cfg.min_leaf = min_leaf;
  CartModel m;
  m.importance.assign(x.cols(), 0.0);
  m.tree = fit_tree(x, g, h, iota_indices(y.size()), cfg, m.importance);
  return m;
}

// ---------------------------------------------------------------------------
// Random forest

struct ForestConfig {
  std::size_t n_trees = 100;
  std::size_t max_depth = 12;
  std::size_t min_leaf = 1;
  bool bootstrap = true;
  std::size_t max_features = 0;  // 0 = ceil(sqrt(k))
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct ForestModel {
  std::vector<Tree> trees;
  Vector importance;
  Vector oob_prediction;              // NaN where a row was never out of bag
  std::vector<std::size_t> oob_count;

  double predict(std::span<const double> x) const {
    if (trees.empty()) throw std::logic_error("ForestModel::predict: no trees");
    double s = 0.0;
    for (const auto& t : trees) s += t.predict(x);
    return s / static_cast<double>(trees.size());
  }

  /// Mean squared OOB error over rows with at least one OOB tree.
  double oob_mse(const Vector& y) const {
    double s = 0.0;
    std::size_t c = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (oob_count[i] == 0) continue;
      const double e = y[i] - oob_prediction[i];
      s += e * e;
      ++c;
    }
    if (c == 0) throw std::logic_error("ForestModel::oob_mse: no out-of-bag rows");
    return s / static_cast<double>(c);
  }

  double oob_r2(const Vector& y) const {
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean);
    var /= static_cast<double>(y.size());
    return var > 0.0 ? 1.0 - oob_mse(y) / var : 0.0;
  }
};

inline ForestModel fit_rf(const Matrix& x, const Vector& y, const ForestConfig& cfg = {}) {
  detail::check_xy(x, y.size(), "fit_rf");
  if (cfg.n_trees < 1) throw std::invalid_argument("fit_rf: need at least one tree");
  const std::size_t n = y.size();
  const std::size_t k = x.cols();
  TreeConfig tc;
  tc.max_depth = cfg.max_depth;
  tc.min_leaf = cfg.min_leaf;
  tc.max_features = cfg.max_features ? cfg.max_features
                                     : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(k))));
  Vector g(n), h(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) g[i] = -y[i];

  std::vector<Tree> trees(cfg.n_trees);
  std::vector<Vector> importances(cfg.n_trees, Vector(k, 0.0));
  std::vector<std::vector<bool>> in_bag(cfg.n_trees);
  auto work = [&](std::size_t t) {
    CounterRng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(t)));
    std::vector<std::size_t> rows;
    in_bag[t].assign(n, !cfg.bootstrap);
    if (cfg.bootstrap) {
      rows.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        rows[i] = static_cast<std::size_t>(rng.below(n));
        in_bag[t][rows[i]] = true;
      }
    } else {
      rows = iota_indices(n);
    }
    TreeConfig local = tc;
    local.seed = rng.next_u64();
    trees[t] = fit_tree(x, g, h, std::move(rows), local, importances[t]);
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(cfg.threads, cfg.n_trees));
  if (threads == 1) {
    for (std::size_t t = 0; t < cfg.n_trees; ++t) work(t);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t t = w; t < cfg.n_trees; t += threads) work(t);
      });
    for (auto& th : pool) th.join();
  }

  ForestModel m;
  m.trees = std::move(trees);
  m.importance.assign(k, 0.0);
  for (const auto& imp : importances)
    for (std::size_t j = 0; j < k; ++j) m.importance[j] += imp[j];
  m.oob_prediction.assign(n, 0.0);
  m.oob_count.assign(n, 0);
  for (std::size_t t = 0; t < m.trees.size(); ++t)
    for (std::size_t i = 0; i < n; ++i)
      if (!in_bag[t][i]) {
        m.oob_prediction[i] += m.trees[t].predict(x.row(i));
        ++m.oob_count[i];
      }
  for (std::size_t i = 0; i < n; ++i)
    m.oob_prediction[i] = m.oob_count[i] ? m.oob_prediction[i] / static_cast<double>(m.oob_count[i])
                                         : std::numeric_limits<double>::quiet_NaN();
  return m;
}

// ---------------------------------------------------------------------------
// Gradient-boosted binary classifier

struct BoostConfig {
  std::size_t n_rounds = 200;
  double learning_rate = 0.1;
  std::size_t max_depth = 3;
  double lambda = 1.0;
  std::size_t min_leaf = 1;
};

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct BoostedModel {
  double base = 0.0;  // log-odds of the training base rate
  double learning_rate = 0.1;
  std::vector<Tree> trees;
  Vector importance;
  Vector train_log_loss;  // after each round

  double margin(std::span<const double> x) const {
    double f = base;
    for (const auto& t : trees) f += learning_rate * t.predict(x);
    return f;
  }
  double predict_proba(std::span<const double> x) const { return sigmoid(margin(x)); }
  bool predict(std::span<const double> x) const { return margin(x) > 0.0; }
};

inline double log_loss(const std::vector<int>& labels, const Vector& margins) {
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    // log(1 + e^-m) for y = 1, log(1 + e^m) for y = 0, computed stably.
    const double m = labels[i] ? margins[i] : -margins[i];
    s += m > 0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m));
  }
  return s / static_cast<double>(labels.size());
}

inline BoostedModel fit_gbdt_classifier(const Matrix& x, const std::vector<int>& labels, const BoostConfig& cfg = {}) {
  detail::check_xy(x, labels.size(), "fit_gbdt_classifier");
  const std::size_t n = labels.size();
  std::size_t pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw std::invalid_argument("fit_gbdt_classifier: labels must be 0 or 1");
    pos += static_cast<std::size_t>(l);
  }
  const double rate = std::clamp(static_cast<double>(pos) / static_cast<double>(n), 1e-6, 1.0 - 1e-6);
  BoostedModel m;
  m.base = std::log(rate / (1.0 - rate));
  m.learning_rate = cfg.learning_rate;
  m.importance.assign(x.cols(), 0.0);
  Vector f(n, m.base), g(n), h(n);
  TreeConfig tc;
  tc.max_depth = cfg.max_depth;
  tc.min_leaf = cfg.min_leaf;
  tc.lambda = cfg.lambda;
  for (std::size_t round = 0; round < cfg.n_rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(f[i]);
      g[i] = p - labels[i];
      h[i] = std::max(p * (1.0 - p), 1e-16);
    }
    Tree t = fit_tree(x, g, h, iota_indices(n), tc, m.importance);
    for (std::size_t i = 0; i < n; ++i) f[i] += cfg.learning_rate * t.predict(x.row(i));
    m.trees.push_back(std::move(t));
    m.train_log_loss.push_back(log_loss(labels, f));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Importance and serialization

/// Feature indices ordered by total gain, descending; ties by index.
inline std::vector<std::size_t> rank_features(const Vector& gains) {
  std::vector<std::size_t> order = iota_indices(gains.size());
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return gains[a] > gains[b]; });
  return order;
}

struct RankedFeature {
  std::string name;
  std::size_t index = 0;
  double gain = 0.0;
};

inline std::vector<RankedFeature> feature_importance(const Vector& gains, const std::vector<std::string>& names = {}) {
  std::vector<RankedFeature> out;
  for (std::size_t i : rank_features(gains))
    out.push_back({i < names.size() ? names[i] : "f" + std::to_string(i), i, gains[i]});
  return out;
}

inline nlohmann::ordered_json to_json(const Tree& t, std::size_t i = 0) {
  const TreeNode& n = t.nodes.at(i);
  nlohmann::ordered_json j;
  if (n.is_leaf()) {
    j["leaf"] = n.value;
    j["samples"] = n.samples;
    return j;
  }
  j["feature"] = n.feature;
  j["threshold"] = n.threshold;
  j["gain"] = n.gain;
  j["samples"] = n.samples;
  j["left"] = to_json(t, static_cast<std::size_t>(n.left));
  j["right"] = to_json(t, static_cast<std::size_t>(n.right));
  return j;
}

namespace detail {
inline int tree_from_json(const nlohmann::json& j, Tree& t) {
  const int id = static_cast<int>(t.nodes.size());
  t.nodes.push_back({});
  if (j.contains("leaf")) {
    t.nodes.back().value = j.at("leaf").get<double>();
    t.nodes.back().samples = j.value("samples", std::size_t{0});
    return id;
  }
  TreeNode n;
  n.feature = j.at("feature").get<int>();
  n.threshold = j.at("threshold").get<double>();
  n.gain = j.value("gain", 0.0);
  n.samples = j.value("samples", std::size_t{0});
  n.left = tree_from_json(j.at("left"), t);
  n.right = tree_from_json(j.at("right"), t);
  t.nodes[static_cast<std::size_t>(id)] = n;
  return id;
}
}  // namespace detail

inline Tree tree_from_json(const nlohmann::json& j) {
  Tree t;
  detail::tree_from_json(j, t);
  return t;
}

inline nlohmann::ordered_json to_json(const BoostedModel& m) {
  nlohmann::ordered_json j;
  j["kind"] = "gbdt_classifier";
  j["base"] = m.base;
  j["learning_rate"] = m.learning_rate;
  j["importance"] = m.importance;
  j["trees"] = nlohmann::ordered_json::array();
  for (const auto& t : m.trees) j["trees"].push_back(to_json(t));
  return j;
}

inline BoostedModel boosted_from_json(const nlohmann::json& j) {
  BoostedModel m;
  m.base = j.at("base").get<double>();
  m.learning_rate = j.at("learning_rate").get<double>();
  m.importance = j.at("importance").get<Vector>();
  for (const auto& t : j.at("trees")) m.trees.push_back(tree_from_json(t));
  return m;
}

inline nlohmann::ordered_json to_json(const ForestModel& m) {
  nlohmann::ordered_json j;
  j["kind"] = "random_forest";
  j["importance"] = m.importance;
  j["trees"] = nlohmann::ordered_json::array();
  for (const auto& t : m.trees) j["trees"].push_back(to_json(t));
  return j;
}

}  // namespace adacap::trees
