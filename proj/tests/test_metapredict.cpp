#include <gtest/gtest.h>

#include "adacap/metapredict.hpp"

using namespace adacap;
using namespace adacap::metapredict;

namespace {

MetaFeatureVector random_features(CounterRng& rng) {
  std::map<std::string, double> m;
  for (const auto& [name, _] : MetaFeatureVector{}.named()) m[name] = rng.normal();
  m["n_instances"] = std::round(std::exp(rng.uniform(std::log(50.0), std::log(50000.0))));
  return MetaFeatureVector::from_named(m);
}

Observation run(const std::string& ds, const std::string& model, const std::string& variant, std::size_t fold,
                double rmse) {
  Observation o{ds, model, variant, fold, 100, {}};
  o.metrics.rmse = rmse;
  return o;
}

// Meta-examples whose label is a function of the features, realized through
// per-fold records so build_meta_dataset has to recover it.
struct Planted {
  std::vector<Observation> obs;
  std::map<std::string, MetaFeatureVector> features;
};

Planted planted(std::size_t n, std::uint64_t seed, bool random_labels) {
  CounterRng rng(seed);
  Planted p;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string ds = "d" + std::to_string(i);
    p.features[ds] = random_features(rng);
    const bool improves = random_labels ? rng.uniform() < 0.5 : p.features[ds].n_instances < 500;
    for (std::size_t f = 0; f < 3; ++f) {
      const double base = 1.0 + rng.uniform();
      p.obs.push_back(run(ds, "MLP", "linear", f, base));
      p.obs.push_back(run(ds, "MLP", "adacap", f, base + (improves ? -0.1 : 0.1)));
    }
  }
  return p;
}

}  // namespace

TEST(MetaDataset, LabelsFollowFoldMeansStrictly) {
  std::map<std::string, MetaFeatureVector> f{{"a", {}}, {"b", {}}, {"c", {}}};
  std::vector<Observation> o{run("a", "MLP", "adacap", 0, 1.0), run("a", "MLP", "linear", 0, 2.0),
                             run("a", "MLP", "adacap", 1, 1.0), run("a", "MLP", "linear", 1, 2.0),
                             run("b", "MLP", "adacap", 0, 2.0), run("b", "MLP", "linear", 0, 1.0),
                             run("b", "MLP", "adacap", 1, 1.0), run("b", "MLP", "linear", 1, 2.0),
                             run("c", "MLP", "adacap", 0, 1.0)};
  const auto md = build_meta_dataset(o, f, Metric::rmse);
  ASSERT_EQ(md.examples.size(), 2u);
  EXPECT_TRUE(md.examples[0].label);   // better on every fold
  EXPECT_FALSE(md.examples[1].label);  // equal means
  EXPECT_EQ(md.unpaired, 1u);
}

TEST(MetaDataset, MissingFeaturesAndMisalignedFoldsAreCounted) {
  std::map<std::string, MetaFeatureVector> f{{"a", {}}};
  std::vector<Observation> o{run("a", "MLP", "adacap", 0, 1.0), run("a", "MLP", "linear", 1, 2.0),
                             run("z", "MLP", "adacap", 0, 1.0), run("z", "MLP", "linear", 0, 2.0)};
  const auto md = build_meta_dataset(o, f, Metric::rmse);
  EXPECT_TRUE(md.examples.empty());
  EXPECT_EQ(md.unpaired, 1u);
  EXPECT_EQ(md.missing_features, 1u);
}

TEST(MetaDataset, PlantedRuleReproducesLabels) {
  const auto p = planted(50, 3, false);
  const auto md = build_meta_dataset(p.obs, p.features, Metric::rmse);
  ASSERT_EQ(md.examples.size(), 50u);
  for (const auto& e : md.examples) EXPECT_EQ(e.label, e.features.n_instances < 500) << e.dataset;
}

TEST(Evaluate, PlantedRuleIsLearnedAndRankedFirst) {
  const auto p = planted(200, 1, false);
  const auto rep = train_and_evaluate(build_meta_dataset(p.obs, p.features, Metric::rmse));
  ASSERT_EQ(rep.groups.size(), 1u);
  const auto& g = rep.groups[0];
  EXPECT_GT(g.accuracy_mean, 0.9);
  EXPECT_EQ(g.ranking.front().name, "n_instances");
  EXPECT_LT(g.accuracy_mean - g.topk_accuracy_mean, 0.05);
  EXPECT_EQ(g.accuracies.size(), 10u);
}

TEST(Evaluate, RandomLabelsStayNearChance) {
  const auto p = planted(200, 2, true);
  const auto rep = train_and_evaluate(build_meta_dataset(p.obs, p.features, Metric::rmse));
  EXPECT_GE(rep.groups[0].accuracy_mean, 0.35);
  EXPECT_LE(rep.groups[0].accuracy_mean, 0.65);
}

TEST(Evaluate, SingleClassAndTinySetsRejected) {
  auto p = planted(30, 4, false);
  for (auto& [_, f] : p.features) f.n_instances = 100;  // every label true
  for (auto& o : p.obs)
    if (o.variant == "adacap") o.metrics.rmse = 0.0;
  EXPECT_THROW(train_and_evaluate(build_meta_dataset(p.obs, p.features, Metric::rmse)), std::invalid_argument);
  const auto small = planted(10, 5, true);
  EXPECT_THROW(train_and_evaluate(build_meta_dataset(small.obs, small.features, Metric::rmse)), std::invalid_argument);
}

TEST(Evaluate, DeterministicAndPooledModeReported) {
  auto p = planted(60, 6, false);
  const auto q = planted(60, 7, false);
  for (auto o : q.obs) {
    o.model = "ResNet";
    p.obs.push_back(o);
  }
  for (const auto& [ds, f] : q.features) p.features.emplace(ds, f);  // same ids: keep p's vectors
  EvalOptions opt;
  opt.pooled = true;
  opt.repetitions = 3;
  opt.boost.n_rounds = 30;
  const auto md = build_meta_dataset(p.obs, p.features, Metric::rmse);
  const auto a = train_and_evaluate(md, opt), b = train_and_evaluate(md, opt);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  ASSERT_EQ(a.groups.size(), 3u);
  EXPECT_EQ(a.groups[2].group, "pooled");
  EXPECT_EQ(a.groups[2].ranking.size(), a.groups[0].ranking.size() + 1);
  EXPECT_TRUE(a.mean_over_architectures.has_value());
  EXPECT_NE(accuracy_csv(a).find("top3_accuracy_mean"), std::string::npos);
  EXPECT_NE(ranking_csv(a).find("Number of Instances"), std::string::npos);
}

TEST(Ranking, TiesBrokenByNameNotColumnOrder) {
  const auto a = rank_by_gain({1.0, 2.0, 1.0}, {"zeta", "mid", "alpha"});
  const auto b = rank_by_gain({1.0, 1.0, 2.0}, {"alpha", "zeta", "mid"});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a[i].name, b[i].name);
  EXPECT_EQ(a[1].name, "alpha");
}
