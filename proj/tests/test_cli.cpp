#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "adacap/cli.hpp"

using namespace adacap;
using namespace adacap::cli;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("adacap-cli-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path write_config(const fs::path& dir, json extra = json::object()) {
  json j = json::parse(R"({
    "seed": 11,
    "folds": 3,
    "datasets": [
      {"id": "lin",  "synthetic": {"kind": "linear", "n": 45, "k": 3, "noise": 0.2, "seed": 1}},
      {"id": "skw",  "synthetic": {"kind": "skewed", "n": 45, "k": 3, "noise": 0.5, "seed": 2}},
      {"id": "wide", "synthetic": {"kind": "linear", "n": 45, "k": 6, "noise": 1.0, "seed": 3}}
    ],
    "models": ["MLP"],
    "train": {"epochs": 3, "batch_size": 16}
  })");
  j["out"] = (dir / "out").string();
  j.update(extra);
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

experiment::RunRecord record(const std::string& ds, const std::string& head, std::size_t fold, std::size_t n_train,
                             double rmse, double mae, double mape, double r2) {
  experiment::RunRecord r;
  r.dataset = ds;
  r.model = "MLP";
  r.head = head;
  if (head == "adacap") r.p = 10;
  r.fold = fold;
  r.n_train = n_train;
  r.n_test = n_train / 9;
  r.metrics = data::Metrics{rmse, mae, mape, 0, r2};
  r.config_hash = "feedfacefeedface";
  return r;
}

void write_records(const fs::path& p, const std::vector<experiment::RunRecord>& recs) {
  std::ofstream out(p);
  for (const auto& r : recs) out << experiment::to_json(r).dump() << '\n';
}

}  // namespace

TEST(Cli, PsweepEmitsWinCountTable) {
  const fs::path dir = scratch("psweep");
  CommonOptions o;
  o.config = write_config(dir).string();
  std::ostringstream log;
  ASSERT_EQ(guarded(log, [&] { return bench(o, Mode::psweep, log); }), kOk) << log.str();

  const auto t = json::parse(slurp(dir / "out" / "psweep_wins.json"));
  std::vector<std::string> ps;
  for (const auto& r : t["rows"]) ps.push_back(r["P"].get<std::string>());
  EXPECT_EQ(ps, (std::vector<std::string>{"1", "2", "5", "10", "20"}));

  const std::string csv = slurp(dir / "out" / "psweep_wins.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "P,RMSE,MAE,MAPE,R2,Total,%");
  // 3 datasets x 3 folds x 4 metrics; a cell with a tie awards no win.
  std::size_t total = 0;
  for (const auto& r : t["rows"]) total += r["Total"].get<std::size_t>();
  EXPECT_LE(total, 36u);
  EXPECT_GT(total, 0u);
  EXPECT_EQ(experiment::read_records(dir / "out" / "psweep.jsonl").size(), 45u);
}

TEST(Cli, AnalyzeReproducesHandComputedWilcoxon) {
  const fs::path dir = scratch("analyze");
  std::vector<experiment::RunRecord> recs;
  // Small regime, six folds. RMSE and R2 always favour adacap (p = 2/64).
  // MAE always favours linear. MAPE differences are +1,-2,+3,-4,+5,-6:
  // W+ = 9 and 27 of the 64 sign patterns have W+ <= 9, so p = 54/64.
  for (std::size_t f = 0; f < 6; ++f) {
    const double s = f % 2 == 0 ? 1.0 : -1.0;
    recs.push_back(record("small", "linear", f, 100, 2.0 + 0.1 * f, 1.0, 10.0, 0.5));
    recs.push_back(record("small", "adacap", f, 100, 1.0, 1.5 + 0.1 * f, 10.0 + s * (f + 1), 0.6 + 0.01 * f));
  }
  // Mid regime with three folds is below the minimum sample and must be inconclusive.
  for (std::size_t f = 0; f < 3; ++f) {
    recs.push_back(record("mid", "linear", f, 900, 2.0, 1.0, 10.0, 0.5));
    recs.push_back(record("mid", "adacap", f, 900, 1.0 + 0.1 * f, 0.5, 5.0, 0.9));
  }
  write_records(dir / "results.jsonl", recs);

  AnalyzeOptions a;
  a.results = dir / "results.jsonl";
  a.out = dir / "report";
  std::ostringstream log;
  ASSERT_EQ(guarded(log, [&] { return analyze(a, log); }), kOk) << log.str();

  const auto j = json::parse(slurp(a.out / "wilcoxon.json"));
  std::map<std::string, std::pair<std::string, double>> got;
  for (const auto& r : j["outcomes"])
    got[r["category"].get<std::string>() + "/" + r["metric"].get<std::string>()] = {r["outcome"], r["p_value"]};
  EXPECT_EQ(got["small/rmse"].first, "significantly_better");
  EXPECT_NEAR(got["small/rmse"].second, 2.0 / 64.0, 1e-12);
  EXPECT_EQ(got["small/r2"].first, "significantly_better");
  EXPECT_EQ(got["small/mae"].first, "significantly_worse");
  EXPECT_EQ(got["small/mape"].first, "no_significant_difference");
  EXPECT_NEAR(got["small/mape"].second, 54.0 / 64.0, 1e-12);
  EXPECT_EQ(got["mid/rmse"].first, "inconclusive");

  const std::string plot = slurp(a.out / "regime_plot.csv");
  EXPECT_NE(plot.find("small,MLP,rmse,significantly_better,0.03125,6"), std::string::npos) << plot;
}

TEST(Cli, AnalyzeAddsWinCountsWhenSweepPresent) {
  const fs::path dir = scratch("analyze-sweep");
  std::vector<experiment::RunRecord> bench_recs, sweep;
  for (std::size_t f = 0; f < 5; ++f) {
    bench_recs.push_back(record("d", "linear", f, 50, 2.0, 1.0, 1.0, 0.5));
    bench_recs.push_back(record("d", "adacap", f, 50, 1.0, 1.0, 1.0, 0.5));
    for (std::size_t p : {1u, 5u}) {
      auto r = record("d", "adacap", f, 50, p == 5 ? 1.0 : 2.0, p == 5 ? 1.0 : 2.0, p == 5 ? 1.0 : 2.0, 0.5);
      r.p = p;
      sweep.push_back(r);
    }
  }
  write_records(dir / "results.jsonl", bench_recs);
  write_records(dir / "psweep.jsonl", sweep);
  AnalyzeOptions a{dir / "results.jsonl", dir};
  a.psweep = dir / "psweep.jsonl";
  std::ostringstream log;
  ASSERT_EQ(guarded(log, [&] { return analyze(a, log); }), kOk) << log.str();
  // P=5 wins RMSE, MAE and MAPE on all five folds; R2 ties everywhere.
  EXPECT_EQ(slurp(dir / "psweep_wins.csv"), "P,RMSE,MAE,MAPE,R2,Total,%\n1,0,0,0,0,0,0.00\n5,5,5,5,0,15,75.00\n");
}

TEST(Cli, ExitCodesFollowFailureCategory) {
  const fs::path dir = scratch("codes");
  std::ostringstream log;

  CommonOptions bad;
  bad.config = write_config(dir, {{"folds", "ten"}}).string();
  EXPECT_EQ(guarded(log, [&] { return bench(bad, Mode::bench, log); }), kUsage);
  EXPECT_NE(log.str().find("folds"), std::string::npos);

  CommonOptions missing;
  missing.config = write_config(dir, {{"datasets", json::array({{{"id", "x"}, {"path", "nope.csv"}, {"target", "y"}}})}}).string();
  EXPECT_EQ(guarded(log, [&] { return bench(missing, Mode::bench, log); }), kDataError);

  AnalyzeOptions none{dir / "absent.jsonl", dir / "r"};
  EXPECT_EQ(guarded(log, [&] { return analyze(none, log); }), kAnalysisInput);

  auto a = record("d", "linear", 0, 50, 1, 1, 1, 1);
  auto b = record("d", "adacap", 0, 50, 1, 1, 1, 1);
  b.config_hash = "0000000000000000";
  write_records(dir / "mixed.jsonl", {a, b});
  AnalyzeOptions mixed{dir / "mixed.jsonl", dir / "r"};
  EXPECT_EQ(guarded(log, [&] { return analyze(mixed, log); }), kConflict);
}

TEST(Cli, TrainWritesRecordAndLog) {
  const fs::path dir = scratch("train");
  TrainOptions t;
  t.common.config = write_config(dir).string();
  t.dataset = "skw";
  t.fold = 2;
  std::ostringstream out, log;
  ASSERT_EQ(guarded(log, [&] { return train_cmd(t, out, log); }), kOk) << log.str();
  const auto r = experiment::record_from_json(json::parse(out.str()));
  EXPECT_EQ(r.head, "adacap");
  EXPECT_EQ(r.fold, 2u);
  EXPECT_TRUE(fs::exists(dir / "out" / "train_skw_MLP_adacap_fold2.jsonl"));
  t.dataset = "unknown";
  EXPECT_EQ(guarded(log, [&] { return train_cmd(t, out, log); }), kUsage);
}

TEST(Cli, MetafeaturesKeyedByDataset) {
  const fs::path dir = scratch("mf");
  CommonOptions o;
  o.config = write_config(dir).string();
  std::ostringstream log;
  ASSERT_EQ(guarded(log, [&] { return metafeatures_cmd(o, log); }), kOk) << log.str();
  const auto m = read_metafeatures(dir / "out" / "metafeatures.json");
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m.at("wide").n_features, 6.0);
}
