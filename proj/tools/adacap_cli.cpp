#include <iostream>

#include "CLI11.hpp"

#include "adacap/cli.hpp"
#include "adacap/fetch.hpp"
#include "adacap/version.hpp"

using namespace adacap;

namespace {

void add_common(CLI::App* sub, cli::CommonOptions& o, bool needs_config = true) {
  auto* cfg = sub->add_option("--config", o.config, "experiment config (JSON)");
  if (needs_config) cfg->required();
  sub->add_option("--out", o.out, "output directory (overrides config 'out')");
  sub->add_option("--seed", o.seed, "global seed (overrides config 'seed')");
  sub->add_option("--workers", o.workers, "worker threads (default: hardware threads)");
  sub->add_option("--metric", o.metric, "rmse | mae | mape | r2");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Closed-form ridge heads with permutation contrast for tabular regression"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  cli::TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "train and evaluate one (dataset, model, head, fold) run");
  add_common(train_cmd, train.common);
  train_cmd->add_option("--dataset", train.dataset, "dataset id from the config")->required();
  train_cmd->add_option("--model", train.model, "architecture name, e.g. MLP or ResNet-GLU");
  train_cmd->add_option("--head", train.head, "linear | adacap");
  train_cmd->add_option("--fold", train.fold, "fold index");
  train_cmd->add_option("--p", train.p, "permutation count (adacap)");

  cli::CommonOptions bench;
  auto* bench_cmd = app.add_subcommand("bench", "run the dataset x model x head x fold grid (resumable)");
  add_common(bench_cmd, bench);
  bench_cmd->add_option("--max-jobs", bench.max_jobs, "stop after this many new runs");

  cli::CommonOptions sweep;
  auto* sweep_cmd = app.add_subcommand("psweep", "permutation-count sweep with a win-count table");
  add_common(sweep_cmd, sweep);
  sweep_cmd->add_option("--max-jobs", sweep.max_jobs, "stop after this many new runs");

  cli::CommonOptions mf;
  auto* mf_cmd = app.add_subcommand("metafeatures", "dataset characteristics for every configured dataset");
  add_common(mf_cmd, mf);

  cli::MetaOptions meta;
  std::string meta_metric = "rmse";
  std::string meta_dir = "results";
  auto* meta_cmd = app.add_subcommand("metapredict", "predict from meta-features whether the ridge head helps");
  meta_cmd->add_option("--out", meta_dir, "directory holding results.jsonl and metafeatures.json; reports go here");
  meta_cmd->add_option("--results", meta.results, "results file (default <out>/results.jsonl)");
  meta_cmd->add_option("--metafeatures", meta.features, "meta-feature file (default <out>/metafeatures.json)");
  meta_cmd->add_option("--metric", meta_metric, "rmse | mae | mape | r2");
  meta_cmd->add_option("--seed", meta.seed, "split seed");
  meta_cmd->add_flag("--pooled", meta.pooled, "also fit one classifier over all architectures");

  cli::AnalyzeOptions an;
  std::string an_dir = "results";
  bool per_dataset = false;
  auto* an_cmd = app.add_subcommand("analyze", "Wilcoxon outcomes per size regime");
  an_cmd->add_option("--out", an_dir, "directory holding results.jsonl; reports go here");
  an_cmd->add_option("--results", an.results, "results file (default <out>/results.jsonl)");
  an_cmd->add_flag("--per-dataset-mean", per_dataset, "average folds before testing");

  fetch::FetchOptions fo;
  std::string sha;
  auto* fetch_cmd = app.add_subcommand("fetch", "download a dataset into the local cache");
  fetch_cmd->add_option("--url", fo.url, "http(s) URL")->required();
  fetch_cmd->add_option("--sha256", sha, "expected SHA-256 (hex)");
  fetch_cmd->add_option("--dest", fo.cache_dir, "cache directory");
  fetch_cmd->add_option("--name", fo.filename, "file name (default: last URL segment)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kOk : cli::kUsage;
  }

  std::ostream& log = std::cerr;
  if (*train_cmd) return cli::guarded(log, [&] { return cli::train_cmd(train, std::cout, log); });
  if (*bench_cmd) return cli::guarded(log, [&] { return cli::bench(bench, experiment::Mode::bench, log); });
  if (*sweep_cmd) return cli::guarded(log, [&] { return cli::bench(sweep, experiment::Mode::psweep, log); });
  if (*mf_cmd) return cli::guarded(log, [&] { return cli::metafeatures_cmd(mf, log); });
  if (*meta_cmd)
    return cli::guarded(log, [&] {
      meta.out = meta_dir;
      if (meta.results.empty()) meta.results = meta.out / "results.jsonl";
      if (meta.features.empty()) meta.features = meta.out / "metafeatures.json";
      meta.metric = analysis::parse_metric(meta_metric);
      return cli::metapredict_cmd(meta, log);
    });
  if (*an_cmd)
    return cli::guarded(log, [&] {
      an.out = an_dir;
      if (an.results.empty()) an.results = an.out / "results.jsonl";
      an.psweep = an.out / "psweep.jsonl";
      an.mode = per_dataset ? analysis::PairingMode::dataset_mean : analysis::PairingMode::fold;
      return cli::analyze(an, log);
    });
  if (*fetch_cmd) {
    try {
      if (!sha.empty()) fo.sha256 = sha;
      const auto r = fetch::fetch(fo);
      std::cout << r.path.string() << ' ' << r.sha256 << (r.from_cache ? " (cached)" : "") << '\n';
      return cli::kOk;
    } catch (const fetch::FetchError& e) {
      log << "error[fetch]: " << e.what() << '\n';
      return e.kind == fetch::FetchError::Kind::bad_url ? cli::kUsage : cli::kNetwork;
    } catch (const std::exception& e) {
      log << "error: " << e.what() << '\n';
      return cli::kFailure;
    }
  }
  return cli::kUsage;
}
