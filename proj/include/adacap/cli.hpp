#pragma once

// Subcommand bodies behind tools/adacap_cli.cpp, kept here so tests can
// drive them without spawning processes.

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "adacap/analysis.hpp"
#include "adacap/experiment.hpp"
#include "adacap/metafeatures.hpp"
#include "adacap/metapredict.hpp"

namespace adacap::cli {

namespace fs = std::filesystem;
using experiment::ExperimentConfig;
using experiment::Mode;

/// Process exit codes, one per failure category.
enum Exit : int {
  kOk = 0,
  kFailure = 1,        // unexpected internal error
  kUsage = 2,          // bad flags or malformed config
  kDataError = 3,      // datasets unreadable or no usable data
  kConflict = 4,       // results file written under another config
  kNetwork = 5,        // fetch failed or checksum mismatch
  kAnalysisInput = 6,  // results cannot be analyzed as asked
};

struct CommonOptions {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::size_t> max_jobs;
  std::optional<std::string> metric;
};

inline ExperimentConfig resolve(const CommonOptions& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : experiment::load_config(o.config);
  if (o.out) c.out = *o.out;
  if (o.seed) c.seed = *o.seed;
  if (o.workers) {
    if (*o.workers == 0) throw experiment::ConfigError("--workers", "must be >= 1");
    c.workers = *o.workers;
  }
  if (o.max_jobs) c.max_jobs = *o.max_jobs;
  if (o.metric) c.metric = experiment::detail::wrap("--metric", [&] { return analysis::parse_metric(*o.metric); });
  return c;
}

inline void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << content;
}

/// Runs `body` and maps exceptions onto exit categories with a one-line diagnostic.
template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const experiment::ConfigError& e) {
    err << "error[config]: " << e.what() << '\n';
    return kUsage;
  } catch (const experiment::ResultsConflict& e) {
    err << "error[conflict]: " << e.what() << '\n';
    return kConflict;
  } catch (const data::DataError& e) {
    err << "error[data]: " << e.what() << '\n';
    return kDataError;
  } catch (const std::invalid_argument& e) {
    err << "error[input]: " << e.what() << '\n';
    return kAnalysisInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

inline void print_summary(std::ostream& log, const experiment::RunSummary& s) {
  log << "jobs planned " << s.planned << ", already present " << s.skipped_existing << ", executed " << s.executed;
  if (s.deferred) log << ", deferred " << s.deferred;
  if (s.diverged) log << ", diverged " << s.diverged;
  if (s.failed) log << ", failed " << s.failed;
  log << "\nresults: " << s.results.string() << '\n';
  for (const auto& m : s.missing_datasets) log << "skipped dataset " << m << '\n';
}

// ---------------------------------------------------------------------------
// Table-2 style win counts for P-sweep records

/// Win counts over the P values in `ps`; keys missing any P are left out.
inline analysis::WinTable psweep_table(std::span<const std::size_t> ps, std::span<const experiment::RunRecord> records) {
  const auto obs = experiment::observations(records, Mode::psweep);
  std::vector<std::string> configs;
  for (std::size_t p : ps) configs.push_back("P=" + std::to_string(p));
  std::map<std::tuple<std::string, std::string, std::size_t>, std::size_t> coverage;
  for (const auto& o : obs) ++coverage[{o.dataset, o.model, o.fold}];
  std::vector<analysis::Observation> complete;
  for (const auto& o : obs)
    if (coverage[{o.dataset, o.model, o.fold}] == configs.size()) complete.push_back(o);
  if (complete.empty()) throw std::invalid_argument("no key has records for every P");
  auto t = analysis::win_counts(complete, configs, "P");
  for (auto& r : t.rows) r.config = r.config.substr(2);
  return t;
}

inline std::vector<std::size_t> swept_ps(std::span<const experiment::RunRecord> records) {
  std::set<std::size_t> ps;
  for (const auto& r : records)
    if (r.p) ps.insert(*r.p);
  return {ps.begin(), ps.end()};
}

inline void write_win_table(const fs::path& dir, const analysis::WinTable& t) {
  write_file(dir / "psweep_wins.csv", analysis::to_csv(t));
  write_file(dir / "psweep_wins.json", analysis::to_json(t).dump(2) + "\n");
}

inline int bench(const CommonOptions& o, Mode mode, std::ostream& log) {
  const ExperimentConfig c = resolve(o);
  if (c.datasets.empty()) throw experiment::ConfigError("datasets", "no datasets configured");
  if (mode == Mode::bench && c.models.empty()) throw experiment::ConfigError("models", "no models configured");
  const auto s = experiment::run_grid(c, mode);
  print_summary(log, s);
  if (s.missing_datasets.size() == c.datasets.size()) {
    log << "no dataset could be loaded\n";
    return kDataError;
  }
  if (mode == Mode::psweep && s.deferred == 0) {
    const auto records = experiment::read_records(s.results);
    const auto table = psweep_table(c.p_sweep, records);
    write_win_table(c.out, table);
    log << analysis::to_csv(table);
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeOptions {
  fs::path results;  // results.jsonl from bench
  fs::path out;
  std::optional<fs::path> psweep;  // win counts are added when this file exists
  analysis::PairingMode mode = analysis::PairingMode::fold;
  std::string with_variant = "adacap";
  std::string without_variant = "linear";
};

/// Drops (dataset, model, fold) keys that lack either variant, e.g. after a
/// diverged run, and reports how many were dropped.
inline std::vector<analysis::Observation> complete_pairs(std::vector<analysis::Observation> obs,
                                                         const std::string& a, const std::string& b,
                                                         std::size_t& dropped) {
  std::map<std::tuple<std::string, std::string, std::size_t>, std::set<std::string>> seen;
  for (const auto& o : obs) seen[{o.dataset, o.model, o.fold}].insert(o.variant);
  std::vector<analysis::Observation> out;
  dropped = 0;
  for (const auto& [k, v] : seen) dropped += !(v.count(a) && v.count(b));
  for (auto& o : obs) {
    const auto& v = seen[{o.dataset, o.model, o.fold}];
    if (v.count(a) && v.count(b)) out.push_back(std::move(o));
  }
  return out;
}

inline int analyze(const AnalyzeOptions& o, std::ostream& log) {
  const auto records = experiment::read_records(o.results);
  if (records.empty()) throw std::invalid_argument("no records in " + o.results.string());
  std::set<std::string> hashes;
  for (const auto& r : records) hashes.insert(r.config_hash);
  if (hashes.size() > 1) throw experiment::ResultsConflict(o.results.string() + " mixes records from several configs");
  std::size_t dropped = 0;
  const auto obs = complete_pairs(experiment::observations(records, Mode::bench), o.with_variant, o.without_variant, dropped);
  if (obs.empty()) throw std::invalid_argument("no complete " + o.with_variant + "/" + o.without_variant + " pairs");
  const auto rows = analysis::regime_outcomes(obs, o.with_variant, o.without_variant, o.mode);

  nlohmann::ordered_json j;
  j["pairing"] = o.mode == analysis::PairingMode::fold ? "fold" : "dataset_mean";
  j["alpha"] = analysis::kAlpha;
  j["dropped_incomplete_keys"] = dropped;
  j["outcomes"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) j["outcomes"].push_back(analysis::to_json(r));
  fs::create_directories(o.out);
  write_file(o.out / "wilcoxon.json", j.dump(2) + "\n");
  write_file(o.out / "regime_plot.csv", analysis::plot_data_csv(rows));
  for (const auto& r : rows)
    log << analysis::to_string(r.regime) << ' ' << r.model << ' ' << analysis::to_string(r.metric) << ": "
        << analysis::to_string(r.outcome) << " (p=" << r.test.p_value << ", pairs=" << r.n_pairs << ")\n";
  if (dropped) log << "dropped " << dropped << " incomplete keys\n";
  if (o.psweep && fs::exists(*o.psweep)) {
    const auto sweep = experiment::read_records(*o.psweep);
    const auto table = psweep_table(swept_ps(sweep), sweep);
    write_win_table(o.out, table);
    log << analysis::to_csv(table);
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// metafeatures / metapredict

inline int metafeatures_cmd(const CommonOptions& o, std::ostream& log) {
  const ExperimentConfig c = resolve(o);
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  std::size_t missing = 0;
  for (const auto& e : c.datasets) {
    try {
      const auto ds = experiment::load_dataset(e);
      metafeatures::ExtractOptions eo;
      eo.seed = c.seed;
      j[e.id] = metafeatures::to_json(metafeatures::extract(ds, eo));
      log << "meta-features: " << e.id << '\n';
    } catch (const std::exception& ex) {
      ++missing;
      log << "skipped dataset " << e.id << ": " << ex.what() << '\n';
    }
  }
  fs::create_directories(c.out);
  write_file(fs::path(c.out) / "metafeatures.json", j.dump(2) + "\n");
  if (!c.datasets.empty() && missing == c.datasets.size()) return kDataError;
  return kOk;
}

inline std::map<std::string, metafeatures::MetaFeatureVector> read_metafeatures(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::invalid_argument("cannot open " + p.string());
  const auto j = nlohmann::json::parse(in);
  std::map<std::string, metafeatures::MetaFeatureVector> out;
  for (const auto& [id, v] : j.items()) out[id] = metafeatures::from_json(v);
  return out;
}

struct MetaOptions {
  fs::path results;
  fs::path features;
  fs::path out;
  analysis::Metric metric = analysis::Metric::rmse;
  std::uint64_t seed = 0;
  bool pooled = false;
};

inline int metapredict_cmd(const MetaOptions& o, std::ostream& log) {
  const auto records = experiment::read_records(o.results);
  const auto md = metapredict::build_meta_dataset(experiment::observations(records, Mode::bench),
                                                  read_metafeatures(o.features), o.metric);
  log << "meta-examples " << md.examples.size() << ", unpaired " << md.unpaired << ", without meta-features "
      << md.missing_features << '\n';
  metapredict::EvalOptions eo;
  eo.seed = o.seed;
  eo.pooled = o.pooled;
  const auto rep = metapredict::train_and_evaluate(md, eo);
  fs::create_directories(o.out);
  write_file(o.out / "metapredict.csv", metapredict::accuracy_csv(rep));
  write_file(o.out / "metapredict_ranking.csv", metapredict::ranking_csv(rep));
  write_file(o.out / "metapredict.json", metapredict::to_json(rep).dump(2) + "\n");
  log << metapredict::accuracy_csv(rep);
  for (const auto& s : rep.skipped) log << "skipped: " << s << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// train (one run)

struct TrainOptions {
  CommonOptions common;
  std::string dataset;
  std::string model = "MLP";
  std::string head = "adacap";
  std::size_t fold = 0;
  std::optional<std::size_t> p;
};

inline int train_cmd(const TrainOptions& o, std::ostream& out, std::ostream& log) {
  const ExperimentConfig c = resolve(o.common);
  const auto it = std::find_if(c.datasets.begin(), c.datasets.end(), [&](const auto& d) { return d.id == o.dataset; });
  if (it == c.datasets.end()) throw experiment::ConfigError("--dataset", "no dataset with id '" + o.dataset + "'");
  if (o.fold >= c.folds) throw experiment::ConfigError("--fold", "must be < folds (" + std::to_string(c.folds) + ")");
  experiment::Job job{static_cast<std::size_t>(it - c.datasets.begin()), o.dataset, o.model,
                      experiment::detail::wrap("--head", [&] { return models::parse_head(o.head); }), std::nullopt,
                      o.fold};
  experiment::detail::wrap("--model", [&] { return models::named_architecture(o.model); });
  if (job.head == models::HeadKind::adacap) job.p = o.p.value_or(c.train.p);
  const auto ds = experiment::load_dataset(*it);
  const auto res = experiment::run_job(c, experiment::config_hash(c), job, ds, experiment::fold_plan(c, ds), true);
  out << experiment::to_json(res.record).dump() << '\n';
  if (res.model) {
    fs::create_directories(c.out);
    const fs::path logp = fs::path(c.out) / ("train_" + o.dataset + "_" + o.model + "_" + o.head + "_fold" +
                                             std::to_string(o.fold) + ".jsonl");
    std::ofstream lf(logp, std::ios::trunc);
    train::write_training_log(lf, *res.model);
    log << "training log: " << logp.string() << '\n';
  }
  if (res.record.status == "diverged") {
    log << "training diverged: " << res.record.error << '\n';
    return kFailure;
  }
  if (res.record.status != "ok") {
    log << "run failed: " << res.record.error << '\n';
    return kDataError;
  }
  return kOk;
}

}  // namespace adacap::cli
