#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "adacap/analysis.hpp"
#include "adacap/data.hpp"
#include "adacap/models.hpp"
#include "adacap/train.hpp"
#include "adacap/version.hpp"

namespace adacap::experiment {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

/// Malformed configuration. `field` is a dotted path such as "train.epochs".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::runtime_error("config error at '" + field + "': " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Results file written under a different configuration.
class ResultsConflict : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Configuration

struct DatasetEntry {
  std::string id;
  std::string path;  // CSV; empty for synthetic entries
  std::string target;
  std::vector<std::string> categorical, numeric, drop;
  std::string url;     // optional source for `fetch`
  std::string sha256;  // optional checksum for `fetch`
  std::optional<data::SynthOptions> synthetic;
};

struct ModelEntry {
  std::string architecture;
  std::vector<models::HeadKind> heads{models::HeadKind::linear, models::HeadKind::adacap};
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::size_t folds = 10;
  std::vector<DatasetEntry> datasets;
  std::vector<ModelEntry> models;
  train::TrainConfig train;
  std::vector<std::size_t> p_sweep{1, 2, 5, 10, 20};
  std::string psweep_architecture = "MLP";
  bool record_wall_time = false;
  analysis::Metric metric = analysis::Metric::rmse;
  // Execution only; excluded from the hash.
  std::string out = "results";
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  std::size_t max_jobs = 0;  // 0 = no limit
};

namespace detail {

/// Strict object reader: every key must be consumed, types are checked, and
/// errors carry the dotted path of the field.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [k, _] : j_.items())
      if (!seen_.count(k)) throw ConfigError(field(k), "unknown field");
  }
  std::string field(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }
  bool has(const std::string& k) {
    seen_.insert(k);
    return j_.contains(k);
  }
  const json& raw(const std::string& k) {
    seen_.insert(k);
    return j_.at(k);
  }
  template <class T>
  void get(const std::string& k, T& out) {
    if (!has(k)) return;
    const json& v = j_.at(k);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(field(k), "expected a boolean");
      } else if constexpr (std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned()) throw ConfigError(field(k), "expected a non-negative integer");
      } else if constexpr (std::is_arithmetic_v<T>) {
        if (!v.is_number()) throw ConfigError(field(k), "expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(field(k), "expected a string");
      } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
        if (!v.is_array()) throw ConfigError(field(k), "expected an array of strings");
        for (const auto& e : v)
          if (!e.is_string()) throw ConfigError(field(k), "expected an array of strings");
      } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
        if (!v.is_array()) throw ConfigError(field(k), "expected an array of non-negative integers");
        for (const auto& e : v)
          if (!e.is_number_unsigned()) throw ConfigError(field(k), "expected an array of non-negative integers");
      }
      out = v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(field(k), e.what());
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
auto wrap(const std::string& field, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(field, e.what());
  }
}

inline void read_train(const json& j, train::TrainConfig& t) {
  Reader r(j, "train");
  r.get("epochs", t.epochs);
  r.get("batch_size", t.batch_size);
  r.get("learning_rate", t.learning_rate);
  r.get("beta1", t.beta1);
  r.get("beta2", t.beta2);
  r.get("adam_eps", t.adam_eps);
  r.get("max_lr", t.max_lr);
  r.get("warmup_frac", t.warmup_frac);
  r.get("p", t.p);
  r.get("full_batch_ridge", t.full_batch_ridge);
  r.get("full_batch_limit", t.full_batch_limit);
  r.get("clamp_hidden", t.clamp_hidden);
  r.get("lambda_grid_lo", t.lambda_grid_lo);
  r.get("lambda_grid_hi", t.lambda_grid_hi);
  r.get("lambda_grid_points", t.lambda_grid_points);
  std::string s;
  if (r.has("norm")) {
    r.get("norm", s);
    if (s == "euclidean") t.norm = contrastive::NormKind::euclidean;
    else if (s == "squared") t.norm = contrastive::NormKind::squared;
    else throw ConfigError("train.norm", "expected 'euclidean' or 'squared', got '" + s + "'");
  }
  if (r.has("permutations")) {
    r.get("permutations", s);
    if (s == "per_step") t.permutations = train::PermutationMode::per_step;
    else if (s == "per_epoch") t.permutations = train::PermutationMode::per_epoch;
    else throw ConfigError("train.permutations", "expected 'per_step' or 'per_epoch', got '" + s + "'");
  }
  wrap("train", [&] { t.validate(); });
}

inline data::SynthOptions read_synth(const json& j, const std::string& path) {
  Reader r(j, path);
  data::SynthOptions o;
  std::string kind = data::to_string(o.kind);
  r.get("kind", kind);
  o.kind = wrap(path + ".kind", [&] { return data::parse_synth_kind(kind); });
  r.get("n", o.n);
  r.get("k", o.k);
  r.get("noise", o.noise);
  r.get("seed", o.seed);
  r.get("n_categorical", o.n_categorical);
  r.get("cardinality", o.cardinality);
  return o;
}

inline void read_datasets(const json& arr, const std::string& path, const fs::path& base,
                          std::vector<DatasetEntry>& out) {
  if (!arr.is_array()) throw ConfigError(path, "expected an array");
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    Reader r(arr[i], p);
    DatasetEntry e;
    r.get("id", e.id);
    if (e.id.empty()) throw ConfigError(p + ".id", "required");
    r.get("path", e.path);
    r.get("target", e.target);
    r.get("categorical", e.categorical);
    r.get("numeric", e.numeric);
    r.get("drop", e.drop);
    r.get("url", e.url);
    r.get("sha256", e.sha256);
    if (r.has("synthetic")) e.synthetic = read_synth(r.raw("synthetic"), p + ".synthetic");
    if (e.synthetic && !e.path.empty()) throw ConfigError(p, "give either 'path' or 'synthetic', not both");
    if (!e.synthetic && e.path.empty()) throw ConfigError(p + ".path", "required for non-synthetic datasets");
    if (!e.synthetic && e.target.empty()) throw ConfigError(p + ".target", "required for CSV datasets");
    if (!e.path.empty() && fs::path(e.path).is_relative()) e.path = (base / e.path).lexically_normal().string();
    out.push_back(std::move(e));
  }
}

}  // namespace detail

/// Parses a configuration tree. Relative dataset paths resolve against
/// `base_dir` (the config's directory) or the manifest's own directory.
inline ExperimentConfig parse_config(const json& j, const fs::path& base_dir = ".") {
  ExperimentConfig c;
  detail::Reader r(j, "");
  r.get("seed", c.seed);
  r.get("folds", c.folds);
  if (c.folds < 2) throw ConfigError("folds", "need at least 2 folds");
  if (r.has("datasets")) detail::read_datasets(r.raw("datasets"), "datasets", base_dir, c.datasets);
  if (r.has("manifest")) {
    std::string m;
    r.get("manifest", m);
    fs::path mp = fs::path(m).is_relative() ? base_dir / m : fs::path(m);
    std::ifstream in(mp);
    if (!in) throw ConfigError("manifest", "cannot open " + mp.string());
    json mj;
    try {
      mj = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("manifest", std::string("invalid JSON: ") + e.what());
    }
    detail::read_datasets(mj.is_object() && mj.contains("datasets") ? mj["datasets"] : mj, "manifest.datasets",
                          mp.parent_path(), c.datasets);
  }
  std::set<std::string> ids;
  for (const auto& d : c.datasets)
    if (!ids.insert(d.id).second) throw ConfigError("datasets", "duplicate dataset id '" + d.id + "'");
  if (r.has("models")) {
    const json& arr = r.raw("models");
    if (!arr.is_array()) throw ConfigError("models", "expected an array");
    c.models.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string p = "models[" + std::to_string(i) + "]";
      ModelEntry m;
      if (arr[i].is_string()) {
        m.architecture = arr[i].get<std::string>();
      } else {
        detail::Reader mr(arr[i], p);
        mr.get("architecture", m.architecture);
        std::vector<std::string> heads;
        if (mr.has("heads")) {
          mr.get("heads", heads);
          m.heads.clear();
          for (const auto& h : heads) m.heads.push_back(detail::wrap(p + ".heads", [&] { return models::parse_head(h); }));
        }
      }
      detail::wrap(p + ".architecture", [&] { return models::named_architecture(m.architecture); });
      c.models.push_back(std::move(m));
    }
  }
  if (r.has("train")) detail::read_train(r.raw("train"), c.train);
  r.get("p_sweep", c.p_sweep);
  for (std::size_t p : c.p_sweep)
    if (p == 0) throw ConfigError("p_sweep", "permutation counts must be >= 1");
  r.get("psweep_architecture", c.psweep_architecture);
  detail::wrap("psweep_architecture", [&] { return models::named_architecture(c.psweep_architecture); });
  r.get("record_wall_time", c.record_wall_time);
  if (r.has("metric")) {
    std::string m;
    r.get("metric", m);
    c.metric = detail::wrap("metric", [&] { return analysis::parse_metric(m); });
  }
  r.get("out", c.out);
  r.get("workers", c.workers);
  r.get("max_jobs", c.max_jobs);
  if (c.workers == 0) throw ConfigError("workers", "must be >= 1");
  return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

/// Resolved configuration as a canonical tree (sorted keys), without the
/// execution-only fields.
inline json canonical_json(const ExperimentConfig& c) {
  json ds = json::array();
  for (const auto& d : c.datasets) {
    json e{{"id", d.id}, {"path", d.path}, {"target", d.target}, {"categorical", d.categorical},
           {"numeric", d.numeric}, {"drop", d.drop}};
    if (d.synthetic) {
      const auto& s = *d.synthetic;
      e["synthetic"] = {{"kind", data::to_string(s.kind)}, {"n", s.n}, {"k", s.k}, {"noise", s.noise},
                        {"seed", s.seed}, {"n_categorical", s.n_categorical}, {"cardinality", s.cardinality}};
    }
    ds.push_back(e);
  }
  json ms = json::array();
  for (const auto& m : c.models) {
    json heads = json::array();
    for (auto h : m.heads) heads.push_back(models::to_string(h));
    ms.push_back({{"architecture", m.architecture}, {"heads", heads}});
  }
  const auto& t = c.train;
  json tr{{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"adam_eps", t.adam_eps},
          {"max_lr", t.max_lr},
          {"warmup_frac", t.warmup_frac},
          {"p", t.p},
          {"full_batch_ridge", t.full_batch_ridge},
          {"full_batch_limit", t.full_batch_limit},
          {"clamp_hidden", t.clamp_hidden},
          {"lambda_grid_lo", t.lambda_grid_lo},
          {"lambda_grid_hi", t.lambda_grid_hi},
          {"lambda_grid_points", t.lambda_grid_points},
          {"norm", t.norm == contrastive::NormKind::euclidean ? "euclidean" : "squared"},
          {"permutations", t.permutations == train::PermutationMode::per_step ? "per_step" : "per_epoch"}};
  return {{"seed", c.seed},
          {"folds", c.folds},
          {"datasets", ds},
          {"models", ms},
          {"train", tr},
          {"p_sweep", c.p_sweep},
          {"psweep_architecture", c.psweep_architecture},
          {"record_wall_time", c.record_wall_time},
          {"metric", analysis::to_string(c.metric)}};
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string config_hash(const ExperimentConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_json(c).dump())));
  return buf;
}

// ---------------------------------------------------------------------------
// Jobs and records

enum class Mode { bench, psweep };

struct Job {
  std::size_t dataset = 0;  // index into config.datasets
  std::string dataset_id;
  std::string model;
  models::HeadKind head = models::HeadKind::linear;
  std::optional<std::size_t> p;  // adacap only
  std::size_t fold = 0;

  std::string variant() const {
    if (head == models::HeadKind::linear) return "linear";
    return "adacap";
  }
  /// Unique within one results file (the config hash covers the rest).
  std::string key() const {
    return dataset_id + "|" + model + "|" + models::to_string(head) + "|" + (p ? std::to_string(*p) : "-") + "|" +
           std::to_string(fold);
  }
};

/// Shared by both heads and every P so paired runs start from the same backbone.
inline std::uint64_t job_seed(std::uint64_t global, const std::string& dataset, const std::string& model,
                              std::size_t fold) {
  return derive_seed(derive_seed(derive_seed(global, dataset), model), static_cast<std::uint64_t>(fold));
}

/// Canonical order: dataset, model, head (or P), fold.
inline std::vector<Job> plan_jobs(const ExperimentConfig& c, Mode mode) {
  std::vector<Job> jobs;
  for (std::size_t d = 0; d < c.datasets.size(); ++d) {
    const std::string& id = c.datasets[d].id;
    if (mode == Mode::bench) {
      for (const auto& m : c.models)
        for (auto h : m.heads)
          for (std::size_t f = 0; f < c.folds; ++f)
            jobs.push_back({d, id, m.architecture, h,
                            h == models::HeadKind::adacap ? std::optional<std::size_t>(c.train.p) : std::nullopt, f});
    } else {
      for (std::size_t p : c.p_sweep)
        for (std::size_t f = 0; f < c.folds; ++f)
          jobs.push_back({d, id, c.psweep_architecture, models::HeadKind::adacap, p, f});
    }
  }
  return jobs;
}

struct RunRecord {
  std::string dataset;
  std::string model;
  std::string head;
  std::optional<std::size_t> p;
  std::size_t fold = 0;
  std::uint64_t seed = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::string status = "ok";  // ok | diverged | failed
  std::optional<data::Metrics> metrics;
  std::optional<double> lambda_final;
  std::optional<std::size_t> last_good_epoch;
  std::string error;
  std::optional<double> wall_time_s;
  std::string config_hash;

  std::string key() const {
    return dataset + "|" + model + "|" + head + "|" + (p ? std::to_string(*p) : "-") + "|" + std::to_string(fold);
  }
};

inline ojson to_json(const RunRecord& r) {
  ojson j;
  j["dataset"] = r.dataset;
  j["model"] = r.model;
  j["head"] = r.head;
  j["p"] = r.p ? ojson(*r.p) : ojson(nullptr);
  j["fold"] = r.fold;
  j["seed"] = r.seed;
  j["n_train"] = r.n_train;
  j["n_test"] = r.n_test;
  j["status"] = r.status;
  if (r.metrics) {
    j["metrics"] = {{"rmse", r.metrics->rmse},
                    {"mae", r.metrics->mae},
                    {"mape", r.metrics->mape},
                    {"r2", r.metrics->r2 ? ojson(*r.metrics->r2) : ojson(nullptr)}};
    j["mape_skipped"] = r.metrics->mape_skipped;
  } else {
    j["metrics"] = nullptr;
  }
  j["lambda_final"] = r.lambda_final ? ojson(*r.lambda_final) : ojson(nullptr);
  if (r.status != "ok") {
    j["error"] = r.error;
    j["last_good_epoch"] = r.last_good_epoch ? ojson(*r.last_good_epoch) : ojson(nullptr);
  }
  if (r.wall_time_s) j["wall_time_s"] = *r.wall_time_s;
  j["config_hash"] = r.config_hash;
  return j;
}

inline RunRecord record_from_json(const json& j) {
  RunRecord r;
  r.dataset = j.at("dataset").get<std::string>();
  r.model = j.at("model").get<std::string>();
  r.head = j.at("head").get<std::string>();
  if (!j.at("p").is_null()) r.p = j.at("p").get<std::size_t>();
  r.fold = j.at("fold").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.n_train = j.at("n_train").get<std::size_t>();
  r.n_test = j.at("n_test").get<std::size_t>();
  r.status = j.at("status").get<std::string>();
  if (!j.at("metrics").is_null()) {
    const auto& m = j.at("metrics");
    data::Metrics v;
    v.rmse = m.at("rmse").get<double>();
    v.mae = m.at("mae").get<double>();
    v.mape = m.at("mape").get<double>();
    if (!m.at("r2").is_null()) v.r2 = m.at("r2").get<double>();
    v.mape_skipped = j.value("mape_skipped", std::size_t{0});
    r.metrics = v;
  }
  if (j.contains("lambda_final") && !j["lambda_final"].is_null()) r.lambda_final = j["lambda_final"].get<double>();
  r.error = j.value("error", std::string{});
  if (j.contains("last_good_epoch") && !j["last_good_epoch"].is_null())
    r.last_good_epoch = j["last_good_epoch"].get<std::size_t>();
  if (j.contains("wall_time_s")) r.wall_time_s = j["wall_time_s"].get<double>();
  r.config_hash = j.at("config_hash").get<std::string>();
  return r;
}

/// Reads a JSONL results file. A truncated final line (interrupted append)
/// is dropped; `truncated` reports it so the writer can rewrite the file.
inline std::vector<RunRecord> read_records(const fs::path& path, bool* truncated = nullptr) {
  std::vector<RunRecord> out;
  if (truncated) *truncated = false;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::size_t n = 0;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  for (const auto& l : lines) {
    ++n;
    if (l.empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(l)));
    } catch (const json::exception& e) {
      if (n == lines.size()) {
        if (truncated) *truncated = true;
        break;
      }
      throw std::runtime_error(path.string() + ":" + std::to_string(n) + ": malformed record: " + e.what());
    }
  }
  return out;
}

/// Observations for `analysis`: bench records keep the head as the variant;
/// P-sweep records become "P=<p>". Non-ok records are left out.
inline std::vector<analysis::Observation> observations(std::span<const RunRecord> records, Mode mode) {
  std::vector<analysis::Observation> out;
  for (const auto& r : records) {
    if (r.status != "ok" || !r.metrics) continue;
    std::string variant = mode == Mode::psweep ? "P=" + std::to_string(r.p.value_or(0)) : r.head;
    out.push_back({r.dataset, r.model, std::move(variant), r.fold, r.n_train, *r.metrics});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Datasets and single runs

inline data::Dataset load_dataset(const DatasetEntry& e) {
  if (e.synthetic) {
    auto ds = data::synth(*e.synthetic).dataset;
    ds.id = e.id;
    return ds;
  }
  data::CsvOptions o;
  o.target = e.target;
  o.categorical = {e.categorical.begin(), e.categorical.end()};
  o.numeric = {e.numeric.begin(), e.numeric.end()};
  o.drop = {e.drop.begin(), e.drop.end()};
  return data::load_csv(e.path, o, e.id);
}

inline data::FoldPlan fold_plan(const ExperimentConfig& c, const data::Dataset& ds) {
  return data::make_folds(ds.rows(), c.folds, derive_seed(c.seed, ds.id));
}

struct RunOutput {
  RunRecord record;
  std::optional<train::TrainedModel> model;
};

inline RunOutput run_job(const ExperimentConfig& c, const std::string& hash, const Job& job, const data::Dataset& ds,
                         const data::FoldPlan& plan, bool keep_model = false) {
  RunOutput out;
  RunRecord& r = out.record;
  r.dataset = job.dataset_id;
  r.model = job.model;
  r.head = models::to_string(job.head);
  r.p = job.p;
  r.fold = job.fold;
  r.seed = job_seed(c.seed, job.dataset_id, job.model, job.fold);
  r.config_hash = hash;
  const auto train_rows = plan.train_rows(job.fold), test_rows = plan.test_rows(job.fold);
  r.n_train = train_rows.size();
  r.n_test = test_rows.size();
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const auto split = data::prepare_split(ds, train_rows, test_rows);
    train::TrainConfig tc = c.train;
    tc.seed = r.seed;
    if (job.p) tc.p = *job.p;
    auto tm = train::fit(models::named_architecture(job.model, job.head), tc, split.train_x, split.train_y, split.schema);
    r.metrics = data::metrics(split.test_y, train::predict(tm, split.test_x));
    r.lambda_final = tm.lambda_final;
    if (keep_model) out.model = std::move(tm);
  } catch (const train::TrainingDiverged& e) {
    r.status = "diverged";
    r.error = e.what();
    r.last_good_epoch = e.last_good_epoch();
  } catch (const std::exception& e) {
    r.status = "failed";
    r.error = e.what();
  }
  if (c.record_wall_time)
    r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// ---------------------------------------------------------------------------
// Resumable runner

struct RunSummary {
  std::size_t planned = 0;
  std::size_t skipped_existing = 0;
  std::size_t executed = 0;
  std::size_t diverged = 0;
  std::size_t failed = 0;
  std::size_t deferred = 0;  // left for a later invocation by max_jobs
  std::vector<std::string> missing_datasets;  // "id: reason"
  fs::path results;
};

inline std::string results_file(Mode mode) { return mode == Mode::bench ? "results.jsonl" : "psweep.jsonl"; }

/// Runs every pending job of the grid and appends records in canonical job
/// order, whatever the worker count. Existing records with the same key are
/// kept; records from another configuration make the run refuse.
inline RunSummary run_grid(const ExperimentConfig& c, Mode mode,
                           const std::function<void(const RunRecord&)>& on_record = {}) {
  const std::string hash = config_hash(c);
  RunSummary s;
  fs::create_directories(c.out);
  s.results = fs::path(c.out) / results_file(mode);

  bool truncated = false;
  const auto existing = read_records(s.results, &truncated);
  std::set<std::string> done;
  for (const auto& r : existing) {
    if (r.config_hash != hash)
      throw ResultsConflict(s.results.string() + " holds records for config " + r.config_hash +
                            " but the current config hashes to " + hash + "; refusing to mix them (use a new --out)");
    done.insert(r.key());
  }
  if (truncated) {  // rewrite without the partial line
    std::ofstream rewrite(s.results, std::ios::trunc);
    for (const auto& r : existing) rewrite << to_json(r).dump() << '\n';
  }

  std::map<std::size_t, data::Dataset> loaded;
  std::map<std::size_t, data::FoldPlan> plans;
  std::set<std::size_t> missing;
  const auto all_jobs = plan_jobs(c, mode);
  s.planned = all_jobs.size();
  std::vector<Job> pending;
  for (const auto& j : all_jobs) {
    if (done.count(j.key())) {
      ++s.skipped_existing;
      continue;
    }
    if (missing.count(j.dataset)) continue;
    if (!loaded.count(j.dataset)) {
      try {
        loaded.emplace(j.dataset, load_dataset(c.datasets[j.dataset]));
        plans.emplace(j.dataset, fold_plan(c, loaded.at(j.dataset)));
      } catch (const std::exception& e) {
        missing.insert(j.dataset);
        s.missing_datasets.push_back(c.datasets[j.dataset].id + ": " + e.what());
        continue;
      }
    }
    if (c.max_jobs && pending.size() >= c.max_jobs) {
      ++s.deferred;
      continue;
    }
    pending.push_back(j);
  }

  std::ofstream out(s.results, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to " + s.results.string());
  std::vector<std::optional<RunRecord>> slots(pending.size());
  std::mutex mu;
  std::condition_variable ready;
  std::size_t next = 0;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lk(mu);
        if (next >= pending.size()) return;
        i = next++;
      }
      const Job& j = pending[i];
      RunRecord rec = run_job(c, hash, j, loaded.at(j.dataset), plans.at(j.dataset)).record;
      {
        std::lock_guard lk(mu);
        slots[i] = std::move(rec);
      }
      ready.notify_all();
    }
  };
  std::vector<std::thread> pool;
  const std::size_t n_workers = std::min(c.workers, std::max<std::size_t>(1, pending.size()));
  for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  // Single serialized appender: flush the contiguous finished prefix.
  for (std::size_t i = 0; i < pending.size(); ++i) {
    RunRecord rec;
    {
      std::unique_lock lk(mu);
      ready.wait(lk, [&] { return slots[i].has_value(); });
      rec = std::move(*slots[i]);
      slots[i].reset();
    }
    out << to_json(rec).dump() << '\n';
    out.flush();
    ++s.executed;
    if (rec.status == "diverged") ++s.diverged;
    if (rec.status == "failed") ++s.failed;
    if (on_record) on_record(rec);
  }
  for (auto& t : pool) t.join();
  return s;
}

}  // namespace adacap::experiment
