#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "adacap/contrastive.hpp"
#include "adacap/models.hpp"
#include "adacap/rng.hpp"
#include "adacap/tikhonov.hpp"

namespace adacap::train {

using autodiff::Tape;
using autodiff::Value;
using linalg::Matrix;
using linalg::Vector;
using models::Batch;
using models::HeadKind;
using models::InputSchema;
using models::Model;

enum class PermutationMode { per_step, per_epoch };

struct TrainConfig {
  std::size_t epochs = 400;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double max_lr = 1e-2;        // one-cycle peak
  double warmup_frac = 0.3;    // one-cycle ramp share
  std::size_t p = 10;
  std::uint64_t seed = 0;
  bool full_batch_ridge = true;
  std::size_t full_batch_limit = 2048;
  contrastive::NormKind norm = contrastive::NormKind::euclidean;
  PermutationMode permutations = PermutationMode::per_step;
  bool clamp_hidden = true;
  double lambda_grid_lo = 1e-3;
  double lambda_grid_hi = 1e3;
  std::size_t lambda_grid_points = 13;

  void validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("TrainConfig: " + what); };
    if (batch_size < 2) fail("batch_size must be >= 2");
    if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
    if (!(max_lr > 0.0)) fail("max_lr must be > 0");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) fail("adam betas must lie in (0,1)");
    if (!(adam_eps > 0.0)) fail("adam_eps must be > 0");
    if (!(warmup_frac > 0.0 && warmup_frac < 1.0)) fail("warmup_frac must lie in (0,1)");
    if (p < 1) fail("p must be >= 1");
    if (full_batch_limit < 2) fail("full_batch_limit must be >= 2");
    if (lambda_grid_points < 2) fail("lambda_grid_points must be >= 2");
  }
};

/// Linear ramp 0.04*max_lr -> max_lr over the warmup share of steps, then
/// cosine decay to max_lr/1e4 at the last step.
inline double one_cycle_lr(std::size_t step, std::size_t total_steps, double max_lr, double warmup_frac) {
  if (total_steps == 0 || step >= total_steps) {
    throw std::invalid_argument("one_cycle_lr: need 0 <= step < total_steps");
  }
  const double start = 0.04 * max_lr;
  const double end = max_lr / 1e4;
  const double warm = warmup_frac * static_cast<double>(total_steps - 1);
  const double s = static_cast<double>(step);
  if (s <= warm) {
    if (warm <= 0.0) return max_lr;
    return start + (max_lr - start) * s / warm;
  }
  const double progress = (s - warm) / (static_cast<double>(total_steps - 1) - warm);
  return end + 0.5 * (max_lr - end) * (1.0 + std::cos(std::numbers::pi * progress));
}

class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(std::vector<models::Parameter>& params, const std::vector<Matrix>& grads, double lr) {
    if (grads.size() != params.size()) throw std::invalid_argument("Adam::step: gradient count mismatch");
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.value.rows(), p.value.cols(), 0.0);
        v_.emplace_back(p.value.rows(), p.value.cols(), 0.0);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Matrix& w = params[i].value;
      const Matrix& g = grads[i];
      if (g.rows() != w.rows() || g.cols() != w.cols()) {
        throw std::invalid_argument("Adam::step: gradient shape mismatch for " + params[i].name);
      }
      for (std::size_t k = 0; k < w.size(); ++k) {
        m_[i][k] = b1_ * m_[i][k] + (1.0 - b1_) * g[k];
        v_[i][k] = b2_ * v_[i][k] + (1.0 - b2_) * g[k] * g[k];
        w[k] -= lr * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + eps_);
      }
    }
  }

  std::size_t steps() const noexcept { return t_; }

 private:
  double b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double fit_term = 0.0;
  double contrast_term = 0.0;
  std::optional<double> lambda;  // adacap only; value at epoch end
  double lr = 0.0;               // last step's learning rate
};

struct TrainedModel {
  Model model;  // spec.hidden reflects any clamp
  HeadKind head = HeadKind::linear;
  Vector w_final;                     // adacap only, length = hidden
  std::optional<double> lambda_final; // adacap only
  double y_mean = 0.0;
  double y_scale = 1.0;
  std::optional<tikhonov::LambdaChoice> lambda_init;
  std::vector<EpochLog> log;
  std::vector<double> lambda_trajectory;  // after every step
  std::size_t steps = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::optional<std::size_t> last_good_epoch)
      : std::runtime_error(what), last_good_epoch_(last_good_epoch) {}
  std::optional<std::size_t> last_good_epoch() const noexcept { return last_good_epoch_; }

 private:
  std::optional<std::size_t> last_good_epoch_;
};

namespace detail {

inline Matrix representation(const Model& m, const Batch& x) {
  Tape t;
  return models::forward(t, m, models::bind(t, m, false), x).h.data();
}

inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order,
                                                          std::size_t batch) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch)));
  }
  // A trailing single row cannot form a ridge problem or a permutation.
  if (out.size() > 1 && out.back().size() < 2) {
    auto tail = std::move(out.back());
    out.pop_back();
    out.back().insert(out.back().end(), tail.begin(), tail.end());
  }
  return out;
}

}  // namespace detail

/// Effective spec after the small-n width clamp: hidden -> max(16, n/2) when n < hidden.
inline models::ArchitectureSpec effective_spec(models::ArchitectureSpec spec, const TrainConfig& cfg,
                                               std::size_t n_train) {
  if (cfg.clamp_hidden && n_train < spec.hidden) spec.hidden = std::max<std::size_t>(16, n_train / 2);
  return spec;
}

inline TrainedModel fit(const models::ArchitectureSpec& spec_in, const TrainConfig& cfg, const Batch& x,
                        const Vector& y, const InputSchema& schema) {
  cfg.validate();
  const std::size_t n = x.rows();
  if (n == 0) throw std::invalid_argument("fit: empty training split");
  if (y.size() != n) {
    throw std::invalid_argument("fit: " + std::to_string(y.size()) + " targets for " + std::to_string(n) +
                                " rows");
  }
  for (double v : y)
    if (!std::isfinite(v)) throw std::invalid_argument("fit: non-finite target");
  const bool adacap = spec_in.head == HeadKind::adacap;
  if (adacap && n < 2) throw std::invalid_argument("fit: adacap head needs at least 2 rows");

  TrainedModel tm;
  tm.head = spec_in.head;
  const models::ArchitectureSpec spec = effective_spec(spec_in, cfg, n);
  tm.model = models::build(spec, schema, derive_seed(cfg.seed, "init"));
  Model& model = tm.model;

  // Standardized target.
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  const double sd = n > 1 ? std::sqrt(var / static_cast<double>(n - 1)) : 0.0;
  tm.y_mean = mean;
  tm.y_scale = sd > 1e-12 ? sd : 1.0;
  Vector ys(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = (y[i] - tm.y_mean) / tm.y_scale;

  std::size_t batch = std::min(cfg.batch_size, n);
  if (adacap && cfg.full_batch_ridge && n <= cfg.full_batch_limit) batch = n;

  const std::uint64_t perm_stream = derive_seed(cfg.seed, "permutations");
  CounterRng order_rng(derive_seed(cfg.seed, "batches"));

  if (adacap) {
    // Scan on the first batch-sized slice of a seeded shuffle.
    std::vector<std::size_t> rows = iota_indices(n);
    CounterRng init_rng(derive_seed(cfg.seed, "lambda-init-rows"));
    if (batch < n) shuffle(rows, init_rng);
    rows.resize(batch);
    const Batch xb = x.select(rows);
    Vector yb(batch);
    for (std::size_t i = 0; i < batch; ++i) yb[i] = ys[rows[i]];
    const auto perms =
        contrastive::sample_permutations(batch, cfg.p, derive_seed(cfg.seed, "lambda-init")).apply_all(yb);
    const auto grid = tikhonov::lambda_grid(cfg.lambda_grid_lo, cfg.lambda_grid_hi, cfg.lambda_grid_points);
    tm.lambda_init = tikhonov::init_lambda(detail::representation(model, xb), yb, perms, grid, cfg.norm);
    model.params.params[model.log_lambda].value = Matrix::scalar(std::log(tm.lambda_init->lambda));
  }

  Adam adam(cfg.beta1, cfg.beta2, cfg.adam_eps);
  const std::size_t per_epoch = detail::make_batches(iota_indices(n), batch).size();
  const std::size_t total = cfg.epochs * per_epoch;
  std::optional<std::size_t> last_good;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = iota_indices(n);
    if (batch < n) shuffle(order, order_rng);
    const auto batches = detail::make_batches(order, batch);
    EpochLog el;
    el.epoch = epoch;
    double weight_sum = 0.0;
    for (const auto& rows : batches) {
      const std::size_t nb = rows.size();
      const Batch xb = batch == n ? x : x.select(rows);
      Vector yb(nb);
      for (std::size_t i = 0; i < nb; ++i) yb[i] = ys[rows[i]];

      Tape tape;
      const models::BoundParams bp = models::bind(tape, model);
      contrastive::LossValue loss;
      try {
        const auto out = models::forward(tape, model, bp, xb);
        Value yv = tape.constant(Matrix::column(yb));
        if (adacap) {
          const std::uint64_t ps = cfg.permutations == PermutationMode::per_step
                                       ? derive_seed(perm_stream, static_cast<std::uint64_t>(step))
                                       : derive_seed(perm_stream, static_cast<std::uint64_t>(epoch));
          const auto perms = contrastive::sample_permutations(nb, cfg.p, ps).apply_all(yb);
          const auto r = tikhonov::ridge_predict(out.h, bp[model.log_lambda], yb, perms);
          std::vector<Value> pys;
          pys.reserve(perms.size());
          for (const auto& py : perms) pys.push_back(tape.constant(Matrix::column(py)));
          loss = contrastive::adacap_loss(yv, r.y_hat, pys, r.y_hat_perm, cfg.norm);
        } else {
          loss = contrastive::mse_loss(yv, *out.prediction);
        }
      } catch (const models::NumericalError& e) {
        throw TrainingDiverged(std::string("fit: ") + e.what(), last_good);
      }
      if (!std::isfinite(loss.total.item())) {
        throw TrainingDiverged("fit: non-finite loss at epoch " + std::to_string(epoch), last_good);
      }
      tape.backward(loss.total);

      std::vector<Matrix> grads;
      grads.reserve(bp.values.size());
      for (const auto& v : bp.values) grads.push_back(v.grad());
      const double lr = spec.scheduler == models::Schedule::one_cycle
                            ? one_cycle_lr(step, total, cfg.max_lr, cfg.warmup_frac)
                            : cfg.learning_rate;
      adam.step(model.params.params, grads, lr);
      ++step;

      const double w = static_cast<double>(nb);
      el.loss += w * loss.total.item();
      el.fit_term += w * loss.fit_term;
      el.contrast_term += w * loss.contrast_term;
      weight_sum += w;
      el.lr = lr;
      if (adacap) {
        const double lambda = std::exp(model.params.params[model.log_lambda].value.item());
        if (!(lambda > 0.0) || !std::isfinite(lambda)) {
          throw TrainingDiverged("fit: lambda left (0, inf) at epoch " + std::to_string(epoch), last_good);
        }
        tm.lambda_trajectory.push_back(lambda);
      }
    }
    el.loss /= weight_sum;
    el.fit_term /= weight_sum;
    el.contrast_term /= weight_sum;
    if (adacap) el.lambda = tm.lambda_trajectory.back();
    tm.log.push_back(el);
    last_good = epoch;
  }
  tm.steps = step;

  if (adacap) {
    const double lambda = std::exp(model.params.params[model.log_lambda].value.item());
    Matrix h;
    try {
      h = detail::representation(model, x);
    } catch (const models::NumericalError& e) {
      throw TrainingDiverged(std::string("fit: freezing head: ") + e.what(), last_good);
    }
    tm.w_final = linalg::ridge_solve(linalg::svd(h), ys, lambda);
    tm.lambda_final = lambda;
  }
  return tm;
}

/// Predictions in the original target units.
inline Vector predict(const TrainedModel& tm, const Batch& x) {
  if (x.numeric.cols() != tm.model.schema.n_numeric || x.n_categorical != tm.model.schema.n_categorical()) {
    throw std::invalid_argument("predict: rows do not match the training schema");
  }
  const Model& m = tm.model;
  Vector out;
  out.reserve(x.rows());
  constexpr std::size_t chunk = 4096;
  for (std::size_t start = 0; start < x.rows(); start += chunk) {
    const std::size_t len = std::min(chunk, x.rows() - start);
    std::vector<std::size_t> rows(len);
    for (std::size_t i = 0; i < len; ++i) rows[i] = start + i;
    const Batch xb = len == x.rows() ? x : x.select(rows);
    Tape t;
    const auto bp = models::bind(t, m, false);
    const auto r = models::forward(t, m, bp, xb);
    const Vector z = tm.head == HeadKind::adacap ? linalg::matvec(r.h.data(), tm.w_final)
                                                 : r.prediction->data().storage();
    for (double v : z) out.push_back(v * tm.y_scale + tm.y_mean);
  }
  return out;
}

inline nlohmann::ordered_json epoch_json(const EpochLog& e) {
  nlohmann::ordered_json j;
  j["epoch"] = e.epoch;
  j["loss"] = e.loss;
  j["fit_term"] = e.fit_term;
  j["contrast_term"] = e.contrast_term;
  j["lambda"] = e.lambda ? nlohmann::ordered_json(*e.lambda) : nlohmann::ordered_json(nullptr);
  j["lr"] = e.lr;
  return j;
}

inline void write_training_log(std::ostream& os, const TrainedModel& tm) {
  for (const auto& e : tm.log) os << epoch_json(e).dump() << '\n';
}

}  // namespace adacap::train
