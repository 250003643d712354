#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "adacap/autodiff.hpp"
#include "adacap/rng.hpp"

namespace adacap::contrastive {

using autodiff::Value;
using linalg::Matrix;
using linalg::Vector;

/// P index permutations of {0..n-1}, reproducible from (seed, n, p).
struct PermutationSet {
  std::size_t n = 0;
  std::size_t p = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> perms;

  /// out[i] = y[perm[i]]
  Vector apply(std::size_t which, std::span<const double> y) const {
    const auto& perm = perms.at(which);
    if (y.size() != perm.size()) {
      throw std::invalid_argument("PermutationSet::apply: length " + std::to_string(y.size()) +
                                  " != " + std::to_string(perm.size()));
    }
    Vector out(y.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out[i] = y[perm[i]];
    return out;
  }

  std::vector<Vector> apply_all(std::span<const double> y) const {
    std::vector<Vector> out;
    out.reserve(p);
    for (std::size_t k = 0; k < p; ++k) out.push_back(apply(k, y));
    return out;
  }
};

inline PermutationSet sample_permutations(std::size_t n, std::size_t p, std::uint64_t seed) {
  if (n < 2) {
    throw std::invalid_argument("sample_permutations: need n >= 2, got " + std::to_string(n));
  }
  if (p < 1) throw std::invalid_argument("sample_permutations: need p >= 1");
  PermutationSet set{n, p, seed, {}};
  set.perms.reserve(p);
  for (std::size_t k = 0; k < p; ++k) {
    CounterRng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    std::vector<std::size_t> perm = iota_indices(n);
    shuffle(perm, rng);
    set.perms.push_back(std::move(perm));
  }
  return set;
}

enum class NormKind { euclidean, squared };

struct LossValue {
  Value total;
  double fit_term = 0.0;
  double contrast_term = 0.0;
};

namespace detail {

inline Value residual_norm(const Value& target, const Value& prediction, NormKind kind) {
  Value r = autodiff::sub(target, prediction);
  if (kind == NormKind::squared) return autodiff::sum(autodiff::hadamard(r, r));
  return autodiff::l2_norm(r);
}

inline void require_same_length(const Value& a, const Value& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string("adacap_loss: ") + what + " shape " +
                                a.data().shape() + " vs " + b.data().shape());
  }
}

}  // namespace detail

/// ||Y - Yhat|| - (1/P) sum_p ||pi_p(Y) - Yhat_p||
inline LossValue adacap_loss(const Value& y, const Value& y_hat, const std::vector<Value>& permuted_ys,
                             const std::vector<Value>& y_hat_perms,
                             NormKind kind = NormKind::euclidean) {
  if (y.data().empty()) throw std::invalid_argument("adacap_loss: zero-length target");
  if (permuted_ys.empty() || permuted_ys.size() != y_hat_perms.size()) {
    throw std::invalid_argument("adacap_loss: need P >= 1 matching permuted targets and predictions");
  }
  detail::require_same_length(y, y_hat, "prediction");
  Value fit = detail::residual_norm(y, y_hat, kind);
  Value contrast = detail::residual_norm(permuted_ys[0], y_hat_perms[0], kind);
  detail::require_same_length(y, permuted_ys[0], "permuted target");
  for (std::size_t p = 1; p < permuted_ys.size(); ++p) {
    detail::require_same_length(y, permuted_ys[p], "permuted target");
    detail::require_same_length(y, y_hat_perms[p], "permuted prediction");
    contrast = autodiff::add(contrast, detail::residual_norm(permuted_ys[p], y_hat_perms[p], kind));
  }
  contrast = autodiff::scale(contrast, 1.0 / static_cast<double>(permuted_ys.size()));
  Value total = autodiff::sub(fit, contrast);
  return {total, fit.item(), contrast.item()};
}

inline LossValue mse_loss(const Value& y, const Value& y_hat) {
  detail::require_same_length(y, y_hat, "prediction");
  if (y.data().empty()) throw std::invalid_argument("mse_loss: zero-length target");
  Value r = autodiff::sub(y, y_hat);
  Value total = autodiff::mean(autodiff::hadamard(r, r));
  return {total, total.item(), 0.0};
}

inline LossValue mae_loss(const Value& y, const Value& y_hat) {
  detail::require_same_length(y, y_hat, "prediction");
  if (y.data().empty()) throw std::invalid_argument("mae_loss: zero-length target");
  Value total = autodiff::mean(autodiff::abs(autodiff::sub(y, y_hat)));
  return {total, total.item(), 0.0};
}

}  // namespace adacap::contrastive
