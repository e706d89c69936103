#pragma once

// Portfolio losses, empirical CVaR in dual form, the batch objective and the
// crash-state dominance property for discrete distributions.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "sigalloc/autodiff.hpp"
#include "sigalloc/error.hpp"
#include "sigalloc/market.hpp"
#include "sigalloc/model.hpp"
#include "sigalloc/rng.hpp"

namespace sigalloc {

struct CvarValue {
  double value = 0.0;
  double nu = 0.0;  // the alpha-quantile at which the dual is evaluated
};

/// CVaR_alpha of an equally weighted sample: nu + sum((L - nu)^+) / ((1 - alpha) K)
/// with nu the lower empirical alpha-quantile.
inline CvarValue cvar(std::span<const double> losses, double alpha) {
  if (losses.empty()) fail(ErrorCode::EmptyScenario, "cvar of an empty loss sample");
  if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorCode::InvalidConfig, "alpha must lie in (0, 1)");
  const double nu = ad::lower_quantile(losses, alpha);
  double excess = 0.0;
  for (double l : losses) excess += std::max(l - nu, 0.0);
  return {nu + excess / ((1.0 - alpha) * static_cast<double>(losses.size())), nu};
}

/// Exact CVaR_alpha of a discrete distribution with probabilities p over
/// outcomes z (losses). nu is VaR_alpha = min{z : P(Z <= z) >= alpha}.
inline CvarValue discrete_cvar(std::span<const double> p, std::span<const double> z, double alpha) {
  if (p.empty() || p.size() != z.size()) fail(ErrorCode::PreconditionFailed, "p and z must be non-empty and equal length");
  if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorCode::PreconditionFailed, "alpha must lie in (0, 1)");
  std::vector<std::size_t> order(z.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return z[a] < z[b]; });
  double cum = 0.0, nu = z[order.back()];
  for (std::size_t i : order) {
    cum += p[i];
    if (cum >= alpha - 1e-15) {
      nu = z[i];
      break;
    }
  }
  double excess = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) excess += p[i] * std::max(z[i] - nu, 0.0);
  return {nu + excess / (1.0 - alpha), nu};
}

struct DominanceResult {
  bool holds = false;
  double cvar_x = 0.0;
  double cvar_y = 0.0;
  double gap = 0.0;    // CVaR(X) - CVaR(Y)
  double bound = 0.0;  // min_s (X_s - Y_s)
};

/// Crash-state dominance: when state 0 is the unique worst state of X, its
/// probability exceeds 1 - alpha and Y < X statewise, CVaR(X) - CVaR(Y) is at
/// least min_s (X_s - Y_s). Throws PreconditionFailed when the hypotheses fail.
inline DominanceResult cvar_dominance_check(std::span<const double> p, std::span<const double> x,
                                            std::span<const double> y, double alpha) {
  const std::size_t n = p.size();
  if (n == 0 || x.size() != n || y.size() != n) fail(ErrorCode::PreconditionFailed, "p, X and Y must have equal length");
  double total = 0.0;
  for (double pi : p) {
    if (!(pi > 0.0)) fail(ErrorCode::PreconditionFailed, "state probabilities must be positive");
    total += pi;
  }
  if (std::abs(total - 1.0) > 1e-9) fail(ErrorCode::PreconditionFailed, "state probabilities must sum to 1");
  for (std::size_t s = 1; s < n; ++s)
    if (!(x[0] > x[s])) fail(ErrorCode::PreconditionFailed, "state 0 must be the strict worst state of X");
  for (std::size_t s = 0; s < n; ++s)
    if (!(y[s] < x[s])) fail(ErrorCode::PreconditionFailed, "Y must be strictly below X in every state");
  if (!(1.0 - alpha < p[0])) fail(ErrorCode::PreconditionFailed, "crash probability must exceed 1 - alpha");
  DominanceResult r;
  r.cvar_x = discrete_cvar(p, x, alpha).value;
  r.cvar_y = discrete_cvar(p, y, alpha).value;
  r.gap = r.cvar_x - r.cvar_y;
  r.bound = x[0] - y[0];
  for (std::size_t s = 1; s < n; ++s) r.bound = std::min(r.bound, x[s] - y[s]);
  r.holds = r.gap >= r.bound - 1e-12;
  return r;
}

/// Step losses L_k = -w_k . r_k for weights [K, d] and returns [K, d].
inline Tensor scenario_losses(const Tensor& weights, std::span<const double> returns) {
  if (weights.rank() != 2 || returns.size() != weights.numel())
    fail(ErrorCode::ShapeError, "returns do not match weights " + ad::shape_str(weights.shape()));
  Tensor r = Tensor::constant(weights.shape(), {returns.begin(), returns.end()});
  return ad::scale(ad::sum_last(ad::mul(weights, r)), -1.0);
}

/// Differentiable CVaR of a loss vector with the quantile held fixed.
/// The loss sitting exactly at nu is a kink of (L - nu)^+; it receives the
/// subgradient ceil(alpha K) - alpha K in [0, 1), the choice under which the
/// tape gradient equals the derivative of the CVaR value itself. When alpha K
/// is an integer this is the plain relu subgradient 0.
inline Tensor cvar_tensor(const Tensor& losses, double alpha) {
  const auto values = losses.value();
  const std::size_t n = values.size();
  if (n == 0) fail(ErrorCode::EmptyScenario, "cvar of an empty loss sample");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  const double k = static_cast<double>(n);
  auto rank = static_cast<std::ptrdiff_t>(std::ceil(alpha * k - 1e-9));
  rank = std::clamp<std::ptrdiff_t>(rank, 1, static_cast<std::ptrdiff_t>(n));
  const std::size_t at = order[static_cast<std::size_t>(rank - 1)];
  const double nu = values[at];
  const double kink_weight = std::clamp(static_cast<double>(rank) - alpha * k, 0.0, 1.0);
  Tensor excess = ad::sum(ad::relu(ad::shift(losses, -nu)));
  if (kink_weight > 0.0) excess = ad::add(excess, ad::scale(ad::shift(ad::take(losses, {at}), -nu), kink_weight));
  return ad::shift(ad::scale(excess, 1.0 / ((1.0 - alpha) * k)), nu);
}

/// Per-scenario objective: CVaR of the K step losses, or their mean for the
/// risk-neutral variant.
inline Tensor scenario_objective(const Scenario& s, const SitParameters& params, const SitConfig& cfg,
                                 const ForwardOptions& opts) {
  const Allocation a = forward(s.features, params, cfg, opts);
  Tensor losses = scenario_losses(a.weights, s.returns);
  if (opts.variant == Variant::no_cvar) return ad::mean(losses);
  return cvar_tensor(losses, cfg.cvar_alpha);
}

/// Dropout seed for scenario `index` of a pass seeded with `seed`.
inline std::uint64_t scenario_dropout_seed(std::uint64_t seed, std::size_t index) {
  return hash_combine(seed, static_cast<std::uint64_t>(index));
}

/// (1/N) sum_i objective_i over a batch.
inline Tensor batch_objective(std::span<const Scenario> batch, const SitParameters& params, const SitConfig& cfg,
                              const ForwardOptions& opts = {}) {
  if (batch.empty()) fail(ErrorCode::EmptyBatch, "batch_objective on an empty batch");
  Tensor total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ForwardOptions o = opts;
    o.dropout_seed = scenario_dropout_seed(opts.dropout_seed, i);
    Tensor term = scenario_objective(batch[i], params, cfg, o);
    total = total.defined() ? ad::add(total, term) : term;
  }
  return ad::scale(total, 1.0 / static_cast<double>(batch.size()));
}

/// Objective value without building a gradient tape for the caller.
inline double evaluate_objective(std::span<const Scenario> batch, const SitParameters& params, const SitConfig& cfg,
                                 Variant variant = Variant::full) {
  if (batch.empty()) fail(ErrorCode::EmptyBatch, "evaluate_objective on an empty batch");
  std::vector<double> values(batch.size());
  ForwardOptions opts;
  opts.variant = variant;
  parallel_for(batch.size(), [&](std::size_t i) { values[i] = scenario_objective(batch[i], params, cfg, opts).item(); });
  double total = 0.0;
  for (double v : values) total += v;
  return total / static_cast<double>(batch.size());
}

}  // namespace sigalloc
