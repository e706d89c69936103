#pragma once

// Rolling out-of-sample evaluation with proportional costs and the usual
// performance metrics.

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sigalloc/baselines.hpp"
#include "sigalloc/error.hpp"
#include "sigalloc/market.hpp"
#include "sigalloc/model.hpp"

namespace sigalloc {

struct CostModel {
  double c_bps = 0.0;  // one-way fee, 1 bps = 1e-4 per unit traded

  double rate() const {
    if (!(c_bps >= 0.0)) fail(ErrorCode::InvalidConfig, "cost must be >= 0 bps");
    return c_bps * 1e-4;
  }
};

struct Metrics {
  std::optional<double> sharpe;   // per period, undefined for zero volatility
  std::optional<double> sortino;  // per period, undefined without downside
  std::optional<double> sharpe_annual;
  std::optional<double> sortino_annual;
  double mdd = 0.0;
  double wealth = 1.0;
  double mean = 0.0;
  double stdev = 0.0;
};

/// Sharpe = mean / population std; Sortino = mean / sqrt(sum(min(r, 0)^2) / n);
/// MDD on the wealth curve starting at 1. Annualised figures scale by
/// sqrt(252 / period).
inline Metrics metrics(std::span<const double> r, std::size_t period = 5) {
  if (r.size() < 2) fail(ErrorCode::InsufficientHistory, "metrics need at least two periods");
  Metrics m;
  const double n = static_cast<double>(r.size());
  for (double x : r) m.mean += x;
  m.mean /= n;
  double ss = 0.0, down = 0.0;
  for (double x : r) {
    ss += (x - m.mean) * (x - m.mean);
    down += std::min(x, 0.0) * std::min(x, 0.0);
  }
  m.stdev = std::sqrt(ss / n);
  const double ann = std::sqrt(252.0 / static_cast<double>(period == 0 ? 1 : period));
  // Rounding in the mean leaves a residue of order eps * |mean| on constant series.
  if (m.stdev > 1e-14 * std::max(1.0, std::abs(m.mean))) {
    m.sharpe = m.mean / m.stdev;
    m.sharpe_annual = *m.sharpe * ann;
  }
  if (down > 0.0) {
    m.sortino = m.mean / std::sqrt(down / n);
    m.sortino_annual = *m.sortino * ann;
  }
  double wealth = 1.0, peak = 1.0;
  for (double x : r) {
    wealth *= 1.0 + x;
    peak = std::max(peak, wealth);
    m.mdd = std::max(m.mdd, (peak - wealth) / peak);
  }
  m.wealth = wealth;
  return m;
}

/// What a strategy sees at a decision: prices up to and including the
/// decision row, and the current (drifted) holdings, empty before the first
/// allocation.
struct StrategyContext {
  const PricePanel& history;
  std::size_t decision_row;
  std::span<const double> holdings;
};

/// Returns 1..K weight rows. Row k is traded at the start of period k after
/// the decision; periods beyond the last row hold the drifted portfolio.
using Strategy = std::function<std::vector<std::vector<double>>(const StrategyContext&)>;

struct BacktestSpec {
  std::size_t period = 5;           // observations per rebalance period
  std::size_t horizon = 20;         // periods between decisions
  std::size_t first_row = 0;        // first decision row
  std::size_t last_row = SIZE_MAX;  // last usable price row (inclusive)
};

struct BacktestReport {
  std::vector<std::size_t> period_rows;   // start row of each period
  std::vector<std::vector<double>> weights;  // weights held over each period (after trading)
  std::vector<double> gross_returns;
  std::vector<double> net_returns;
  std::vector<double> turnover;
  double total_turnover = 0.0;
  double cost_drag = 0.0;  // sum of c * turnover
  Metrics stats;
};

inline void check_simplex(std::span<const double> w, std::size_t d, double tol = 1e-6) {
  if (w.size() != d)
    fail(ErrorCode::StrategyViolation, "weight row has " + std::to_string(w.size()) + " entries, expected " +
                                           std::to_string(d));
  double s = 0.0;
  for (double x : w) {
    if (!std::isfinite(x) || x < -tol) fail(ErrorCode::StrategyViolation, "negative or non-finite weight");
    s += x;
  }
  if (std::abs(s - 1.0) > tol) fail(ErrorCode::StrategyViolation, "weights sum to " + std::to_string(s));
}

/// Turnover is the L1 distance from the drifted previous weights (the first
/// allocation trades out of cash, turnover 1). Net period return is
/// w . r - c * turnover.
inline BacktestReport run_backtest(const Strategy& strategy, const PricePanel& panel, const BacktestSpec& spec,
                                   const CostModel& cost) {
  if (spec.period == 0 || spec.horizon == 0) fail(ErrorCode::InvalidConfig, "period and horizon must be >= 1");
  const std::size_t d = panel.cols();
  const std::size_t last = std::min(spec.last_row, panel.rows() - 1);
  const double c = cost.rate();
  BacktestReport rep;
  std::vector<double> holdings;
  std::vector<std::vector<double>> plan;
  for (std::size_t row = spec.first_row, step = 0; row + spec.period <= last; row += spec.period, ++step) {
    const std::size_t k = step % spec.horizon;
    if (k == 0) {
      const PricePanel history = panel.head(row + 1);
      plan = strategy(StrategyContext{history, row, holdings});
      if (plan.empty() || plan.size() > spec.horizon)
        fail(ErrorCode::StrategyViolation, "strategy returned " + std::to_string(plan.size()) + " rows");
      for (const auto& w : plan) check_simplex(w, d);
    }
    std::vector<double> w = holdings;
    double turnover = 0.0;
    if (k < plan.size()) {
      w = plan[k];
      if (holdings.empty()) {
        turnover = 1.0;
      } else {
        for (std::size_t j = 0; j < d; ++j) turnover += std::abs(w[j] - holdings[j]);
      }
    }
    double gross = 0.0;
    std::vector<double> r(d);
    for (std::size_t j = 0; j < d; ++j) {
      r[j] = panel.at(row + spec.period, j) / panel.at(row, j) - 1.0;
      gross += w[j] * r[j];
    }
    const double net = gross - c * turnover;
    rep.period_rows.push_back(row);
    rep.weights.push_back(w);
    rep.gross_returns.push_back(gross);
    rep.net_returns.push_back(net);
    rep.turnover.push_back(turnover);
    rep.total_turnover += turnover;
    rep.cost_drag += c * turnover;
    holdings.assign(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) holdings[j] = w[j] * (1.0 + r[j]) / (1.0 + gross);
  }
  if (rep.net_returns.size() >= 2) rep.stats = metrics(rep.net_returns, spec.period);
  return rep;
}

/// Decision schedule over the test partition: first decision after val_end
/// with a full feature window, last price row on or before test_end.
inline BacktestSpec test_spec(const PricePanel& panel, const SitConfig& cfg, const SplitDates& splits) {
  BacktestSpec spec;
  spec.period = cfg.period;
  spec.horizon = cfg.horizon;
  std::size_t first = panel.last_row_on_or_before(splits.val_end);
  first = first == panel.rows() ? 0 : first;
  spec.first_row = std::max(first, cfg.slices * cfg.period);
  const std::size_t last = panel.last_row_on_or_before(splits.test_end);
  if (last == panel.rows() || last < spec.first_row + cfg.period)
    fail(ErrorCode::InsufficientHistory, "test partition has no complete rebalance period");
  spec.last_row = last;
  return spec;
}

// ---------------------------------------------------------------------------
// Strategies

inline Strategy ewp_strategy() {
  return [](const StrategyContext& ctx) { return std::vector<std::vector<double>>{ewp(ctx.history.cols())}; };
}

/// Buy-and-hold: allocate equally once, then never trade.
inline Strategy buy_and_hold_strategy() {
  return [](const StrategyContext& ctx) {
    if (ctx.holdings.empty()) return std::vector<std::vector<double>>{ewp(ctx.history.cols())};
    return std::vector<std::vector<double>>{{ctx.holdings.begin(), ctx.holdings.end()}};
  };
}

/// Daily simple returns over the last `rows` price rows of the history.
inline std::vector<double> trailing_returns(const PricePanel& history, std::size_t rows) {
  const std::size_t d = history.cols();
  const std::size_t end = history.rows();
  const std::size_t start = end > rows + 1 ? end - rows - 1 : 0;
  std::vector<double> r;
  for (std::size_t t = start + 1; t < end; ++t)
    for (std::size_t j = 0; j < d; ++j) r.push_back(history.at(t, j) / history.at(t - 1, j) - 1.0);
  return r;
}

enum class Baseline { ewp, gmv, cvar, hrp };

inline std::string baseline_name(Baseline b) {
  switch (b) {
    case Baseline::ewp: return "ewp";
    case Baseline::gmv: return "gmv";
    case Baseline::cvar: return "cvar";
    case Baseline::hrp: return "hrp";
  }
  return "ewp";
}

inline Baseline parse_baseline(const std::string& name) {
  for (Baseline b : {Baseline::ewp, Baseline::gmv, Baseline::cvar, Baseline::hrp})
    if (baseline_name(b) == name) return b;
  fail(ErrorCode::InvalidConfig, "unknown baseline '" + name + "'");
}

/// Classical rule re-estimated on `estimation_rows` trailing daily returns at
/// every decision, then held (drifting) until the next one.
inline Strategy baseline_strategy(Baseline kind, std::size_t estimation_rows = 252, double alpha = 0.95) {
  return [=](const StrategyContext& ctx) -> std::vector<std::vector<double>> {
    const std::size_t d = ctx.history.cols();
    if (kind == Baseline::ewp) return {ewp(d)};
    const auto r = trailing_returns(ctx.history, estimation_rows);
    if (r.size() < 2 * d) return {ewp(d)};
    if (kind == Baseline::cvar) return {cvar_opt(r, d, alpha).weights};
    const auto cov = estimate_covariance(r, d);
    if (kind == Baseline::gmv) return {gmv(cov)};
    return {hrp(cov)};
  };
}

/// SIT allocation: features from the visible history, K weight rows.
inline Strategy sit_strategy(const SitParameters& params, const SitConfig& cfg, Variant variant = Variant::full) {
  return [&params, cfg, variant](const StrategyContext& ctx) {
    ForwardOptions opts;
    opts.variant = variant;
    const auto f = build_features(ctx.history, cfg, ctx.decision_row);
    const Allocation a = forward(f, params, cfg, opts);
    std::vector<std::vector<double>> rows(cfg.horizon);
    for (std::size_t k = 0; k < cfg.horizon; ++k)
      rows[k].assign(a.weights.value().begin() + static_cast<std::ptrdiff_t>(k * cfg.assets),
                     a.weights.value().begin() + static_cast<std::ptrdiff_t>((k + 1) * cfg.assets));
    return rows;
  };
}

/// Logits mu_hat [K x d] per decision row, computed once per trained model.
using LogitCache = std::map<std::size_t, std::vector<double>>;

inline LogitCache cache_logits(const PricePanel& panel, const BacktestSpec& spec, const SitParameters& params,
                               const SitConfig& cfg, Variant variant = Variant::full) {
  std::vector<std::size_t> rows;
  const std::size_t last = std::min(spec.last_row, panel.rows() - 1);
  for (std::size_t row = spec.first_row; row + spec.period <= last; row += spec.period * spec.horizon)
    rows.push_back(row);
  std::vector<std::vector<double>> logits(rows.size());
  parallel_for(rows.size(), [&](std::size_t i) {
    ForwardOptions opts;
    opts.variant = variant;
    const PricePanel history = panel.head(rows[i] + 1);
    const auto a = forward(build_features(history, cfg, rows[i]), params, cfg, opts);
    logits[i].assign(a.logits.value().begin(), a.logits.value().end());
  });
  LogitCache cache;
  for (std::size_t i = 0; i < rows.size(); ++i) cache[rows[i]] = std::move(logits[i]);
  return cache;
}

/// Re-softmaxes cached logits at temperature tau.
inline Strategy cached_logit_strategy(const LogitCache& cache, std::size_t assets, double tau) {
  if (!(tau > 0.0)) fail(ErrorCode::InvalidConfig, "tau must be > 0");
  return [&cache, assets, tau](const StrategyContext& ctx) {
    auto it = cache.find(ctx.decision_row);
    if (it == cache.end()) fail(ErrorCode::StrategyViolation, "no cached logits for row " + std::to_string(ctx.decision_row));
    const auto w = allocate(it->second, assets, tau);
    std::vector<std::vector<double>> rows(w.size() / assets);
    for (std::size_t k = 0; k < rows.size(); ++k)
      rows[k].assign(w.begin() + static_cast<std::ptrdiff_t>(k * assets),
                     w.begin() + static_cast<std::ptrdiff_t>((k + 1) * assets));
    return rows;
  };
}

/// Replays a recorded weight trajectory (one row per period) exactly.
inline Strategy fixed_trajectory_strategy(const BacktestReport& source, std::size_t horizon) {
  return [&source, horizon](const StrategyContext& ctx) {
    std::size_t first = 0;
    while (first < source.period_rows.size() && source.period_rows[first] != ctx.decision_row) ++first;
    if (first == source.period_rows.size()) fail(ErrorCode::StrategyViolation, "trajectory has no row for decision");
    std::vector<std::vector<double>> rows;
    for (std::size_t k = 0; k < horizon && first + k < source.weights.size(); ++k)
      rows.push_back(source.weights[first + k]);
    return rows;
  };
}

}  // namespace sigalloc
