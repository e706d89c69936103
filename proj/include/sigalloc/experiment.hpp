#pragma once

// End-to-end runs: scenario preparation, training, module-drop ablations and
// the temperature/cost sweep, plus their report formats.

#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sigalloc/backtest.hpp"
#include "sigalloc/config.hpp"
#include "sigalloc/market.hpp"
#include "sigalloc/train.hpp"

namespace sigalloc {

struct Dataset {
  SitConfig model;  // with assets set from the panel
  SplitDates splits;
  ScenarioSplit split;
  BacktestSpec test;
};

inline Dataset prepare_dataset(const PricePanel& panel, const RunConfig& cfg) {
  Dataset ds;
  ds.model = cfg.model;
  ds.model.assets = panel.cols();
  ds.model.validate();
  ds.splits = cfg.resolve_splits(panel);
  ds.split = split_scenarios(build_scenarios(panel, ds.model, cfg.train_stride), ds.splits);
  ds.test = test_spec(panel, ds.model, ds.splits);
  return ds;
}

inline TrainResult train_on(const Dataset& ds, const RunConfig& cfg, std::uint64_t seed, Variant variant,
                            std::ostream* log = nullptr) {
  TrainOptions opts = cfg.train;
  opts.variant = variant;
  return train(ds.split.train, ds.split.val, ds.model, seed, opts, log);
}

struct AblationRun {
  std::uint64_t seed = 0;
  Variant variant = Variant::full;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  double gamma = 1.0;
  BacktestReport report;
};

/// Trains `variant` once per seed with all other settings held fixed and
/// backtests each model over the test partition.
inline std::vector<AblationRun> ablate(Variant variant, const PricePanel& panel, const RunConfig& cfg,
                                       const std::vector<std::uint64_t>& seeds, const Dataset* prepared = nullptr) {
  const Dataset ds = prepared ? *prepared : prepare_dataset(panel, cfg);
  std::vector<AblationRun> runs;
  for (std::uint64_t seed : seeds) {
    const TrainResult tr = train_on(ds, cfg, seed, variant);
    AblationRun run;
    run.seed = seed;
    run.variant = variant;
    run.best_epoch = tr.best_epoch;
    run.best_val = tr.best_val;
    run.gamma = variant == Variant::no_gate ? 1.0 : tr.params.gate();
    run.report = run_backtest(sit_strategy(tr.params, ds.model, variant), panel, ds.test, CostModel{cfg.cost_bps});
    runs.push_back(std::move(run));
  }
  return runs;
}

struct SweepCell {
  double tau = 1.0;
  double cost_bps = 0.0;
  double mean_sharpe = 0.0;
  double std_sharpe = 0.0;
  double mean_wealth = 0.0;
  std::size_t defined = 0;  // seeds with a defined Sharpe ratio
  std::vector<double> sharpes;
  std::vector<double> wealths;
};

namespace detail {

inline void summarise(SweepCell& cell) {
  double s = 0.0, w = 0.0;
  for (double x : cell.sharpes) s += x;
  for (double x : cell.wealths) w += x;
  cell.defined = cell.sharpes.size();
  cell.mean_sharpe = cell.defined ? s / static_cast<double>(cell.defined) : std::nan("");
  double ss = 0.0;
  for (double x : cell.sharpes) ss += (x - cell.mean_sharpe) * (x - cell.mean_sharpe);
  cell.std_sharpe = cell.defined ? std::sqrt(ss / static_cast<double>(cell.defined)) : std::nan("");
  cell.mean_wealth = cell.wealths.empty() ? std::nan("") : w / static_cast<double>(cell.wealths.size());
}

}  // namespace detail

/// Temperature x cost grid of mean and (population) standard deviation of the
/// per-period test Sharpe across seeds. In resoftmax mode each seed trains
/// once and the stored logits are re-softmaxed per tau; in retrain mode a
/// model is trained per (tau, seed). Cells are ordered tau-major.
inline std::vector<SweepCell> sweep(const PricePanel& panel, const RunConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                    const Dataset* prepared = nullptr) {
  if (cfg.sweep_taus.empty() || cfg.sweep_costs.empty()) fail(ErrorCode::InvalidConfig, "sweep grids must be non-empty");
  const Dataset ds = prepared ? *prepared : prepare_dataset(panel, cfg);
  const std::size_t nt = cfg.sweep_taus.size(), nc = cfg.sweep_costs.size(), ns = seeds.size();
  // logits[t][s]: cached logits used at temperature t for seed s.
  std::vector<std::vector<LogitCache>> logits(nt, std::vector<LogitCache>(ns));
  for (std::size_t s = 0; s < ns; ++s) {
    if (cfg.sweep_mode == SweepMode::resoftmax) {
      const TrainResult tr = train_on(ds, cfg, seeds[s], cfg.train.variant);
      const LogitCache cache = cache_logits(panel, ds.test, tr.params, ds.model, cfg.train.variant);
      for (std::size_t t = 0; t < nt; ++t) logits[t][s] = cache;
    } else {
      for (std::size_t t = 0; t < nt; ++t) {
        Dataset local = ds;
        local.model.tau = cfg.sweep_taus[t];
        const TrainResult tr = train_on(local, cfg, seeds[s], cfg.train.variant);
        logits[t][s] = cache_logits(panel, ds.test, tr.params, local.model, cfg.train.variant);
      }
    }
  }
  std::vector<SweepCell> cells(nt * nc);
  parallel_for(nt * nc, [&](std::size_t idx) {
    const std::size_t t = idx / nc, c = idx % nc;
    SweepCell& cell = cells[idx];
    cell.tau = cfg.sweep_taus[t];
    cell.cost_bps = cfg.sweep_costs[c];
    for (std::size_t s = 0; s < ns; ++s) {
      const auto rep = run_backtest(cached_logit_strategy(logits[t][s], ds.model.assets, cell.tau), panel, ds.test,
                                    CostModel{cell.cost_bps});
      if (rep.stats.sharpe) cell.sharpes.push_back(*rep.stats.sharpe);
      cell.wealths.push_back(rep.stats.wealth);
    }
    detail::summarise(cell);
  });
  return cells;
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepCell>& cells) {
  out << "tau,cost_bps,mean_sharpe,std_sharpe,mean_wealth,seeds_defined\n";
  for (const auto& c : cells)
    out << detail::fmt_double(c.tau) << "," << detail::fmt_double(c.cost_bps) << "," << detail::fmt_double(c.mean_sharpe)
        << "," << detail::fmt_double(c.std_sharpe) << "," << detail::fmt_double(c.mean_wealth) << "," << c.defined
        << "\n";
}

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

/// One JSON object per backtest run.
inline nlohmann::json report_json(const std::string& strategy, std::uint64_t seed, double cost_bps,
                                  const BacktestReport& r, const std::vector<Date>& dates) {
  nlohmann::json j;
  j["strategy"] = strategy;
  j["seed"] = seed;
  j["cost_bps"] = cost_bps;
  j["periods"] = r.net_returns.size();
  j["sharpe"] = optional_json(r.stats.sharpe);
  j["sortino"] = optional_json(r.stats.sortino);
  j["sharpe_annual"] = optional_json(r.stats.sharpe_annual);
  j["sortino_annual"] = optional_json(r.stats.sortino_annual);
  j["mdd"] = r.stats.mdd;
  j["final_wealth"] = r.stats.wealth;
  j["total_turnover"] = r.total_turnover;
  j["cost_drag"] = r.cost_drag;
  j["net_returns"] = r.net_returns;
  j["turnover"] = r.turnover;
  std::vector<std::string> period_dates;
  for (std::size_t row : r.period_rows) period_dates.push_back(format_date(dates[row]));
  j["period_start"] = period_dates;
  j["weights"] = r.weights;
  return j;
}

}  // namespace sigalloc
