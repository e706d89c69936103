#pragma once

// Price panels, CSV ingestion, calendar features, scenario construction and a
// synthetic market with planted lead-lag pairs.

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sigalloc/error.hpp"
#include "sigalloc/model.hpp"
#include "sigalloc/parallel.hpp"
#include "sigalloc/rng.hpp"
#include "sigalloc/sigcore.hpp"

namespace sigalloc {

using Date = std::chrono::sys_days;

inline Date make_date(int y, unsigned m, unsigned d) {
  return Date{std::chrono::year{y} / std::chrono::month{m} / std::chrono::day{d}};
}

/// Parses YYYY-MM-DD; throws FormatError otherwise.
inline Date parse_date(std::string_view s) {
  auto bad = [&] { fail(ErrorCode::FormatError, "invalid ISO date '" + std::string(s) + "'"); };
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') bad();
  int y = 0;
  unsigned m = 0, d = 0;
  auto num = [&](std::size_t pos, std::size_t len, auto& out) {
    auto [ptr, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, out);
    if (ec != std::errc() || ptr != s.data() + pos + len) bad();
  };
  num(0, 4, y);
  num(5, 2, m);
  num(8, 2, d);
  const auto ymd = std::chrono::year{y} / std::chrono::month{m} / std::chrono::day{d};
  if (!ymd.ok()) bad();
  return Date{ymd};
}

inline std::string format_date(Date date) {
  const std::chrono::year_month_day ymd{date};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

inline constexpr std::size_t kCalendarDims = 6;

/// (sin, cos) pairs for day of week (Monday = 0, period 7), day of month
/// (0-based, period 31) and month (0-based, period 12).
inline std::array<double, kCalendarDims> calendar_features(Date date) {
  const std::chrono::year_month_day ymd{date};
  const std::chrono::weekday wd{date};
  const double dow = static_cast<double>((wd.c_encoding() + 6) % 7);
  const double dom = static_cast<double>(static_cast<unsigned>(ymd.day()) - 1);
  const double mon = static_cast<double>(static_cast<unsigned>(ymd.month()) - 1);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  return {std::sin(two_pi * dow / 7.0),  std::cos(two_pi * dow / 7.0),  std::sin(two_pi * dom / 31.0),
          std::cos(two_pi * dom / 31.0), std::sin(two_pi * mon / 12.0), std::cos(two_pi * mon / 12.0)};
}

struct PricePanel {
  std::vector<Date> dates;
  std::vector<std::string> assets;
  std::vector<double> prices;  // rows() x cols(), row-major

  std::size_t rows() const { return dates.size(); }
  std::size_t cols() const { return assets.size(); }
  double at(std::size_t t, std::size_t j) const { return prices[t * cols() + j]; }

  /// First `n` rows only.
  PricePanel head(std::size_t n) const {
    n = std::min(n, rows());
    PricePanel out;
    out.assets = assets;
    out.dates.assign(dates.begin(), dates.begin() + static_cast<std::ptrdiff_t>(n));
    out.prices.assign(prices.begin(), prices.begin() + static_cast<std::ptrdiff_t>(n * cols()));
    return out;
  }

  std::size_t asset_index(const std::string& id) const {
    auto it = std::find(assets.begin(), assets.end(), id);
    if (it == assets.end()) fail(ErrorCode::InvalidConfig, "unknown asset '" + id + "'");
    return static_cast<std::size_t>(it - assets.begin());
  }

  /// Index of the last row dated on or before `date`, or rows() when none is.
  std::size_t last_row_on_or_before(Date date) const {
    auto it = std::upper_bound(dates.begin(), dates.end(), date);
    if (it == dates.begin()) return rows();
    return static_cast<std::size_t>(it - dates.begin()) - 1;
  }

  void validate() const {
    if (assets.empty()) fail(ErrorCode::FormatError, "panel has no assets");
    if (prices.size() != rows() * cols()) fail(ErrorCode::FormatError, "price matrix size mismatch");
    for (std::size_t t = 1; t < rows(); ++t)
      if (!(dates[t] > dates[t - 1])) fail(ErrorCode::FormatError, "dates must be strictly increasing");
    for (double p : prices)
      if (!(p > 0.0) || !std::isfinite(p)) fail(ErrorCode::FormatError, "prices must be positive and finite");
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ls(line);
  while (std::getline(ls, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace detail

/// Reads "date,ASSET1,ASSET2,..." with ISO dates. Rows with missing,
/// non-numeric or non-positive prices are rejected and reported by line
/// number. Output rows are sorted by date.
inline PricePanel read_csv(std::istream& in, std::size_t min_rows = 0) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::FormatError, "empty CSV");
  auto header = detail::split_csv_line(line);
  if (header.size() < 2 || header[0] != "date")
    fail(ErrorCode::FormatError, "header must be 'date,ASSET1,...'");
  PricePanel panel;
  panel.assets.assign(header.begin() + 1, header.end());
  {
    std::set<std::string> unique(panel.assets.begin(), panel.assets.end());
    if (unique.size() != panel.assets.size()) fail(ErrorCode::FormatError, "duplicate asset ids in header");
  }
  const std::size_t d = panel.assets.size();
  std::vector<std::pair<Date, std::vector<double>>> rows;
  std::vector<std::string> rejected;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != d + 1) {
      rejected.push_back("line " + std::to_string(line_no) + ": expected " + std::to_string(d + 1) + " fields");
      continue;
    }
    Date date;
    try {
      date = parse_date(cells[0]);
    } catch (const Error&) {
      rejected.push_back("line " + std::to_string(line_no) + ": bad date '" + cells[0] + "'");
      continue;
    }
    std::vector<double> px(d);
    bool ok = true;
    for (std::size_t j = 0; j < d && ok; ++j) {
      const std::string& c = cells[j + 1];
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (c.empty() || ec != std::errc() || ptr != c.data() + c.size()) {
        rejected.push_back("line " + std::to_string(line_no) + ": missing or non-numeric price for " +
                           panel.assets[j]);
        ok = false;
      } else if (!(v > 0.0) || !std::isfinite(v)) {
        rejected.push_back("line " + std::to_string(line_no) + ": non-positive price for " + panel.assets[j]);
        ok = false;
      }
      px[j] = v;
    }
    if (ok) rows.emplace_back(date, std::move(px));
  }
  if (!rejected.empty()) {
    std::string msg = "rejected rows:";
    for (const auto& r : rejected) msg += "\n  " + r;
    fail(ErrorCode::FormatError, msg);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].first == rows[i - 1].first)
      fail(ErrorCode::FormatError, "duplicate date " + format_date(rows[i].first));
  for (auto& [date, px] : rows) {
    panel.dates.push_back(date);
    panel.prices.insert(panel.prices.end(), px.begin(), px.end());
  }
  if (panel.rows() < min_rows)
    fail(ErrorCode::InsufficientHistory,
         std::to_string(panel.rows()) + " rows, need at least " + std::to_string(min_rows));
  return panel;
}

inline PricePanel ingest_csv(const std::string& path, std::size_t min_rows = 0) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  return read_csv(in, min_rows);
}

inline void write_csv(std::ostream& out, const PricePanel& panel) {
  out << "date";
  for (const auto& a : panel.assets) out << "," << a;
  out << "\n";
  char buf[32];
  for (std::size_t t = 0; t < panel.rows(); ++t) {
    out << format_date(panel.dates[t]);
    for (std::size_t j = 0; j < panel.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", panel.at(t, j));
      out << "," << buf;
    }
    out << "\n";
  }
}

inline void write_csv(const std::string& path, const PricePanel& panel) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot open " + path + " for writing");
  write_csv(out, panel);
}

/// One decision time: lookback features plus the K realized future returns.
struct Scenario {
  ScenarioFeatures features;
  std::vector<double> returns;  // K x d simple returns, one row per rebalance period
  std::size_t decision_row = 0;
  Date decision_date{};
  Date last_return_date{};
};

/// Minimum panel length for a single scenario.
inline std::size_t min_panel_rows(const SitConfig& cfg) { return cfg.window_rows() + cfg.horizon * cfg.period; }

/// Features at `decision_row`, reading only rows [decision_row - H P, decision_row].
inline ScenarioFeatures build_features(const PricePanel& panel, const SitConfig& cfg, std::size_t decision_row) {
  const std::size_t H = cfg.slices, P = cfg.period, d = panel.cols();
  if (d != cfg.assets) fail(ErrorCode::ShapeError, "panel has " + std::to_string(d) + " assets, config " +
                                                       std::to_string(cfg.assets));
  if (decision_row + 1 < cfg.window_rows() || decision_row >= panel.rows())
    fail(ErrorCode::InsufficientHistory, "not enough history before row " + std::to_string(decision_row));
  const std::size_t first = decision_row - H * P;
  const std::size_t n = H * P + 1;
  // Log prices translated to start at zero and scaled to unit realised
  // quadratic variation over the window, one column per asset.
  std::vector<std::vector<double>> lp(d, std::vector<double>(n));
  for (std::size_t j = 0; j < d; ++j) {
    const double base = std::log(panel.at(first, j));
    for (std::size_t r = 0; r < n; ++r) lp[j][r] = std::log(panel.at(first + r, j)) - base;
    double qv = 0.0;
    for (std::size_t r = 1; r < n; ++r) qv += (lp[j][r] - lp[j][r - 1]) * (lp[j][r] - lp[j][r - 1]);
    if (qv > 0.0) {
      const double inv = 1.0 / std::sqrt(qv);
      for (double& x : lp[j]) x *= inv;
    }
  }
  ScenarioFeatures f;
  const std::size_t ds = cfg.slice_sig_dim(), dc = cfg.cross_sig_dim();
  f.slice_sigs.resize(H * d * ds);
  for (std::size_t k = 0; k < H; ++k)
    for (std::size_t j = 0; j < d; ++j) {
      std::span<const double> seg(lp[j].data() + k * P, P + 1);
      const auto sig = signature(time_augmented(seg), cfg.slice_level);
      std::copy(sig.coords().begin(), sig.coords().end(), f.slice_sigs.begin() + static_cast<std::ptrdiff_t>((k * d + j) * ds));
    }
  std::vector<double> grid(n);
  for (std::size_t r = 0; r < n; ++r) grid[r] = static_cast<double>(r) / static_cast<double>(n - 1);
  std::vector<PiecewisePath> paths;
  paths.reserve(d);
  for (std::size_t j = 0; j < d; ++j) paths.push_back(PiecewisePath::scalar(grid, lp[j]));
  f.cross_sigs.resize(d * d * dc);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t l = 0; l < d; ++l) {
      const auto sig = cross_signature(paths[j], paths[l], cfg.cross_level);
      std::copy(sig.coords().begin(), sig.coords().end(), f.cross_sigs.begin() + static_cast<std::ptrdiff_t>((j * d + l) * dc));
    }
  f.calendar.resize(H * cfg.calendar_dims);
  for (std::size_t k = 0; k < H; ++k) {
    const auto cal = calendar_features(panel.dates[first + (k + 1) * P]);
    for (std::size_t c = 0; c < cfg.calendar_dims && c < kCalendarDims; ++c) f.calendar[k * cfg.calendar_dims + c] = cal[c];
  }
  return f;
}

/// Simple returns over the K rebalance periods following `decision_row`.
inline std::vector<double> realized_returns(const PricePanel& panel, const SitConfig& cfg, std::size_t decision_row) {
  const std::size_t P = cfg.period, d = panel.cols();
  if (decision_row + cfg.horizon * P >= panel.rows())
    fail(ErrorCode::InsufficientHistory, "no K-period future after row " + std::to_string(decision_row));
  std::vector<double> r(cfg.horizon * d);
  for (std::size_t k = 0; k < cfg.horizon; ++k)
    for (std::size_t j = 0; j < d; ++j)
      r[k * d + j] = panel.at(decision_row + (k + 1) * P, j) / panel.at(decision_row + k * P, j) - 1.0;
  return r;
}

inline Scenario build_scenario(const PricePanel& panel, const SitConfig& cfg, std::size_t decision_row) {
  Scenario s;
  s.features = build_features(panel, cfg, decision_row);
  s.returns = realized_returns(panel, cfg, decision_row);
  s.decision_row = decision_row;
  s.decision_date = panel.dates[decision_row];
  s.last_return_date = panel.dates[decision_row + cfg.horizon * cfg.period];
  return s;
}

/// Decision rows H P, H P + stride P, ... that leave room for K future periods.
/// `stride` is measured in rebalance periods.
inline std::vector<std::size_t> decision_rows(const PricePanel& panel, const SitConfig& cfg, std::size_t stride) {
  if (stride == 0) fail(ErrorCode::InvalidConfig, "stride must be >= 1");
  if (panel.rows() < min_panel_rows(cfg))
    fail(ErrorCode::InsufficientHistory, "panel has " + std::to_string(panel.rows()) + " rows, need " +
                                             std::to_string(min_panel_rows(cfg)));
  std::vector<std::size_t> rows;
  for (std::size_t i = cfg.slices * cfg.period; i + cfg.horizon * cfg.period < panel.rows(); i += stride * cfg.period)
    rows.push_back(i);
  return rows;
}

inline std::vector<Scenario> build_scenarios(const PricePanel& panel, const SitConfig& cfg, std::size_t stride) {
  const auto rows = decision_rows(panel, cfg, stride);
  std::vector<Scenario> out(rows.size());
  parallel_for(rows.size(), [&](std::size_t i) { out[i] = build_scenario(panel, cfg, rows[i]); });
  return out;
}

struct SplitDates {
  Date train_end = make_date(2016, 12, 31);
  Date val_end = make_date(2019, 12, 31);
  Date test_end = make_date(2024, 12, 27);
};

/// Split boundaries at fractions of the panel's date range.
inline SplitDates split_dates_by_fraction(const PricePanel& panel, double train_frac, double val_frac) {
  if (panel.rows() < 3) fail(ErrorCode::InsufficientHistory, "panel too short to split");
  auto at = [&](double f) {
    auto idx = static_cast<std::size_t>(f * static_cast<double>(panel.rows() - 1));
    return panel.dates[std::min(idx, panel.rows() - 1)];
  };
  return {at(train_frac), at(train_frac + val_frac), panel.dates.back()};
}

struct ScenarioSplit {
  std::vector<Scenario> train, val, test;
};

/// Assigns each scenario to the partition holding both its decision date and
/// its last realized-return date; scenarios straddling a boundary are dropped,
/// so no realized-return date is shared across partitions.
inline ScenarioSplit split_scenarios(std::vector<Scenario> scenarios, const SplitDates& dates) {
  ScenarioSplit out;
  for (auto& s : scenarios) {
    if (s.last_return_date <= dates.train_end)
      out.train.push_back(std::move(s));
    else if (s.decision_date >= dates.train_end && s.last_return_date <= dates.val_end)
      out.val.push_back(std::move(s));
    else if (s.decision_date >= dates.val_end && s.last_return_date <= dates.test_end)
      out.test.push_back(std::move(s));
  }
  return out;
}

struct SynthSpec {
  std::size_t assets = 8;
  std::size_t rows = 3000;
  std::vector<std::pair<std::size_t, std::size_t>> leadlag_pairs;  // (leader, lagger)
  std::size_t lag = 1;
  double noise_sigma = 0.0;
  double drift = 2e-4;        // daily log drift
  double volatility = 0.01;   // daily log volatility
  std::uint64_t seed = 0;
  Date start = make_date(2000, 1, 3);
};

/// Geometric Brownian base paths on consecutive weekdays. For each planted
/// pair the lagger's log-return at t is the leader's at t - lag plus
/// N(0, noise_sigma^2).
inline PricePanel synth_market(const SynthSpec& spec) {
  if (spec.assets == 0 || spec.rows < 2) fail(ErrorCode::InvalidConfig, "synthetic market needs d >= 1 and T >= 2");
  if (spec.lag == 0) fail(ErrorCode::InvalidConfig, "lag must be >= 1");
  std::vector<int> role(spec.assets, -1);
  for (std::size_t p = 0; p < spec.leadlag_pairs.size(); ++p) {
    auto [lead, lagger] = spec.leadlag_pairs[p];
    if (lead >= spec.assets || lagger >= spec.assets || lead == lagger)
      fail(ErrorCode::InvalidConfig, "lead-lag pair out of range or self-paired");
    if (role[lead] != -1 || role[lagger] != -1)
      fail(ErrorCode::InvalidConfig, "lead-lag pairs must be disjoint");
    role[lead] = role[lagger] = static_cast<int>(p);
  }
  const std::size_t T = spec.rows, d = spec.assets;
  Rng rng(spec.seed);
  std::vector<double> base(T * d), noise(T * d);
  const double mu = spec.drift - 0.5 * spec.volatility * spec.volatility;
  for (double& x : base) x = rng.normal(mu, spec.volatility);
  for (double& x : noise) x = rng.normal();
  std::vector<double> logret = base;
  for (auto [lead, lagger] : spec.leadlag_pairs)
    for (std::size_t t = 1; t < T; ++t)
      if (t >= 1 + spec.lag)
        logret[t * d + lagger] = base[(t - spec.lag) * d + lead] + spec.noise_sigma * noise[t * d + lagger];
  PricePanel panel;
  for (std::size_t j = 0; j < d; ++j) panel.assets.push_back("A" + std::to_string(j));
  panel.prices.resize(T * d);
  Date date = spec.start;
  auto is_weekend = [](Date x) {
    const auto c = std::chrono::weekday{x}.c_encoding();
    return c == 0 || c == 6;
  };
  while (is_weekend(date)) date += std::chrono::days{1};
  for (std::size_t t = 0; t < T; ++t) {
    panel.dates.push_back(date);
    do date += std::chrono::days{1};
    while (is_weekend(date));
    for (std::size_t j = 0; j < d; ++j)
      panel.prices[t * d + j] = t == 0 ? 100.0 : panel.prices[(t - 1) * d + j] * std::exp(logret[t * d + j]);
  }
  return panel;
}

/// Log prices of asset j over rows [first, first + n) as a path on a unit time grid.
inline PiecewisePath log_price_path(const PricePanel& panel, std::size_t asset, std::size_t first, std::size_t n) {
  std::vector<double> times(n), values(n);
  for (std::size_t r = 0; r < n; ++r) {
    times[r] = static_cast<double>(r) / static_cast<double>(n - 1);
    values[r] = std::log(panel.at(first + r, asset));
  }
  return PiecewisePath::scalar(std::move(times), std::move(values));
}

}  // namespace sigalloc
