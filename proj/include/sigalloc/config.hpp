#pragma once

// Run configuration: plain key=value text, '#' comments, unknown keys rejected.

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sigalloc/backtest.hpp"
#include "sigalloc/error.hpp"
#include "sigalloc/market.hpp"
#include "sigalloc/model.hpp"
#include "sigalloc/train.hpp"

namespace sigalloc {

enum class SweepMode { resoftmax, retrain };

struct RunConfig {
  SitConfig model;
  TrainOptions train;
  SplitDates splits;
  double train_frac = 0.0;  // > 0 selects split boundaries by fraction of the panel's dates
  double val_frac = 0.0;
  std::string data;     // CSV path
  std::string out_dir = "run";
  std::vector<std::uint64_t> seeds{0};
  std::size_t train_stride = 1;  // decision spacing of training scenarios, in periods
  double cost_bps = 0.0;
  std::size_t estimation_rows = 252;
  std::vector<double> sweep_taus{0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4};
  std::vector<double> sweep_costs{0.0, 5.0, 10.0};
  SweepMode sweep_mode = SweepMode::resoftmax;

  /// Applies one key=value assignment. Throws InvalidConfig for unknown keys
  /// and values outside the legal sets.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  /// Canonical key=value listing of every setting.
  std::string to_text() const;
  /// Split boundaries for a panel: fixed dates, or fractions when train_frac > 0.
  SplitDates resolve_splits(const PricePanel& panel) const {
    return train_frac > 0.0 ? split_dates_by_fraction(panel, train_frac, val_frac) : splits;
  }
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const std::string s = trim(text);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    fail(ErrorCode::InvalidConfig, "key '" + key + "': cannot parse '" + text + "'");
  return v;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, item));
  if (out.empty()) fail(ErrorCode::InvalidConfig, "key '" + key + "': empty list");
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    if constexpr (std::is_floating_point_v<T>)
      s += fmt_double(v[i]);
    else
      s += std::to_string(v[i]);
  }
  return s;
}

inline void require_in(const std::string& key, std::size_t v, std::initializer_list<std::size_t> legal) {
  if (std::find(legal.begin(), legal.end(), v) == legal.end()) {
    std::string s;
    for (auto x : legal) s += (s.empty() ? "" : ",") + std::to_string(x);
    fail(ErrorCode::InvalidConfig, key + "=" + std::to_string(v) + " not in {" + s + "}");
  }
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
  using detail::parse_number;
  using Z = std::size_t;
  static const std::map<std::string, std::function<void(RunConfig&, const std::string&, const std::string&)>> setters{
      {"assets", [](RunConfig& c, auto& k, auto& v) { c.model.assets = parse_number<Z>(k, v); }},
      {"slices", [](RunConfig& c, auto& k, auto& v) { c.model.slices = parse_number<Z>(k, v); }},
      {"horizon", [](RunConfig& c, auto& k, auto& v) { c.model.horizon = parse_number<Z>(k, v); }},
      {"period", [](RunConfig& c, auto& k, auto& v) { c.model.period = parse_number<Z>(k, v); }},
      {"slice_level", [](RunConfig& c, auto& k, auto& v) { c.model.slice_level = parse_number<int>(k, v); }},
      {"cross_level", [](RunConfig& c, auto& k, auto& v) { c.model.cross_level = parse_number<int>(k, v); }},
      {"calendar_dims", [](RunConfig& c, auto& k, auto& v) { c.model.calendar_dims = parse_number<Z>(k, v); }},
      {"d_model", [](RunConfig& c, auto& k, auto& v) { c.model.d_model = parse_number<Z>(k, v); }},
      {"d_ff", [](RunConfig& c, auto& k, auto& v) { c.model.d_ff = parse_number<Z>(k, v); }},
      {"n_layers", [](RunConfig& c, auto& k, auto& v) { c.model.n_layers = parse_number<Z>(k, v); }},
      {"n_heads", [](RunConfig& c, auto& k, auto& v) { c.model.n_heads = parse_number<Z>(k, v); }},
      {"d_beta", [](RunConfig& c, auto& k, auto& v) { c.model.d_beta = parse_number<Z>(k, v); }},
      {"hidden_c", [](RunConfig& c, auto& k, auto& v) { c.model.hidden_c = parse_number<Z>(k, v); }},
      {"tau", [](RunConfig& c, auto& k, auto& v) { c.model.tau = parse_number<double>(k, v); }},
      {"dropout", [](RunConfig& c, auto& k, auto& v) { c.model.dropout = parse_number<double>(k, v); }},
      {"cvar_alpha", [](RunConfig& c, auto& k, auto& v) { c.model.cvar_alpha = parse_number<double>(k, v); }},
      {"lr", [](RunConfig& c, auto& k, auto& v) { c.train.lr = parse_number<double>(k, v); }},
      {"beta1", [](RunConfig& c, auto& k, auto& v) { c.train.beta1 = parse_number<double>(k, v); }},
      {"beta2", [](RunConfig& c, auto& k, auto& v) { c.train.beta2 = parse_number<double>(k, v); }},
      {"adam_eps", [](RunConfig& c, auto& k, auto& v) { c.train.eps = parse_number<double>(k, v); }},
      {"batch_size", [](RunConfig& c, auto& k, auto& v) { c.train.batch_size = parse_number<Z>(k, v); }},
      {"max_epochs", [](RunConfig& c, auto& k, auto& v) { c.train.max_epochs = parse_number<Z>(k, v); }},
      {"patience", [](RunConfig& c, auto& k, auto& v) { c.train.patience = parse_number<Z>(k, v); }},
      {"chunk_size", [](RunConfig& c, auto& k, auto& v) { c.train.chunk_size = parse_number<Z>(k, v); }},
      {"variant", [](RunConfig& c, auto&, auto& v) { c.train.variant = parse_variant(detail::trim(v)); }},
      {"data", [](RunConfig& c, auto&, auto& v) { c.data = detail::trim(v); }},
      {"out_dir", [](RunConfig& c, auto&, auto& v) { c.out_dir = detail::trim(v); }},
      {"train_end", [](RunConfig& c, auto&, auto& v) { c.splits.train_end = parse_date(detail::trim(v)); }},
      {"val_end", [](RunConfig& c, auto&, auto& v) { c.splits.val_end = parse_date(detail::trim(v)); }},
      {"test_end", [](RunConfig& c, auto&, auto& v) { c.splits.test_end = parse_date(detail::trim(v)); }},
      {"train_frac", [](RunConfig& c, auto& k, auto& v) { c.train_frac = parse_number<double>(k, v); }},
      {"val_frac", [](RunConfig& c, auto& k, auto& v) { c.val_frac = parse_number<double>(k, v); }},
      {"seeds", [](RunConfig& c, auto& k, auto& v) { c.seeds = detail::parse_list<std::uint64_t>(k, v); }},
      {"train_stride", [](RunConfig& c, auto& k, auto& v) { c.train_stride = parse_number<Z>(k, v); }},
      {"cost_bps", [](RunConfig& c, auto& k, auto& v) { c.cost_bps = parse_number<double>(k, v); }},
      {"estimation_rows", [](RunConfig& c, auto& k, auto& v) { c.estimation_rows = parse_number<Z>(k, v); }},
      {"sweep_taus", [](RunConfig& c, auto& k, auto& v) { c.sweep_taus = detail::parse_list<double>(k, v); }},
      {"sweep_costs", [](RunConfig& c, auto& k, auto& v) { c.sweep_costs = detail::parse_list<double>(k, v); }},
      {"sweep_mode",
       [](RunConfig& c, auto& k, auto& v) {
         const auto s = detail::trim(v);
         if (s == "resoftmax")
           c.sweep_mode = SweepMode::resoftmax;
         else if (s == "retrain")
           c.sweep_mode = SweepMode::retrain;
         else
           fail(ErrorCode::InvalidConfig, k + ": expected resoftmax or retrain");
       }},
  };
  auto it = setters.find(detail::trim(key));
  if (it == setters.end()) fail(ErrorCode::InvalidConfig, "unknown key '" + key + "'");
  it->second(*this, it->first, value);
}

inline void RunConfig::validate() const {
  model.validate();
  detail::require_in("d_model", model.d_model, {8, 16, 32, 64});
  detail::require_in("d_ff", model.d_ff, {8, 16, 32, 64});
  detail::require_in("n_layers", model.n_layers, {1, 2});
  detail::require_in("n_heads", model.n_heads, {2, 4, 8});
  detail::require_in("hidden_c", model.hidden_c, {8, 16, 32});
  if (model.calendar_dims != kCalendarDims) fail(ErrorCode::InvalidConfig, "calendar_dims must be 6");
  if (!(train.lr >= 0.0)) fail(ErrorCode::InvalidConfig, "lr must be >= 0");
  if (train.batch_size == 0 || train.max_epochs == 0 || train.chunk_size == 0)
    fail(ErrorCode::InvalidConfig, "batch_size, max_epochs and chunk_size must be >= 1");
  if (train_stride == 0) fail(ErrorCode::InvalidConfig, "train_stride must be >= 1");
  if (!(cost_bps >= 0.0)) fail(ErrorCode::InvalidConfig, "cost_bps must be >= 0");
  if (!(splits.train_end < splits.val_end && splits.val_end < splits.test_end))
    fail(ErrorCode::InvalidConfig, "split dates must be increasing");
  if (train_frac < 0.0 || val_frac < 0.0 || (train_frac > 0.0 && (val_frac <= 0.0 || train_frac + val_frac >= 1.0)))
    fail(ErrorCode::InvalidConfig, "train_frac and val_frac must be positive with train_frac + val_frac < 1");
  if (seeds.empty()) fail(ErrorCode::InvalidConfig, "seeds must be non-empty");
  for (double t : sweep_taus)
    if (!(t > 0.0)) fail(ErrorCode::InvalidConfig, "sweep taus must be > 0");
  for (double c : sweep_costs)
    if (!(c >= 0.0)) fail(ErrorCode::InvalidConfig, "sweep costs must be >= 0");
}

inline std::string RunConfig::to_text() const {
  using detail::fmt_double;
  std::ostringstream o;
  o << "assets=" << model.assets << "\n"
    << "slices=" << model.slices << "\n"
    << "horizon=" << model.horizon << "\n"
    << "period=" << model.period << "\n"
    << "slice_level=" << model.slice_level << "\n"
    << "cross_level=" << model.cross_level << "\n"
    << "calendar_dims=" << model.calendar_dims << "\n"
    << "d_model=" << model.d_model << "\n"
    << "d_ff=" << model.d_ff << "\n"
    << "n_layers=" << model.n_layers << "\n"
    << "n_heads=" << model.n_heads << "\n"
    << "d_beta=" << model.d_beta << "\n"
    << "hidden_c=" << model.hidden_c << "\n"
    << "tau=" << fmt_double(model.tau) << "\n"
    << "dropout=" << fmt_double(model.dropout) << "\n"
    << "cvar_alpha=" << fmt_double(model.cvar_alpha) << "\n"
    << "lr=" << fmt_double(train.lr) << "\n"
    << "beta1=" << fmt_double(train.beta1) << "\n"
    << "beta2=" << fmt_double(train.beta2) << "\n"
    << "adam_eps=" << fmt_double(train.eps) << "\n"
    << "batch_size=" << train.batch_size << "\n"
    << "max_epochs=" << train.max_epochs << "\n"
    << "patience=" << train.patience << "\n"
    << "chunk_size=" << train.chunk_size << "\n"
    << "variant=" << variant_name(train.variant) << "\n"
    << "data=" << data << "\n"
    << "out_dir=" << out_dir << "\n"
    << "train_end=" << format_date(splits.train_end) << "\n"
    << "val_end=" << format_date(splits.val_end) << "\n"
    << "test_end=" << format_date(splits.test_end) << "\n"
    << "train_frac=" << fmt_double(train_frac) << "\n"
    << "val_frac=" << fmt_double(val_frac) << "\n"
    << "seeds=" << detail::join(seeds) << "\n"
    << "train_stride=" << train_stride << "\n"
    << "cost_bps=" << fmt_double(cost_bps) << "\n"
    << "estimation_rows=" << estimation_rows << "\n"
    << "sweep_taus=" << detail::join(sweep_taus) << "\n"
    << "sweep_costs=" << detail::join(sweep_costs) << "\n"
    << "sweep_mode=" << (sweep_mode == SweepMode::resoftmax ? "resoftmax" : "retrain") << "\n";
  return o.str();
}

/// Parses key=value lines into `cfg` (blank lines and '#' comments ignored).
inline void apply_config_text(RunConfig& cfg, std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (detail::trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorCode::InvalidConfig, "line " + std::to_string(line_no) + ": expected key=value");
    cfg.set(line.substr(0, eq), line.substr(eq + 1));
  }
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open config " + path);
  RunConfig cfg;
  apply_config_text(cfg, in);
  return cfg;
}

/// Applies a "key=value" override.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) fail(ErrorCode::InvalidConfig, "override '" + assignment + "' is not key=value");
  cfg.set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

}  // namespace sigalloc
