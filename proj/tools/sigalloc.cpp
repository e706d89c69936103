// sigalloc command-line driver.
//
// Exit codes: 0 success, 1 runtime failure (the error name is printed),
// 2 usage error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sigalloc/sigalloc.hpp"

namespace fs = std::filesystem;
using namespace sigalloc;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string data;
  std::string out;
  std::size_t threads = 0;
};

void add_common(CLI::App* cmd, Common& c, bool needs_data = true) {
  cmd->add_option("--config", c.config, "key=value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "override a configuration key (key=value), repeatable");
  if (needs_data) cmd->add_option("--data", c.data, "price CSV (date,ASSET1,...)");
  cmd->add_option("--out", c.out, "run directory");
  cmd->add_option("--threads", c.threads, "worker threads (overrides SIGALLOC_THREADS)");
}

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  for (const auto& o : c.overrides) apply_override(cfg, o);
  if (!c.data.empty()) cfg.data = c.data;
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (c.threads > 0) setenv("SIGALLOC_THREADS", std::to_string(c.threads).c_str(), 1);
  return cfg;
}

fs::path prepare_run_dir(const RunConfig& cfg) {
  fs::path dir(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create run directory " + dir.string() + ": " + ec.message());
  std::ofstream out(dir / "resolved_config.txt");
  if (!out) fail(ErrorCode::IoError, "cannot write " + (dir / "resolved_config.txt").string());
  out << cfg.to_text();
  return dir;
}

PricePanel load_panel(const RunConfig& cfg) {
  if (cfg.data.empty()) fail(ErrorCode::InvalidConfig, "no data file given (--data or data=)");
  return ingest_csv(cfg.data, cfg.model.slices * cfg.model.period + cfg.model.horizon);
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) fail(ErrorCode::IoError, "cannot write " + p.string());
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> parse_pairs(const std::string& text) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (text.empty()) return pairs;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) fail(ErrorCode::InvalidConfig, "pair '" + item + "' is not leader:lagger");
    pairs.emplace_back(std::stoul(item.substr(0, colon)), std::stoul(item.substr(colon + 1)));
  }
  return pairs;
}

// ---------------------------------------------------------------------------

int cmd_sig(const std::string& data, const std::string& pair, int level, std::size_t first, std::size_t rows) {
  const PricePanel panel = ingest_csv(data, 2);
  if (first >= panel.rows()) fail(ErrorCode::InvalidConfig, "start row beyond panel");
  const std::size_t n = rows == 0 ? panel.rows() - first : std::min(rows, panel.rows() - first);
  if (n < 2) fail(ErrorCode::InsufficientHistory, "need at least two rows");
  if (!pair.empty()) {
    const auto comma = pair.find(',');
    if (comma == std::string::npos) fail(ErrorCode::InvalidConfig, "--pair expects A,B");
    const std::size_t a = panel.asset_index(pair.substr(0, comma));
    const std::size_t b = panel.asset_index(pair.substr(comma + 1));
    const auto pa = log_price_path(panel, a, first, n), pb = log_price_path(panel, b, first, n);
    const auto sig = cross_signature(pa, pb, level);
    std::printf("pair\t%s\t%s\n", panel.assets[a].c_str(), panel.assets[b].c_str());
    std::printf("rows\t%zu\n", n);
    std::printf("signed_area\t%.12g\n", signed_area(sig));
    for (int k = 1; k <= level; ++k) {
      std::printf("level%d", k);
      for (double x : sig.level_block(k)) std::printf("\t%.12g", x);
      std::printf("\n");
    }
    return 0;
  }
  // Signed-area matrix: entry (j, l) is positive when j leads l.
  std::vector<PiecewisePath> paths;
  for (std::size_t j = 0; j < panel.cols(); ++j) paths.push_back(log_price_path(panel, j, first, n));
  std::printf("leader\\lagger");
  for (const auto& a : panel.assets) std::printf("\t%s", a.c_str());
  std::printf("\n");
  for (std::size_t j = 0; j < panel.cols(); ++j) {
    std::printf("%s", panel.assets[j].c_str());
    for (std::size_t l = 0; l < panel.cols(); ++l) std::printf("\t%.6g", signed_area(paths[j], paths[l]));
    std::printf("\n");
  }
  return 0;
}

int cmd_synth(const std::string& out_csv, SynthSpec spec, const std::string& pairs) {
  spec.leadlag_pairs = parse_pairs(pairs);
  const PricePanel panel = synth_market(spec);
  write_csv(out_csv, panel);
  std::printf("wrote %zu rows x %zu assets to %s\n", panel.rows(), panel.cols(), out_csv.c_str());
  return 0;
}

int cmd_train(const Common& common, std::uint64_t seed) {
  RunConfig cfg = resolve_config(common);
  cfg.validate();
  const PricePanel panel = load_panel(cfg);
  cfg.model.assets = panel.cols();
  const fs::path dir = prepare_run_dir(cfg);
  const Dataset ds = prepare_dataset(panel, cfg);
  std::printf("scenarios: train %zu, val %zu, test %zu\n", ds.split.train.size(), ds.split.val.size(),
              ds.split.test.size());
  auto log = open_out(dir / ("train_log_seed" + std::to_string(seed) + ".tsv"));
  log << "epoch\ttrain_objective\tval_objective\tgamma\tseconds\n";
  const TrainResult tr = train_on(ds, cfg, seed, cfg.train.variant, &log);
  const fs::path ckpt = dir / ("checkpoint_seed" + std::to_string(seed) + ".bin");
  save_checkpoint(ckpt.string(), tr.params);
  std::printf("best epoch %zu, val objective %.10g, gamma %.6g\n", tr.best_epoch, tr.best_val, tr.params.gate());
  std::printf("checkpoint %s\n", ckpt.string().c_str());
  return 0;
}

int cmd_backtest(const Common& common, const std::string& checkpoint, const std::string& strategies, std::uint64_t seed) {
  RunConfig cfg = resolve_config(common);
  cfg.validate();
  const PricePanel panel = load_panel(cfg);
  cfg.model.assets = panel.cols();
  const fs::path dir = prepare_run_dir(cfg);
  const SplitDates splits = cfg.resolve_splits(panel);
  const BacktestSpec spec = test_spec(panel, cfg.model, splits);
  auto out = open_out(dir / "backtest.jsonl");
  std::vector<std::string> names;
  {
    std::stringstream ss(strategies);
    std::string s;
    while (std::getline(ss, s, ',')) names.push_back(s);
  }
  if (!checkpoint.empty()) names.push_back("sit");
  SitParameters params;
  if (!checkpoint.empty()) {
    params = load_checkpoint(checkpoint);
    check_compatible(params, cfg.model);
  }
  for (const auto& name : names) {
    Strategy strat = name == "sit" ? sit_strategy(params, cfg.model, cfg.train.variant)
                                   : baseline_strategy(parse_baseline(name), cfg.estimation_rows, cfg.model.cvar_alpha);
    const auto rep = run_backtest(strat, panel, spec, CostModel{cfg.cost_bps});
    out << report_json(name, seed, cfg.cost_bps, rep, panel.dates).dump() << "\n";
    std::printf("%-6s sharpe %10.6g  sortino %10.6g  mdd %8.5f  wealth %9.5f  turnover %8.4f\n", name.c_str(),
                rep.stats.sharpe.value_or(std::nan("")), rep.stats.sortino.value_or(std::nan("")), rep.stats.mdd,
                rep.stats.wealth, rep.total_turnover);
  }
  return 0;
}

int cmd_ablate(const Common& common, const std::vector<std::uint64_t>& seeds, const std::string& variants) {
  RunConfig cfg = resolve_config(common);
  cfg.validate();
  const PricePanel panel = load_panel(cfg);
  cfg.model.assets = panel.cols();
  std::vector<Variant> list;
  if (variants == "all") {
    list = {Variant::full, Variant::no_cvar, Variant::no_asset_attn, Variant::no_bias, Variant::no_gate};
  } else {
    std::stringstream ss(variants);
    std::string v;
    while (std::getline(ss, v, ',')) list.push_back(parse_variant(v));
  }
  const fs::path dir = prepare_run_dir(cfg);
  const Dataset ds = prepare_dataset(panel, cfg);
  auto out = open_out(dir / "ablation.jsonl");
  for (Variant v : list) {
    for (const auto& run : ablate(v, panel, cfg, seeds, &ds)) {
      auto j = report_json(variant_name(v), run.seed, cfg.cost_bps, run.report, panel.dates);
      j["variant"] = variant_name(v);
      j["best_epoch"] = run.best_epoch;
      j["best_val"] = run.best_val;
      j["gamma"] = run.gamma;
      out << j.dump() << "\n";
      std::printf("%-14s seed %llu  sharpe %10.6g  wealth %9.5f  gamma %.5g\n", variant_name(v).c_str(),
                  static_cast<unsigned long long>(run.seed), run.report.stats.sharpe.value_or(std::nan("")),
                  run.report.stats.wealth, run.gamma);
    }
  }
  return 0;
}

int cmd_sweep(const Common& common, const std::vector<std::uint64_t>& seeds) {
  RunConfig cfg = resolve_config(common);
  cfg.validate();
  const PricePanel panel = load_panel(cfg);
  cfg.model.assets = panel.cols();
  const fs::path dir = prepare_run_dir(cfg);
  const auto cells = sweep(panel, cfg, seeds);
  auto out = open_out(dir / "sweep.csv");
  write_sweep_csv(out, cells);
  write_sweep_csv(std::cout, cells);
  return 0;
}

/// Finite-difference suites: full objective gradient on tiny models for every
/// variant, plus the attention-weight derivative identities.
int cmd_gradcheck(double tol, std::uint64_t seed) {
  bool ok = true;
  SitConfig cfg;
  cfg.assets = 3;
  cfg.slices = 4;
  cfg.horizon = 2;
  cfg.period = 3;
  cfg.d_model = 8;
  cfg.d_ff = 8;
  cfg.hidden_c = 8;
  cfg.n_heads = 2;
  cfg.dropout = 0.0;
  SynthSpec spec;
  spec.assets = cfg.assets;
  spec.rows = min_panel_rows(cfg) + cfg.period;
  spec.leadlag_pairs = {{0, 1}};
  spec.seed = seed;
  spec.volatility = 0.02;
  const PricePanel panel = synth_market(spec);
  const auto scenarios = build_scenarios(panel, cfg, 1);
  const std::vector<Scenario> batch(scenarios.begin(), scenarios.begin() + 2);
  for (Variant v : {Variant::full, Variant::no_cvar, Variant::no_asset_attn, Variant::no_bias, Variant::no_gate}) {
    SitParameters params = init_parameters(cfg, seed);
    ForwardOptions opts;
    opts.variant = v;
    const auto res = check_gradients(params, [&](const SitParameters& p) { return batch_objective(batch, p, cfg, opts); });
    const bool pass = res.max_rel_error < tol;
    ok = ok && pass;
    std::printf("%s\tobjective[%s]\tmax_rel_err %.3e\tworst %s\t(%zu coords)\n", pass ? "PASS" : "FAIL",
                variant_name(v).c_str(), res.max_rel_error, res.worst.c_str(), res.checked);
  }
  // Attention-weight derivatives on random single-row configurations.
  Rng rng(seed);
  double worst_dir = 0.0, worst_gate = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 2 + rng.below(4), dk = 2 + rng.below(3);
    std::vector<double> z(d), q(dk), beta(d * dk);
    for (double& x : z) x = rng.normal();
    for (double& x : q) x = rng.normal();
    for (double& x : beta) x = rng.normal() * 0.5;
    const double gamma = 0.2 + rng.uniform() * 2.0;
    const std::size_t l = rng.below(d);
    auto row = [&](double g, const std::vector<double>& bt) {
      std::vector<double> logits(d);
      for (std::size_t m = 0; m < d; ++m) {
        double b = 0.0;
        for (std::size_t c = 0; c < dk; ++c) b += q[c] * bt[m * dk + c];
        logits[m] = z[m] + g * b;
      }
      return allocate(logits, d, 1.0);
    };
    const auto alpha = row(gamma, beta);
    std::vector<double> b(d, 0.0);
    for (std::size_t m = 0; m < d; ++m)
      for (std::size_t c = 0; c < dk; ++c) b[m] += q[c] * beta[m * dk + c];
    const double h = 1e-6;
    auto shifted = [&](double eps) {
      auto bt = beta;
      for (std::size_t c = 0; c < dk; ++c) bt[l * dk + c] += eps * q[c];
      return row(gamma, bt)[l];
    };
    const double fd_dir = (shifted(h) - shifted(-h)) / (2 * h);
    worst_dir = std::max(worst_dir, relative_error(bias_directional_derivative(alpha[l], q, gamma), fd_dir, 1e-12));
    const double fd_gate = (row(gamma + h, beta)[l] - row(gamma - h, beta)[l]) / (2 * h);
    worst_gate = std::max(worst_gate, relative_error(gate_derivative(alpha, b, l), fd_gate, 1e-12));
  }
  const double attn_tol = 1e-5;
  std::printf("%s\tbias_directional_derivative\tmax_rel_err %.3e\n", worst_dir < attn_tol ? "PASS" : "FAIL", worst_dir);
  std::printf("%s\tgate_derivative\tmax_rel_err %.3e\n", worst_gate < attn_tol ? "PASS" : "FAIL", worst_gate);
  ok = ok && worst_dir < attn_tol && worst_gate < attn_tol;
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Signature-informed portfolio allocation toolkit"};
  app.require_subcommand(1);

  std::string sig_data, sig_pair;
  int sig_level = 2;
  std::size_t sig_first = 0, sig_rows = 0;
  auto* sig = app.add_subcommand("sig", "signature and signed-area inspection of a price CSV");
  sig->add_option("--data", sig_data, "price CSV")->required();
  sig->add_option("--pair", sig_pair, "asset pair A,B; omit for the full signed-area matrix");
  sig->add_option("--level", sig_level, "truncation level of the cross signature")->check(CLI::Range(2, 4));
  sig->add_option("--start", sig_first, "first row of the window");
  sig->add_option("--rows", sig_rows, "window length in rows (0 = to the end)");

  std::string synth_out, synth_pairs;
  SynthSpec synth_spec;
  auto* synth = app.add_subcommand("synth", "generate a synthetic panel with planted lead-lag pairs");
  synth->add_option("--out", synth_out, "output CSV")->required();
  synth->add_option("--assets", synth_spec.assets, "number of assets");
  synth->add_option("--rows", synth_spec.rows, "number of dated rows");
  synth->add_option("--pairs", synth_pairs, "leader:lagger list, e.g. 0:1,2:3");
  synth->add_option("--lag", synth_spec.lag, "lag in rows");
  synth->add_option("--noise", synth_spec.noise_sigma, "lagger noise standard deviation");
  synth->add_option("--drift", synth_spec.drift, "daily log drift");
  synth->add_option("--vol", synth_spec.volatility, "daily log volatility");
  synth->add_option("--seed", synth_spec.seed, "random seed")->required();

  Common train_c;
  std::uint64_t train_seed = 0;
  auto* train_cmd = app.add_subcommand("train", "train a model and write its checkpoint");
  add_common(train_cmd, train_c);
  train_cmd->add_option("--seed", train_seed, "random seed")->required();

  Common bt_c;
  std::string bt_ckpt, bt_strats = "ewp,gmv,cvar,hrp";
  std::uint64_t bt_seed = 0;
  auto* bt = app.add_subcommand("backtest", "backtest baselines and optionally a checkpoint over the test split");
  add_common(bt, bt_c);
  bt->add_option("--checkpoint", bt_ckpt, "trained parameters")->check(CLI::ExistingFile);
  bt->add_option("--strategies", bt_strats, "comma list from ewp,gmv,cvar,hrp (empty for none)");
  bt->add_option("--seed", bt_seed, "seed recorded in the report");

  Common ab_c;
  std::vector<std::uint64_t> ab_seeds;
  std::string ab_variants = "all";
  auto* ab = app.add_subcommand("ablate", "module-drop ablations");
  add_common(ab, ab_c);
  ab->add_option("--seed", ab_seeds, "seeds, comma separated")->required()->delimiter(',');
  ab->add_option("--variants", ab_variants, "all or a comma list of full,no_cvar,no_asset_attn,no_bias,no_gate");

  Common sw_c;
  std::vector<std::uint64_t> sw_seeds;
  auto* sw = app.add_subcommand("sweep", "temperature x cost sensitivity grid");
  add_common(sw, sw_c);
  sw->add_option("--seed", sw_seeds, "seeds, comma separated")->required()->delimiter(',');

  double gc_tol = 1e-4;
  std::uint64_t gc_seed = 7;
  auto* gc = app.add_subcommand("gradcheck", "run the finite-difference suites");
  gc->add_option("--tol", gc_tol, "maximum relative error");
  gc->add_option("--seed", gc_seed, "random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*sig) return cmd_sig(sig_data, sig_pair, sig_level, sig_first, sig_rows);
    if (*synth) return cmd_synth(synth_out, synth_spec, synth_pairs);
    if (*train_cmd) return cmd_train(train_c, train_seed);
    if (*bt) return cmd_backtest(bt_c, bt_ckpt, bt_strats, bt_seed);
    if (*ab) return cmd_ablate(ab_c, ab_seeds, ab_variants);
    if (*sw) return cmd_sweep(sw_c, sw_seeds);
    if (*gc) return cmd_gradcheck(gc_tol, gc_seed);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
