#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "sigalloc/gradcheck.hpp"
#include "sigalloc/objective.hpp"
#include "sigalloc/train.hpp"

using namespace sigalloc;

namespace {

// Dual objective nu + sum((L - nu)^+) / ((1 - alpha) K) at a given nu.
double dual(const std::vector<double>& losses, double alpha, double nu) {
  double s = 0.0;
  for (double l : losses) s += std::max(l - nu, 0.0);
  return nu + s / ((1.0 - alpha) * static_cast<double>(losses.size()));
}

SitConfig tiny_config() {
  SitConfig cfg;
  cfg.assets = 3;
  cfg.slices = 4;
  cfg.horizon = 2;
  cfg.period = 3;
  cfg.d_model = 8;
  cfg.d_ff = 8;
  cfg.hidden_c = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  return cfg;
}

std::vector<Scenario> random_scenarios(const SitConfig& cfg, std::size_t n, Rng& rng, bool dominant = false) {
  std::vector<Scenario> out(n);
  for (auto& s : out) {
    s.features.slice_sigs.resize(cfg.slices * cfg.assets * cfg.slice_sig_dim());
    s.features.cross_sigs.resize(cfg.assets * cfg.assets * cfg.cross_sig_dim());
    s.features.calendar.resize(cfg.slices * cfg.calendar_dims);
    for (double& x : s.features.slice_sigs) x = rng.normal();
    for (double& x : s.features.cross_sigs) x = rng.normal();
    for (double& x : s.features.calendar) x = rng.uniform() * 2 - 1;
    s.returns.resize(cfg.horizon * cfg.assets);
    for (std::size_t i = 0; i < s.returns.size(); ++i) {
      s.returns[i] = 0.01 * rng.normal();
      if (dominant) s.returns[i] = (i % cfg.assets == 0) ? 0.01 + 0.002 * rng.uniform() : -0.01 + 0.002 * rng.normal();
    }
  }
  return out;
}

}  // namespace

TEST(Cvar, EqualsDenseGridMinimumOfDual) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 1 + rng.below(40);
    const double alpha = 0.5 + 0.49 * rng.uniform();
    // Losses on the 1e-4 lattice so the grid contains every kink of the dual.
    std::vector<double> losses(k);
    for (double& l : losses) l = std::round(rng.normal() * 1e3) * 1e-4;
    const double lo = *std::min_element(losses.begin(), losses.end());
    const double hi = *std::max_element(losses.begin(), losses.end());
    double best = dual(losses, alpha, lo);
    for (long i = 0; lo + static_cast<double>(i) * 1e-4 <= hi + 1e-12; ++i)
      best = std::min(best, dual(losses, alpha, lo + static_cast<double>(i) * 1e-4));
    const auto c = cvar(losses, alpha);
    EXPECT_NEAR(c.value, best, 1e-6);
    EXPECT_NEAR(dual(losses, alpha, c.nu), c.value, 1e-12);
  }
}

TEST(Cvar, TopTailAverageWhenAlphaKIsInteger) {
  const std::vector<double> losses{3, -1, 7, 2, 5, 0, 1, 4, 6, 9};
  EXPECT_NEAR(cvar(losses, 0.8).value, (7 + 9) / 2.0, 1e-14);
  EXPECT_NEAR(cvar(losses, 0.9).value, 9.0, 1e-14);
  EXPECT_NEAR(cvar(std::vector<double>{-0.4}, 0.95).value, -0.4, 1e-15);
}

TEST(Cvar, Errors) {
  try {
    cvar(std::vector<double>{}, 0.9);
    FAIL() << "expected EmptyScenario";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyScenario);
  }
  EXPECT_THROW(cvar(std::vector<double>{1.0}, 1.0), Error);
  EXPECT_THROW(cvar(std::vector<double>{1.0}, 0.0), Error);
}

TEST(DiscreteCvar, CoherenceProperties) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(8);
    std::vector<double> p(n), x(n), y(n);
    double total = 0.0;
    for (double& v : p) total += (v = 0.05 + rng.uniform());
    for (double& v : p) v /= total;
    for (std::size_t s = 0; s < n; ++s) {
      x[s] = rng.normal();
      y[s] = x[s] + rng.uniform();
    }
    const double alpha = 0.5 + 0.49 * rng.uniform(), c = rng.normal() * 3;
    EXPECT_LE(discrete_cvar(p, x, alpha).value, discrete_cvar(p, y, alpha).value + 1e-12);
    auto shifted = x;
    for (double& v : shifted) v -= c;
    EXPECT_NEAR(discrete_cvar(p, shifted, alpha).value, discrete_cvar(p, x, alpha).value - c, 1e-12);
  }
}

TEST(DiscreteCvar, MatchesTailEnumeration) {
  // Worst 10% of a three-state distribution sits entirely in the 0.1 crash state.
  const std::vector<double> p{0.1, 0.5, 0.4}, x{10, 1, 2};
  EXPECT_NEAR(discrete_cvar(p, x, 0.95).value, 10.0, 1e-12);
  // alpha = 0.8: tail mass 0.2 = crash 0.1 + 0.1 of the state with loss 2.
  EXPECT_NEAR(discrete_cvar(p, x, 0.8).value, (0.1 * 10 + 0.1 * 2) / 0.2, 1e-12);
  // Equal weights reduce to the sample CVaR.
  const std::vector<double> u(5, 0.2), z{4, -1, 3, 0, 8};
  EXPECT_NEAR(discrete_cvar(u, z, 0.6).value, cvar(z, 0.6).value, 1e-12);
}

TEST(Dominance, WorkedExample) {
  const std::vector<double> p{0.1, 0.5, 0.4}, x{10, 1, 2}, y{8, 0, 1};
  const auto r = cvar_dominance_check(p, x, y, 0.95);
  EXPECT_TRUE(r.holds);
  EXPECT_NEAR(r.cvar_x, 10.0, 1e-12);
  EXPECT_NEAR(r.cvar_y, 8.0, 1e-12);
  EXPECT_NEAR(r.bound, 1.0, 1e-12);
  EXPECT_GE(r.gap, r.bound);
}

TEST(Dominance, ConstantShiftGivesGapEqualToBound) {
  const std::vector<double> p{0.2, 0.3, 0.5}, x{5, 1, -2};
  auto y = x;
  for (double& v : y) v -= 0.75;
  const auto r = cvar_dominance_check(p, x, y, 0.9);
  EXPECT_NEAR(r.gap, 0.75, 1e-12);
  EXPECT_NEAR(r.bound, 0.75, 1e-12);
  EXPECT_TRUE(r.holds);
}

TEST(Dominance, HoldsOnRandomInstances) {
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng.below(6);
    const double alpha = 0.8 + 0.19 * rng.uniform();
    std::vector<double> p(n), x(n), y(n);
    p[0] = (1.0 - alpha) + (alpha - 0.01) * rng.uniform() * 0.5 + 1e-6;
    double rest = 0.0;
    for (std::size_t s = 1; s < n; ++s) rest += (p[s] = 0.05 + rng.uniform());
    for (std::size_t s = 1; s < n; ++s) p[s] *= (1.0 - p[0]) / rest;
    x[0] = 5.0 + rng.uniform();
    for (std::size_t s = 1; s < n; ++s) x[s] = x[0] - 0.1 - 4.0 * rng.uniform();
    for (std::size_t s = 0; s < n; ++s) y[s] = x[s] - 0.01 - 2.0 * rng.uniform();
    const auto r = cvar_dominance_check(p, x, y, alpha);
    EXPECT_TRUE(r.holds) << "gap " << r.gap << " bound " << r.bound;
  }
}

TEST(Dominance, RejectsViolatedPreconditions) {
  auto expect_precondition = [](std::vector<double> p, std::vector<double> x, std::vector<double> y, double alpha) {
    try {
      cvar_dominance_check(p, x, y, alpha);
      FAIL() << "expected PreconditionFailed";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::PreconditionFailed);
    }
  };
  expect_precondition({0.1, 0.5, 0.4}, {1, 10, 2}, {0, 8, 1}, 0.95);   // crash state not worst
  expect_precondition({0.1, 0.5, 0.4}, {10, 1, 2}, {8, 1, 1}, 0.95);   // Y not strictly below X
  expect_precondition({0.1, 0.5, 0.4}, {10, 1, 2}, {8, 0, 1}, 0.85);   // crash probability too small
  expect_precondition({0.1, 0.5, 0.5}, {10, 1, 2}, {8, 0, 1}, 0.95);   // does not sum to 1
  expect_precondition({0.1, 0.9}, {10, 1, 2}, {8, 0, 1}, 0.95);        // length mismatch
}

TEST(CvarTensor, GradientMatchesDerivativeOfCvarValue) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 1 + rng.below(25);
    const double alpha = 0.5 + 0.49 * rng.uniform();
    std::vector<double> l(k);
    for (double& v : l) v = rng.normal();
    auto t = Tensor::parameter({k}, l);
    const auto out = cvar_tensor(t, alpha);
    EXPECT_NEAR(out.item(), cvar(l, alpha).value, 1e-12);
    ad::backward(out);
    const double h = 1e-7;
    for (std::size_t i = 0; i < k; ++i) {
      auto up = l, down = l;
      up[i] += h;
      down[i] -= h;
      const double fd = (cvar(up, alpha).value - cvar(down, alpha).value) / (2 * h);
      EXPECT_NEAR(t.grad()[i], fd, 1e-5) << "k=" << k << " alpha=" << alpha << " i=" << i;
    }
  }
}

TEST(BatchObjective, SingleScenarioSingleStepIsNegativeReturn) {
  auto cfg = tiny_config();
  cfg.horizon = 1;
  Rng rng(5);
  const auto batch = random_scenarios(cfg, 1, rng);
  const auto params = init_parameters(cfg, 5);
  const auto w = forward(batch[0].features, params, cfg).weights;
  double expected = 0.0;
  for (std::size_t j = 0; j < cfg.assets; ++j) expected -= w.value()[j] * batch[0].returns[j];
  EXPECT_NEAR(batch_objective(batch, params, cfg).item(), expected, 1e-15);
}

TEST(BatchObjective, RiskNeutralVariantIsMeanLoss) {
  const auto cfg = tiny_config();
  Rng rng(6);
  const auto batch = random_scenarios(cfg, 4, rng);
  const auto params = init_parameters(cfg, 6);
  ForwardOptions o;
  o.variant = Variant::no_cvar;
  double total = 0.0;
  for (const auto& s : batch) {
    const auto w = forward(s.features, params, cfg, o).weights;
    for (std::size_t i = 0; i < w.numel(); ++i) total -= w.value()[i] * s.returns[i];
  }
  EXPECT_NEAR(batch_objective(batch, params, cfg, o).item(), total / (4.0 * cfg.horizon), 1e-15);
}

TEST(BatchObjective, IsMeanOfScenarioCvars) {
  auto cfg = tiny_config();
  cfg.horizon = 5;
  Rng rng(7);
  const auto batch = random_scenarios(cfg, 3, rng);
  const auto params = init_parameters(cfg, 7);
  double total = 0.0;
  for (const auto& s : batch) {
    const auto w = forward(s.features, params, cfg).weights;
    std::vector<double> losses(cfg.horizon, 0.0);
    for (std::size_t k = 0; k < cfg.horizon; ++k)
      for (std::size_t j = 0; j < cfg.assets; ++j) losses[k] -= w.value()[k * cfg.assets + j] * s.returns[k * cfg.assets + j];
    total += cvar(losses, cfg.cvar_alpha).value;
  }
  EXPECT_NEAR(batch_objective(batch, params, cfg).item(), total / 3.0, 1e-14);
  EXPECT_NEAR(evaluate_objective(batch, params, cfg), total / 3.0, 1e-14);
  try {
    batch_objective(std::span<const Scenario>{}, params, cfg);
    FAIL() << "expected EmptyBatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyBatch);
  }
}

TEST(BatchObjective, GradientMatchesFiniteDifferencesOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto cfg = tiny_config();
    Rng rng(100 + seed);
    cfg.horizon = 1 + rng.below(4);
    const auto batch = random_scenarios(cfg, 2, rng);
    auto params = init_parameters(cfg, seed);
    const auto res =
        check_gradients(params, [&](const SitParameters& p) { return batch_objective(batch, p, cfg); });
    EXPECT_LT(res.max_rel_error, 1e-4) << "seed " << seed << " worst " << res.worst;
  }
}

TEST(BatchGradient, IndependentOfThreadCount) {
  const auto cfg = tiny_config();
  Rng rng(8);
  const auto data = random_scenarios(cfg, 13, rng);
  std::vector<const Scenario*> batch;
  for (const auto& s : data) batch.push_back(&s);
  const auto params = init_parameters(cfg, 8);
  ForwardOptions o;
  o.train = true;
  o.dropout_seed = 3;
  std::vector<std::vector<double>> g1, g4;
  const double v1 = batch_gradient(batch, params, cfg, o, 4, 1, g1);
  const double v4 = batch_gradient(batch, params, cfg, o, 4, 4, g4);
  EXPECT_EQ(v1, v4);
  EXPECT_EQ(g1, g4);
}

TEST(Train, EarlyStoppingAfterPatienceNonImprovingEpochs) {
  const auto cfg = tiny_config();
  Rng rng(9);
  const auto data = random_scenarios(cfg, 6, rng);
  TrainOptions opts;
  opts.lr = 0.0;  // frozen parameters: the validation objective never improves after epoch 1
  opts.patience = 10;
  opts.max_epochs = 50;
  const auto res = train(data, data, cfg, 1, opts);
  EXPECT_EQ(res.best_epoch, 1u);
  EXPECT_EQ(res.log.size(), 11u);
}

TEST(Train, DominantAssetAttractsTheWeight) {
  auto cfg = tiny_config();
  cfg.dropout = 0.0;
  Rng rng(10);
  const auto data = random_scenarios(cfg, 64, rng, true);
  const auto val = random_scenarios(cfg, 16, rng, true);
  TrainOptions opts;
  opts.max_epochs = 60;
  opts.batch_size = 16;
  const auto res = train(data, val, cfg, 2, opts);
  double mean_w0 = 0.0, first_w0 = 0.0;
  const auto init = init_parameters(cfg, 2);
  for (const auto& s : val) {
    mean_w0 += forward(s.features, res.params, cfg).weights.value()[0];
    first_w0 += forward(s.features, init, cfg).weights.value()[0];
  }
  mean_w0 /= static_cast<double>(val.size());
  first_w0 /= static_cast<double>(val.size());
  EXPECT_GT(mean_w0, 0.8);
  EXPECT_GT(mean_w0, first_w0);
}

TEST(Train, LossOnFixedBatchDecreasesOverFirstEpochs) {
  auto cfg = tiny_config();
  cfg.dropout = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(200 + seed);
    const auto data = random_scenarios(cfg, 32, rng, true);
    TrainOptions opts;
    opts.max_epochs = 1;
    opts.batch_size = 64;
    SitParameters params = init_parameters(cfg, seed);
    double prev = evaluate_objective(data, params, cfg);
    for (int epoch = 0; epoch < 5; ++epoch) {
      params = train(data, data, cfg, seed, opts, nullptr, &params).params;
      const double now = evaluate_objective(data, params, cfg);
      EXPECT_LT(now, prev) << "seed " << seed << " epoch " << epoch;
      prev = now;
    }
  }
}

TEST(Train, GateStaysFixedWhenDropped) {
  const auto cfg = tiny_config();
  Rng rng(11);
  const auto data = random_scenarios(cfg, 8, rng);
  TrainOptions opts;
  opts.max_epochs = 3;
  opts.variant = Variant::no_gate;
  const auto res = train(data, data, cfg, 3, opts);
  EXPECT_NEAR(res.params.gate(), 1.0, 1e-14);
  for (const auto& r : res.log) EXPECT_EQ(r.gamma, 1.0);
}

TEST(Train, LogLineHasFiveTabSeparatedFields) {
  std::ostringstream out;
  write_epoch_line(out, EpochRecord{3, -0.5, -0.25, 1.125, 0.5});
  EXPECT_EQ(out.str(), "3\t-0.5\t-0.25\t1.125\t0.500\n");
}

TEST(Train, RejectsEmptySets) {
  const auto cfg = tiny_config();
  Rng rng(12);
  const auto data = random_scenarios(cfg, 2, rng);
  try {
    train(std::span<const Scenario>{}, data, cfg, 0);
    FAIL() << "expected InsufficientHistory";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientHistory);
  }
  EXPECT_THROW(train(data, std::span<const Scenario>{}, cfg, 0), Error);
}
