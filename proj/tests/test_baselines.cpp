#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "sigalloc/baselines.hpp"
#include "sigalloc/rng.hpp"

using namespace sigalloc;

namespace {

// Random covariance A A^T / k plus a small diagonal.
CovEstimate random_cov(Rng& rng, std::size_t d) {
  const std::size_t k = d + 2;
  std::vector<double> a(d * k), cov(d * d, 0.0);
  for (double& x : a) x = rng.normal() * (0.5 + rng.uniform());
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t m = 0; m < k; ++m) cov[i * d + j] += a[i * k + m] * a[j * k + m] / static_cast<double>(k);
      if (i == j) cov[i * d + j] += 0.01;
    }
  return CovEstimate::from_matrix(cov, d);
}

void expect_simplex(const Weights& w, double tol = 1e-9) {
  double s = 0.0;
  for (double x : w) {
    EXPECT_GE(x, -tol);
    s += x;
  }
  EXPECT_NEAR(s, 1.0, tol);
}

}  // namespace

TEST(Ewp, UniformWeights) {
  EXPECT_EQ(ewp(4), (Weights{0.25, 0.25, 0.25, 0.25}));
  EXPECT_EQ(ewp(1), (Weights{1.0}));
  try {
    ewp(0);
    FAIL() << "expected Empty";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Empty);
  }
}

TEST(ProjectSimplex, ProjectsOntoSimplex) {
  EXPECT_EQ(project_simplex(std::vector<double>{0.2, 0.3, 0.5}), (Weights{0.2, 0.3, 0.5}));
  const auto w = project_simplex(std::vector<double>{2.0, 0.0, -1.0});
  EXPECT_NEAR(w[0], 1.0, 1e-15);
  EXPECT_NEAR(w[1], 0.0, 1e-15);
  // Projection of (1, 1) is (0.5, 0.5); of (1, 0.5) is (0.75, 0.25).
  const auto v = project_simplex(std::vector<double>{1.0, 0.5});
  EXPECT_NEAR(v[0], 0.75, 1e-15);
  EXPECT_NEAR(v[1], 0.25, 1e-15);
}

TEST(EstimateCovariance, SampleMomentsWithRidge) {
  // Two assets, three rows.
  const std::vector<double> r{0.01, 0.02, -0.01, 0.00, 0.03, 0.01};
  const auto c = estimate_covariance(r, 2);
  EXPECT_EQ(c.samples, 3u);
  EXPECT_NEAR(c.mean[0], 0.01, 1e-15);
  EXPECT_NEAR(c.mean[1], 0.01, 1e-15);
  const double v0 = (0.0 + 0.0004 + 0.0004) / 2, v1 = (0.0001 + 0.0001 + 0.0) / 2, c01 = (0.0 + 0.0002 + 0.0) / 2;
  const double ridge = 1e-8 * (v0 + v1) / 2;
  EXPECT_NEAR(c.at(0, 0), v0 + ridge, 1e-16);
  EXPECT_NEAR(c.at(1, 1), v1 + ridge, 1e-16);
  EXPECT_NEAR(c.at(0, 1), c01, 1e-16);
  EXPECT_EQ(c.at(0, 1), c.at(1, 0));
}

TEST(Gmv, IdentityGivesUniform) {
  const auto w = gmv(CovEstimate::from_matrix({1, 0, 0, 0, 1, 0, 0, 0, 1}, 3));
  for (double x : w) EXPECT_NEAR(x, 1.0 / 3.0, 1e-8);
}

TEST(Gmv, DiagonalMatchesInverseVariance) {
  const auto w = gmv(CovEstimate::from_matrix({1, 0, 0, 4}, 2));
  EXPECT_NEAR(w[0], 0.8, 1e-6);
  EXPECT_NEAR(w[1], 0.2, 1e-6);
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 2 + rng.below(7);
    std::vector<double> cov(d * d, 0.0), inv(d);
    double total = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      cov[i * d + i] = 0.1 + 5.0 * rng.uniform();
      total += inv[i] = 1.0 / cov[i * d + i];
    }
    const auto g = gmv(CovEstimate::from_matrix(cov, d));
    for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(g[i], inv[i] / total, 1e-6);
  }
}

TEST(Gmv, BeatsRandomSimplexPoints) {
  Rng rng(2);
  const auto c = random_cov(rng, 4);
  const auto res = gmv_solve(c);
  EXPECT_LT(res.kkt_residual, 1e-8);
  expect_simplex(res.weights);
  const double v = portfolio_variance(c, res.weights);
  for (int i = 0; i < 100000; ++i) {
    std::vector<double> e(4);
    double s = 0.0;
    for (double& x : e) s += (x = -std::log(1.0 - rng.uniform()));
    for (double& x : e) x /= s;
    ASSERT_LE(v, portfolio_variance(c, e) + 1e-12);
  }
}

TEST(Gmv, NoWorseThanEwpOnRandomCovariances) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 + rng.below(8);
    const auto c = random_cov(rng, d);
    const auto w = gmv(c);
    expect_simplex(w);
    EXPECT_LE(portfolio_variance(c, w), portfolio_variance(c, ewp(d)) + 1e-12);
  }
}

TEST(Gmv, RejectsNonFiniteCovariance) {
  try {
    gmv(CovEstimate::from_matrix({1, NAN, NAN, 1}, 2));
    FAIL() << "expected InvalidCov";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidCov);
  }
}

TEST(CvarOpt, ConcentratesOnRisklessAsset) {
  // Asset 0 returns exactly 0; asset 1 earns a little but crashes in the tail.
  std::vector<double> r;
  for (int t = 0; t < 40; ++t) {
    r.push_back(0.0);
    r.push_back(t % 10 == 0 ? -0.2 : 0.005);
  }
  const auto res = cvar_opt(r, 2, 0.95);
  EXPECT_GT(res.weights[0], 0.99);
  EXPECT_FALSE(res.degenerate);
}

TEST(CvarOpt, SingleAssetAndDegenerateInputs) {
  const auto one = cvar_opt(std::vector<double>{0.01, -0.02, 0.03}, 1);
  EXPECT_EQ(one.weights, (Weights{1.0}));
  const auto same = cvar_opt(std::vector<double>{0.01, 0.01, -0.02, -0.02, 0.0, 0.0}, 2);
  EXPECT_TRUE(same.degenerate);
  EXPECT_EQ(same.weights, ewp(2));
  try {
    cvar_opt(std::vector<double>{0.01, 0.02}, 2);
    FAIL() << "expected InsufficientHistory";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientHistory);
  }
}

TEST(CvarOpt, NoWorseThanSimplexGridSearch) {
  Rng rng(4);
  for (int trial = 0; trial < 3; ++trial) {
    const std::size_t d = 3, n = 50;
    std::vector<double> r(n * d);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < d; ++j) r[t * d + j] = 0.002 * static_cast<double>(j) + 0.01 * (1.0 + j) * rng.normal();
    double grid = 1e300;
    for (int a = 0; a <= 100; ++a)
      for (int b = 0; a + b <= 100; ++b) {
        const std::vector<double> w{a / 100.0, b / 100.0, (100 - a - b) / 100.0};
        grid = std::min(grid, cvar_portfolio_objective(r, d, w, 0.95));
      }
    const auto res = cvar_opt(r, d, 0.95);
    expect_simplex(res.weights);
    EXPECT_NEAR(res.objective, cvar_portfolio_objective(r, d, res.weights, 0.95), 1e-15);
    EXPECT_LE(res.objective, grid + 1e-4);
  }
}

TEST(Hrp, ScaledIdentityGivesUniform) {
  const auto w = hrp(CovEstimate::from_matrix({2, 0, 0, 0, 0, 2, 0, 0, 0, 0, 2, 0, 0, 0, 0, 2}, 4));
  for (double x : w) EXPECT_NEAR(x, 0.25, 1e-15);
}

TEST(Hrp, TwoBlockExampleByHand) {
  // Blocks {0,1} (variance 1) and {2,3} (variance 4), within-block correlation
  // 0.5, independent across. Cluster variances 0.75 and 3 give block weights
  // 0.8 and 0.2, split equally within each block.
  const auto w = hrp(CovEstimate::from_matrix({1, 0.5, 0, 0, 0.5, 1, 0, 0, 0, 0, 4, 2, 0, 0, 2, 4}, 4));
  EXPECT_NEAR(w[0], 0.4, 1e-14);
  EXPECT_NEAR(w[1], 0.4, 1e-14);
  EXPECT_NEAR(w[2], 0.1, 1e-14);
  EXPECT_NEAR(w[3], 0.1, 1e-14);
}

TEST(Hrp, OrderGroupsCorrelatedAssets) {
  // Assets 0 and 2 are highly correlated, as are 1 and 3.
  const auto c = CovEstimate::from_matrix({1, 0, 0.9, 0, 0, 1, 0, 0.8, 0.9, 0, 1, 0, 0, 0.8, 0, 1}, 4);
  EXPECT_EQ(hrp_order(c), (std::vector<std::size_t>{0, 2, 1, 3}));
}

TEST(Hrp, SimplexAndScaleInvarianceOnRandomCovariances) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 + rng.below(9);
    auto c = random_cov(rng, d);
    const auto w = hrp(c);
    expect_simplex(w);
    for (double& x : c.cov) x *= 7.5;
    const auto w2 = hrp(c);
    for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(w[i], w2[i], 1e-12);
  }
}

TEST(Hrp, RejectsZeroVariance) {
  try {
    hrp(CovEstimate::from_matrix({1, 0, 0, 0}, 2));
    FAIL() << "expected InvalidCov";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidCov);
  }
}
