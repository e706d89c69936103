#pragma once

// Classical allocation rules: equal weight, long-only minimum variance,
// scenario CVaR minimisation and hierarchical risk parity.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "sigalloc/error.hpp"

namespace sigalloc {

using Weights = std::vector<double>;

inline Weights ewp(std::size_t d) {
  if (d == 0) fail(ErrorCode::Empty, "ewp with zero assets");
  return Weights(d, 1.0 / static_cast<double>(d));
}

/// Euclidean projection onto the probability simplex (sort-based).
inline Weights project_simplex(std::span<const double> v) {
  if (v.empty()) fail(ErrorCode::Empty, "projection of an empty vector");
  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    cum += u[i];
    const double t = (cum - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) theta = t;
  }
  Weights w(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) w[i] = std::max(v[i] - theta, 0.0);
  return w;
}

struct CovEstimate {
  std::vector<double> mean;  // d
  std::vector<double> cov;   // d x d, row-major
  std::size_t samples = 0;

  std::size_t dim() const { return mean.size(); }
  double at(std::size_t i, std::size_t j) const { return cov[i * dim() + j]; }

  /// Covariance given directly (mean zero).
  static CovEstimate from_matrix(std::vector<double> cov, std::size_t d) {
    if (cov.size() != d * d) fail(ErrorCode::InvalidCov, "covariance is not d x d");
    CovEstimate c;
    c.mean.assign(d, 0.0);
    c.cov = std::move(cov);
    return c;
  }
};

/// Sample mean and covariance (denominator n - 1) of rows x d returns, plus a
/// ridge of 1e-8 trace / d on the diagonal.
inline CovEstimate estimate_covariance(std::span<const double> returns, std::size_t d) {
  if (d == 0 || returns.size() % d != 0) fail(ErrorCode::InvalidCov, "return matrix is not rows x d");
  const std::size_t n = returns.size() / d;
  if (n < 2) fail(ErrorCode::InvalidCov, "need at least two return rows");
  CovEstimate c;
  c.samples = n;
  c.mean.assign(d, 0.0);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < d; ++j) c.mean[j] += returns[t * d + j] / static_cast<double>(n);
  c.cov.assign(d * d, 0.0);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        c.cov[i * d + j] += (returns[t * d + i] - c.mean[i]) * (returns[t * d + j] - c.mean[j]);
  for (double& x : c.cov) x /= static_cast<double>(n - 1);
  double trace = 0.0;
  for (std::size_t i = 0; i < d; ++i) trace += c.cov[i * d + i];
  const double ridge = 1e-8 * trace / static_cast<double>(d);
  for (std::size_t i = 0; i < d; ++i) c.cov[i * d + i] += ridge;
  return c;
}

inline double portfolio_variance(const CovEstimate& c, std::span<const double> w) {
  const std::size_t d = c.dim();
  double v = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) v += w[i] * c.at(i, j) * w[j];
  return v;
}

namespace detail {

inline void check_cov(const CovEstimate& c) {
  const std::size_t d = c.dim();
  if (d == 0) fail(ErrorCode::Empty, "empty covariance");
  if (c.cov.size() != d * d) fail(ErrorCode::InvalidCov, "covariance is not d x d");
  for (double x : c.cov)
    if (!std::isfinite(x)) fail(ErrorCode::InvalidCov, "non-finite covariance entry");
  for (std::size_t i = 0; i < d; ++i)
    if (c.at(i, i) < 0.0) fail(ErrorCode::InvalidCov, "negative variance");
}

inline Weights cov_times(const CovEstimate& c, std::span<const double> w) {
  const std::size_t d = c.dim();
  Weights out(d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i] += c.at(i, j) * w[j];
  return out;
}

}  // namespace detail

struct GmvResult {
  Weights weights;
  std::size_t iterations = 0;
  double kkt_residual = 0.0;
};

/// argmin w' S w over the simplex by accelerated projected gradient. Stops
/// once the projected-gradient (KKT) residual max|w - P(w - grad)| < tol.
inline GmvResult gmv_solve(const CovEstimate& c, double tol = 1e-8, std::size_t max_iter = 1000000) {
  detail::check_cov(c);
  const std::size_t d = c.dim();
  // Lipschitz constant of the gradient 2 S, bounded by the max absolute row sum.
  double lip = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < d; ++j) row += std::abs(c.at(i, j));
    lip = std::max(lip, 2.0 * row);
  }
  GmvResult r;
  r.weights = ewp(d);
  if (lip == 0.0) return r;
  const double step = 1.0 / lip;
  Weights y = r.weights;
  double t = 1.0;
  auto residual = [&](const Weights& w) {
    Weights g = detail::cov_times(c, w);
    Weights z(d);
    for (std::size_t i = 0; i < d; ++i) z[i] = w[i] - 2.0 * g[i];
    Weights p = project_simplex(z);
    double res = 0.0;
    for (std::size_t i = 0; i < d; ++i) res = std::max(res, std::abs(p[i] - w[i]));
    return res;
  };
  for (r.iterations = 0; r.iterations < max_iter; ++r.iterations) {
    r.kkt_residual = residual(r.weights);
    if (r.kkt_residual < tol) break;
    Weights g = detail::cov_times(c, y);
    Weights z(d);
    for (std::size_t i = 0; i < d; ++i) z[i] = y[i] - step * 2.0 * g[i];
    Weights next = project_simplex(z);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    // Restart momentum whenever the objective goes up.
    if (portfolio_variance(c, next) > portfolio_variance(c, r.weights)) {
      t = 1.0;
      y = r.weights;
      continue;
    }
    for (std::size_t i = 0; i < d; ++i) y[i] = next[i] + ((t - 1.0) / t_next) * (next[i] - r.weights[i]);
    r.weights = std::move(next);
    t = t_next;
  }
  return r;
}

inline Weights gmv(const CovEstimate& c) { return gmv_solve(c).weights; }

struct CvarOptResult {
  Weights weights;
  double objective = 0.0;
  bool degenerate = false;  // all assets identical in every scenario; EWP returned
  std::size_t iterations = 0;
};

/// Rockafellar-Uryasev objective nu + sum((-w.r_t - nu)^+) / ((1 - alpha) T)
/// minimised over nu for fixed w.
inline double cvar_portfolio_objective(std::span<const double> returns, std::size_t d, std::span<const double> w,
                                       double alpha) {
  const std::size_t n = returns.size() / d;
  std::vector<double> losses(n);
  for (std::size_t t = 0; t < n; ++t) {
    double l = 0.0;
    for (std::size_t j = 0; j < d; ++j) l -= w[j] * returns[t * d + j];
    losses[t] = l;
  }
  std::vector<double> sorted = losses;
  std::sort(sorted.begin(), sorted.end());
  auto rank = static_cast<std::ptrdiff_t>(std::ceil(alpha * static_cast<double>(n) - 1e-9));
  rank = std::clamp<std::ptrdiff_t>(rank, 1, static_cast<std::ptrdiff_t>(n));
  const double nu = sorted[static_cast<std::size_t>(rank - 1)];
  double excess = 0.0;
  for (double l : losses) excess += std::max(l - nu, 0.0);
  return nu + excess / ((1.0 - alpha) * static_cast<double>(n));
}

/// Scenario CVaR minimisation over the simplex by projected subgradient
/// descent with diminishing normalised steps; nu is set to its exact
/// minimiser (the loss quantile) at every iterate. The best iterate is kept.
/// Stops when the best objective improves by less than 1e-9 over a window of
/// 100 iterations (after a warm-up), or at max_iter.
inline CvarOptResult cvar_opt(std::span<const double> returns, std::size_t d, double alpha = 0.95,
                              std::size_t max_iter = 200000) {
  if (d == 0) fail(ErrorCode::Empty, "cvar_opt with zero assets");
  if (returns.size() % d != 0) fail(ErrorCode::ShapeError, "returns are not T x d");
  const std::size_t n = returns.size() / d;
  if (n < 2) fail(ErrorCode::InsufficientHistory, "cvar_opt needs T >= 2");
  if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorCode::InvalidConfig, "alpha must lie in (0, 1)");
  CvarOptResult r;
  bool degenerate = true;
  for (std::size_t t = 0; t < n && degenerate; ++t)
    for (std::size_t j = 1; j < d; ++j)
      if (returns[t * d + j] != returns[t * d]) {
        degenerate = false;
        break;
      }
  r.weights = ewp(d);
  if (d == 1 || degenerate) {
    r.degenerate = degenerate && d > 1;
    r.objective = cvar_portfolio_objective(returns, d, r.weights, alpha);
    return r;
  }
  constexpr std::size_t kWarmup = 5000, kWindow = 100;
  Weights w = r.weights;
  r.objective = cvar_portfolio_objective(returns, d, w, alpha);
  double window_start = r.objective;
  std::vector<double> losses(n);
  std::vector<std::size_t> idx(n);
  for (r.iterations = 1; r.iterations <= max_iter; ++r.iterations) {
    for (std::size_t t = 0; t < n; ++t) {
      double l = 0.0;
      for (std::size_t j = 0; j < d; ++j) l -= w[j] * returns[t * d + j];
      losses[t] = l;
    }
    // Subgradient of the top-tail average: the largest losses carry unit
    // weight until (1 - alpha) n of mass is used; ties are broken by index.
    for (std::size_t t = 0; t < n; ++t) idx[t] = t;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return losses[a] > losses[b]; });
    const double tail_mass = (1.0 - alpha) * static_cast<double>(n);
    double mass = tail_mass;
    Weights g(d, 0.0);
    for (std::size_t i = 0; i < n && mass > 0.0; ++i) {
      const double take = std::min(1.0, mass);
      mass -= take;
      for (std::size_t j = 0; j < d; ++j) g[j] -= take * returns[idx[i] * d + j] / tail_mass;
    }
    double gnorm = 0.0;
    for (double x : g) gnorm += x * x;
    gnorm = std::sqrt(gnorm);
    if (gnorm == 0.0) break;
    const double step = 0.5 / std::sqrt(static_cast<double>(r.iterations));
    Weights z(d);
    for (std::size_t j = 0; j < d; ++j) z[j] = w[j] - step * g[j] / gnorm;
    w = project_simplex(z);
    const double f = cvar_portfolio_objective(returns, d, w, alpha);
    if (f < r.objective) {
      r.objective = f;
      r.weights = w;
    }
    if (r.iterations % kWindow == 0) {
      if (r.iterations >= kWarmup && window_start - r.objective < 1e-9) break;
      window_start = r.objective;
    }
  }
  return r;
}

namespace detail {

/// Inverse-variance weights within a cluster and the resulting cluster variance.
inline double cluster_variance(const CovEstimate& c, const std::vector<std::size_t>& items) {
  std::vector<double> ivp(items.size());
  double total = 0.0;
  for (std::size_t i = 0; i < items.size(); ++i) total += ivp[i] = 1.0 / c.at(items[i], items[i]);
  double v = 0.0;
  for (std::size_t a = 0; a < items.size(); ++a)
    for (std::size_t b = 0; b < items.size(); ++b)
      v += (ivp[a] / total) * c.at(items[a], items[b]) * (ivp[b] / total);
  return v;
}

}  // namespace detail

/// Single-linkage order of the assets (quasi-diagonalisation). Each merge
/// joins the closest pair of clusters, ties broken by the smallest member
/// index; within a merge the cluster holding the smaller index goes first.
inline std::vector<std::size_t> hrp_order(const CovEstimate& c) {
  const std::size_t d = c.dim();
  std::vector<double> dist(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double rho = std::clamp(c.at(i, j) / std::sqrt(c.at(i, i) * c.at(j, j)), -1.0, 1.0);
      dist[i * d + j] = std::sqrt(std::max(0.0, 0.5 * (1.0 - rho)));
    }
  std::vector<std::vector<std::size_t>> clusters;
  for (std::size_t i = 0; i < d; ++i) clusters.push_back({i});
  auto min_member = [](const std::vector<std::size_t>& cl) { return *std::min_element(cl.begin(), cl.end()); };
  while (clusters.size() > 1) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t ba = 0, bb = 1;
    std::pair<std::size_t, std::size_t> best_key{d, d};
    for (std::size_t a = 0; a < clusters.size(); ++a)
      for (std::size_t b = a + 1; b < clusters.size(); ++b) {
        double link = std::numeric_limits<double>::infinity();
        for (std::size_t i : clusters[a])
          for (std::size_t j : clusters[b]) link = std::min(link, dist[i * d + j]);
        const std::size_t ma = min_member(clusters[a]), mb = min_member(clusters[b]);
        const std::pair<std::size_t, std::size_t> key{std::min(ma, mb), std::max(ma, mb)};
        if (link < best || (link == best && key < best_key)) {
          best = link;
          best_key = key;
          ba = a;
          bb = b;
        }
      }
    auto first = clusters[ba], second = clusters[bb];
    if (min_member(second) < min_member(first)) std::swap(first, second);
    first.insert(first.end(), second.begin(), second.end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bb));
    clusters[ba] = std::move(first);
  }
  return clusters.front();
}

/// Hierarchical risk parity: recursive bisection of the single-linkage order
/// with inverse-variance cluster weights.
inline Weights hrp(const CovEstimate& c) {
  detail::check_cov(c);
  const std::size_t d = c.dim();
  for (std::size_t i = 0; i < d; ++i)
    if (!(c.at(i, i) > 0.0)) fail(ErrorCode::InvalidCov, "zero-variance asset " + std::to_string(i));
  if (d == 1) return {1.0};
  const auto order = hrp_order(c);
  Weights w(d, 1.0);
  std::vector<std::vector<std::size_t>> stack{order};
  while (!stack.empty()) {
    auto items = std::move(stack.back());
    stack.pop_back();
    if (items.size() < 2) continue;
    const std::size_t half = items.size() / 2;
    std::vector<std::size_t> left(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(half));
    std::vector<std::size_t> right(items.begin() + static_cast<std::ptrdiff_t>(half), items.end());
    const double vl = detail::cluster_variance(c, left), vr = detail::cluster_variance(c, right);
    const double a = 1.0 - vl / (vl + vr);
    for (std::size_t i : left) w[i] *= a;
    for (std::size_t i : right) w[i] *= 1.0 - a;
    stack.push_back(std::move(left));
    stack.push_back(std::move(right));
  }
  return w;
}

}  // namespace sigalloc
