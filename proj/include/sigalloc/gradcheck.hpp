#pragma once

// Central finite-difference checks of reverse-mode gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sigalloc/autodiff.hpp"
#include "sigalloc/model.hpp"

namespace sigalloc {

/// |a - f| / max(|a|, |f|, floor). The floor keeps coordinates whose true
/// derivative is zero from turning rounding noise into huge relative errors.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "name[index]"
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares the tape gradient of `loss_fn` with central differences of step
/// h for every scalar of every parameter.
inline GradCheckResult check_gradients(SitParameters& params, const std::function<Tensor(const SitParameters&)>& loss_fn,
                                       double h = 1e-5, double floor = 1e-6) {
  params.zero_grad();
  Tensor loss = loss_fn(params);
  ad::backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& [name, t] : params.entries()) {
    std::vector<double> g(t.grad().begin(), t.grad().end());
    g.resize(t.numel(), 0.0);
    analytic.push_back(std::move(g));
  }
  GradCheckResult res;
  auto& entries = params.entries();
  for (std::size_t p = 0; p < entries.size(); ++p) {
    auto data = entries[p].second.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + h;
      const double up = loss_fn(params).item();
      data[i] = orig - h;
      const double down = loss_fn(params).item();
      data[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(analytic[p][i], numeric, floor);
      ++res.checked;
      if (err > res.max_rel_error || res.worst.empty()) {
        res.max_rel_error = std::max(res.max_rel_error, err);
        if (err >= res.max_rel_error) {
          res.worst = entries[p].first + "[" + std::to_string(i) + "]";
          res.worst_analytic = analytic[p][i];
          res.worst_numeric = numeric;
        }
      }
    }
  }
  params.zero_grad();
  return res;
}

}  // namespace sigalloc
