#pragma once

// Adam training on the batch objective with early stopping on the validation
// objective.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

#include "sigalloc/objective.hpp"
#include "sigalloc/parallel.hpp"

namespace sigalloc {

struct TrainOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  /// Scenarios per gradient task. Gradients are summed within a chunk and
  /// chunks are reduced in index order, so results do not depend on the
  /// number of worker threads.
  std::size_t chunk_size = 8;
  Variant variant = Variant::full;
  std::size_t threads = 0;  // 0 = worker_count()
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_objective = 0.0;
  double val_objective = 0.0;
  double gamma = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  SitParameters params;  // best validation parameters
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
};

inline void write_epoch_line(std::ostream& out, const EpochRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu\t%.10g\t%.10g\t%.10g\t%.3f\n", r.epoch, r.train_objective, r.val_objective,
                r.gamma, r.seconds);
  out << buf;
}

namespace detail {

class Adam {
 public:
  Adam(const SitParameters& p, const TrainOptions& o) : opts_(o) {
    for (const auto& [name, t] : p.entries()) {
      m_.emplace_back(t.numel(), 0.0);
      v_.emplace_back(t.numel(), 0.0);
    }
  }

  void step(SitParameters& p, const std::vector<std::vector<double>>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    auto& entries = p.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      auto data = entries[i].second.data();
      for (std::size_t j = 0; j < data.size(); ++j) {
        const double g = grads[i][j];
        m_[i][j] = opts_.beta1 * m_[i][j] + (1.0 - opts_.beta1) * g;
        v_[i][j] = opts_.beta2 * v_[i][j] + (1.0 - opts_.beta2) * g * g;
        data[j] -= opts_.lr * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + opts_.eps);
      }
    }
  }

 private:
  TrainOptions opts_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace detail

/// Objective value and gradient of the batch objective over `batch`, computed
/// in fixed chunks on private parameter copies.
inline double batch_gradient(std::span<const Scenario* const> batch, const SitParameters& params, const SitConfig& cfg,
                             const ForwardOptions& opts, std::size_t chunk_size, std::size_t threads,
                             std::vector<std::vector<double>>& grads) {
  if (batch.empty()) fail(ErrorCode::EmptyBatch, "empty training batch");
  chunk_size = std::max<std::size_t>(1, chunk_size);
  const std::size_t n_chunks = (batch.size() + chunk_size - 1) / chunk_size;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<std::vector<std::vector<double>>> chunk_grads(n_chunks);
  std::vector<double> chunk_values(n_chunks, 0.0);
  parallel_for(
      n_chunks,
      [&](std::size_t c) {
        SitParameters local = params.clone();
        Tensor total;
        for (std::size_t i = c * chunk_size; i < std::min(batch.size(), (c + 1) * chunk_size); ++i) {
          ForwardOptions o = opts;
          o.dropout_seed = scenario_dropout_seed(opts.dropout_seed, i);
          Tensor term = scenario_objective(*batch[i], local, cfg, o);
          total = total.defined() ? ad::add(total, term) : term;
        }
        total = ad::scale(total, inv_n);
        ad::backward(total);
        chunk_values[c] = total.item();
        auto& g = chunk_grads[c];
        for (const auto& [name, t] : local.entries()) {
          auto tg = t.grad();
          g.emplace_back(tg.begin(), tg.end());
          g.back().resize(t.numel(), 0.0);
        }
      },
      threads);
  grads.assign(params.size(), {});
  for (std::size_t i = 0; i < params.size(); ++i) grads[i].assign(params.entries()[i].second.numel(), 0.0);
  double value = 0.0;
  for (std::size_t c = 0; c < n_chunks; ++c) {
    value += chunk_values[c];
    for (std::size_t i = 0; i < grads.size(); ++i)
      for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i][j] += chunk_grads[c][i][j];
  }
  return value;
}

/// Trains from `init` (or a fresh initialisation from `seed`) and returns the
/// parameters with the best validation objective. Improvement means a strict
/// decrease; training stops after `patience` epochs without one.
inline TrainResult train(std::span<const Scenario> train_set, std::span<const Scenario> val_set, const SitConfig& cfg,
                         std::uint64_t seed, const TrainOptions& opts = {}, std::ostream* log = nullptr,
                         const SitParameters* init = nullptr) {
  if (train_set.empty()) fail(ErrorCode::InsufficientHistory, "no training scenarios");
  if (val_set.empty()) fail(ErrorCode::InsufficientHistory, "no validation scenarios");
  if (opts.batch_size == 0) fail(ErrorCode::InvalidConfig, "batch_size must be >= 1");
  cfg.validate();
  SitParameters params = init ? init->clone() : init_parameters(cfg, seed);
  detail::Adam adam(params, opts);
  TrainResult result;
  result.params = params.clone();
  result.best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<std::size_t> order(train_set.size());
  std::vector<std::vector<double>> grads;
  const bool gate_learnable = opts.variant != Variant::no_gate;
  for (std::size_t epoch = 1; epoch <= opts.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(hash_combine(seed, 0x5348554646ULL + epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    double train_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
      std::vector<const Scenario*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + opts.batch_size); ++i)
        batch.push_back(&train_set[order[i]]);
      ForwardOptions fo;
      fo.train = true;
      fo.variant = opts.variant;
      fo.dropout_seed = hash_combine(hash_combine(seed, epoch), batches);
      train_sum += batch_gradient(batch, params, cfg, fo, opts.chunk_size, opts.threads, grads);
      if (!gate_learnable) {
        const auto& entries = params.entries();
        for (std::size_t i = 0; i < entries.size(); ++i)
          if (entries[i].first == "gate_raw") std::fill(grads[i].begin(), grads[i].end(), 0.0);
      }
      adam.step(params, grads);
      ++batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_objective = train_sum / static_cast<double>(batches);
    rec.val_objective = evaluate_objective(val_set, params, cfg, opts.variant);
    rec.gamma = gate_learnable ? params.gate() : 1.0;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(rec);
    if (log) write_epoch_line(*log, rec);
    if (rec.val_objective < result.best_val) {
      result.best_val = rec.val_objective;
      result.best_epoch = epoch;
      result.params = params.clone();
      since_best = 0;
    } else if (++since_best >= opts.patience) {
      break;
    }
  }
  return result;
}

}  // namespace sigalloc
