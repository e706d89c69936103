#pragma once

// Signature-informed transformer: fused token embeddings, causal temporal
// attention per asset, signature-biased attention across assets, and a
// softmax allocation head.

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sigalloc/autodiff.hpp"
#include "sigalloc/error.hpp"
#include "sigalloc/rng.hpp"
#include "sigalloc/sigcore.hpp"

namespace sigalloc {

using ad::Tensor;

/// Module-drop variants used by the ablation harness.
enum class Variant { full, no_cvar, no_asset_attn, no_bias, no_gate };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_cvar: return "no_cvar";
    case Variant::no_asset_attn: return "no_asset_attn";
    case Variant::no_bias: return "no_bias";
    case Variant::no_gate: return "no_gate";
  }
  return "full";
}

inline Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::full, Variant::no_cvar, Variant::no_asset_attn, Variant::no_bias, Variant::no_gate})
    if (variant_name(v) == name) return v;
  fail(ErrorCode::InvalidConfig, "unknown variant '" + name + "'");
}

struct SitConfig {
  std::size_t assets = 8;        // d
  std::size_t slices = 8;        // H, lookback slices
  std::size_t horizon = 20;      // K, forecast steps
  std::size_t period = 5;        // P, observations per slice and per rebalance period
  int slice_level = 3;           // signature level of per-asset slices
  int cross_level = 2;           // signature level of pairwise cross-signatures
  std::size_t calendar_dims = 6; // F
  std::size_t d_model = 16;
  std::size_t d_ff = 16;
  std::size_t n_layers = 1;
  std::size_t n_heads = 2;
  std::size_t d_beta = 0;        // 0 selects d_k
  std::size_t hidden_c = 16;     // width of the bias MLPs
  double tau = 1.0;
  double dropout = 0.1;
  double cvar_alpha = 0.95;

  std::size_t d_k() const { return d_model / n_heads; }
  std::size_t beta_dim() const { return d_beta == 0 ? d_k() : d_beta; }
  /// Slice paths are time-augmented, hence two channels.
  std::size_t slice_sig_dim() const { return signature_length(2, slice_level); }
  std::size_t cross_sig_dim() const { return signature_length(2, cross_level); }
  /// Observations spanned by one feature window (shared endpoints).
  std::size_t window_rows() const { return slices * period + 1; }

  void validate() const {
    auto bad = [](const std::string& msg) { fail(ErrorCode::InvalidConfig, msg); };
    if (assets == 0) bad("assets must be >= 1");
    if (slices == 0) bad("slices must be >= 1");
    if (horizon == 0) bad("horizon must be >= 1");
    if (period == 0) bad("period must be >= 1");
    if (slice_level < 1 || slice_level > kMaxSignatureLevel) bad("slice_level outside [1, 4]");
    if (cross_level < 2 || cross_level > kMaxSignatureLevel) bad("cross_level outside [2, 4]");
    if (n_heads == 0 || d_model == 0 || d_model % n_heads != 0) bad("d_model must be divisible by n_heads");
    if (d_ff == 0 || hidden_c == 0 || n_layers == 0) bad("d_ff, hidden_c and n_layers must be positive");
    if (!(tau > 0.0)) bad("tau must be > 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) bad("dropout must lie in [0, 1)");
    if (!(cvar_alpha > 0.0 && cvar_alpha < 1.0)) bad("cvar_alpha must lie in (0, 1)");
  }
};

/// Inputs for one decision time.
struct ScenarioFeatures {
  std::vector<double> slice_sigs;  // H x d x slice_sig_dim
  std::vector<double> cross_sigs;  // d x d x cross_sig_dim
  std::vector<double> calendar;    // H x F

  void check(const SitConfig& cfg) const {
    if (slice_sigs.size() != cfg.slices * cfg.assets * cfg.slice_sig_dim())
      fail(ErrorCode::ShapeError, "slice signatures do not match H x d x d_sig");
    if (cross_sigs.size() != cfg.assets * cfg.assets * cfg.cross_sig_dim())
      fail(ErrorCode::ShapeError, "cross signatures do not match d x d x d_cross");
    if (calendar.size() != cfg.slices * cfg.calendar_dims)
      fail(ErrorCode::ShapeError, "calendar features do not match H x F");
  }
};

/// Named trainable tensors in a fixed order.
class SitParameters {
 public:
  void add(const std::string& name, Tensor t) {
    if (index_.count(name)) fail(ErrorCode::InvalidConfig, "duplicate parameter " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(t));
  }
  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorCode::InvalidConfig, "no parameter named " + name);
    return entries_[it->second].second;
  }
  Tensor& get(const std::string& name) {
    return const_cast<Tensor&>(static_cast<const SitParameters&>(*this).get(name));
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.numel();
    return n;
  }

  /// Deep copy with fresh leaf tensors and no gradients.
  SitParameters clone() const {
    SitParameters out;
    for (const auto& [name, t] : entries_)
      out.add(name, Tensor::parameter(t.shape(), {t.value().begin(), t.value().end()}));
    return out;
  }
  void zero_grad() {
    for (auto& [name, t] : entries_) t.zero_grad();
  }
  /// Current gate value softplus(gate_raw).
  double gate() const { return ad::softplus(get("gate_raw").value()[0]); }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

namespace detail {

inline Tensor uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::parameter({rows, cols}, std::move(v));
}

inline Tensor filled(std::size_t n, double value) { return Tensor::parameter({n}, std::vector<double>(n, value)); }

inline void add_linear(SitParameters& p, Rng& rng, const std::string& prefix, std::size_t in, std::size_t out,
                       bool with_bias = true) {
  p.add(prefix + ".w", uniform_matrix(rng, in, out));
  if (with_bias) p.add(prefix + ".b", filled(out, 0.0));
}

inline void add_norm(SitParameters& p, const std::string& prefix, std::size_t n) {
  p.add(prefix + ".g", filled(n, 1.0));
  p.add(prefix + ".b", filled(n, 0.0));
}

inline std::string layer_prefix(std::size_t layer) { return "layer" + std::to_string(layer); }

}  // namespace detail

/// Weight matrices ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0, layer
/// norms identity, asset embeddings ~ N(0, 0.02^2), gate at softplus^-1(1).
inline SitParameters init_parameters(const SitConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  SitParameters p;
  const std::size_t dm = cfg.d_model;
  const std::size_t bias_out = cfg.n_heads * cfg.beta_dim();
  detail::add_linear(p, rng, "sig_proj", cfg.slice_sig_dim(), dm);
  detail::add_linear(p, rng, "date_proj", cfg.calendar_dims, dm);
  {
    std::vector<double> e(cfg.assets * dm);
    for (double& x : e) x = rng.normal(0.0, 0.02);
    p.add("asset_embed", Tensor::parameter({cfg.assets, dm}, std::move(e)));
  }
  detail::add_linear(p, rng, "input_proj", 3 * dm, dm, false);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    for (const char* block : {"temporal", "asset"}) {
      const std::string pre = detail::layer_prefix(l) + "." + block;
      for (const char* w : {"wq", "wk", "wv", "wo"}) detail::add_linear(p, rng, pre + "." + w, dm, dm, false);
      detail::add_norm(p, pre + ".ln1", dm);
      detail::add_linear(p, rng, pre + ".ffn1", dm, cfg.d_ff);
      detail::add_linear(p, rng, pre + ".ffn2", cfg.d_ff, dm);
      detail::add_norm(p, pre + ".ln2", dm);
    }
    const std::string pre = detail::layer_prefix(l) + ".asset";
    detail::add_linear(p, rng, pre + ".mlp_beta1", cfg.cross_sig_dim(), cfg.hidden_c);
    detail::add_linear(p, rng, pre + ".mlp_beta2", cfg.hidden_c, bias_out);
    detail::add_linear(p, rng, pre + ".mlp_q1", dm, cfg.hidden_c);
    detail::add_linear(p, rng, pre + ".mlp_q2", cfg.hidden_c, bias_out);
  }
  p.add("gate_raw", Tensor::parameter({1}, {ad::softplus_inverse(1.0)}));
  detail::add_linear(p, rng, "head", dm, cfg.horizon);
  return p;
}

/// Per-call settings of a forward pass.
struct ForwardOptions {
  bool train = false;
  std::uint64_t dropout_seed = 0;
  Variant variant = Variant::full;
};

namespace detail {

/// Hands out distinct dropout streams within one forward pass.
struct DropoutScope {
  const ForwardOptions& opts;
  double p;
  std::uint64_t next = 0;
  Tensor apply(const Tensor& x) { return ad::dropout(x, p, opts.train, opts.dropout_seed, next++); }
};

inline Tensor linear(const Tensor& x, const SitParameters& p, const std::string& prefix) {
  Tensor y = ad::matmul(x, p.get(prefix + ".w"));
  if (p.contains(prefix + ".b")) y = ad::add_bias(y, p.get(prefix + ".b"));
  return y;
}

inline Tensor mlp2(const Tensor& x, const SitParameters& p, const std::string& first, const std::string& second) {
  return linear(ad::relu(linear(x, p, first)), p, second);
}

inline Tensor norm(const Tensor& x, const SitParameters& p, const std::string& prefix) {
  return ad::layer_norm(x, p.get(prefix + ".g"), p.get(prefix + ".b"));
}

/// Post-norm residual tail shared by both blocks: LN(x + drop(attn)), then
/// LN(y + drop(FFN(y))).
inline Tensor residual_tail(const Tensor& x, const Tensor& attn_out, const SitParameters& p, const std::string& pre,
                            DropoutScope& drop) {
  Tensor y = norm(ad::add(x, drop.apply(attn_out)), p, pre + ".ln1");
  Tensor f = mlp2(y, p, pre + ".ffn1", pre + ".ffn2");
  return norm(ad::add(y, drop.apply(f)), p, pre + ".ln2");
}

inline std::vector<char> causal_mask(std::size_t n) {
  std::vector<char> mask(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) mask[i * n + j] = 1;
  return mask;
}

inline void check_tokens(const Tensor& x, const SitConfig& cfg) {
  if (x.rank() != 3 || x.dim(0) != cfg.slices || x.dim(1) != cfg.assets || x.dim(2) != cfg.d_model)
    fail(ErrorCode::ShapeError, "expected tokens [H, d, d_model], got " + ad::shape_str(x.shape()));
}

}  // namespace detail

/// Tokens x_{k,j} = W_proj [e_sig(k,j) ++ e_date(k) ++ e_asset(j)], shape [H, d, d_model].
inline Tensor embed(const ScenarioFeatures& f, const SitParameters& p, const SitConfig& cfg) {
  f.check(cfg);
  const std::size_t H = cfg.slices, d = cfg.assets;
  Tensor sigs = Tensor::constant({H * d, cfg.slice_sig_dim()}, f.slice_sigs);
  Tensor cal = Tensor::constant({H, cfg.calendar_dims}, f.calendar);
  Tensor e_sig = detail::linear(sigs, p, "sig_proj");
  Tensor e_date = detail::linear(cal, p, "date_proj");
  std::vector<std::size_t> slice_of(H * d), asset_of(H * d);
  for (std::size_t k = 0; k < H; ++k)
    for (std::size_t j = 0; j < d; ++j) {
      slice_of[k * d + j] = k;
      asset_of[k * d + j] = j;
    }
  Tensor fused = ad::concat({e_sig, ad::take(e_date, slice_of), ad::take(p.get("asset_embed"), asset_of)}, 1);
  return ad::reshape(ad::matmul(fused, p.get("input_proj.w")), {H, d, cfg.d_model});
}

/// Causal multi-head self-attention along the slice axis, assets as batch.
inline Tensor temporal_attention(const Tensor& x, const SitParameters& p, const SitConfig& cfg, std::size_t layer,
                                 detail::DropoutScope& drop) {
  detail::check_tokens(x, cfg);
  const std::size_t H = cfg.slices, d = cfg.assets, nh = cfg.n_heads, dk = cfg.d_k(), dm = cfg.d_model;
  const std::string pre = detail::layer_prefix(layer) + ".temporal";
  Tensor flat = ad::reshape(x, {H * d, dm});
  auto heads = [&](const char* w) {
    Tensor t = ad::reshape(ad::matmul(flat, p.get(pre + "." + w + ".w")), {H, d, nh, dk});
    return ad::reshape(ad::permute(t, {1, 2, 0, 3}), {d * nh, H, dk});
  };
  Tensor q = heads("wq"), k = heads("wk"), v = heads("wv");
  Tensor scores = ad::scale(ad::bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dk)));
  scores = ad::masked_fill(scores, detail::causal_mask(H), -std::numeric_limits<double>::infinity());
  Tensor ctx = ad::bmm(ad::softmax_last(scores), v);
  ctx = ad::reshape(ad::permute(ad::reshape(ctx, {d, nh, H, dk}), {2, 0, 1, 3}), {H * d, dm});
  Tensor out = ad::matmul(ctx, p.get(pre + ".wo.w"));
  return ad::reshape(detail::residual_tail(flat, out, p, pre, drop), {H, d, dm});
}

inline Tensor temporal_attention(const Tensor& x, const SitParameters& p, const SitConfig& cfg,
                                 std::size_t layer = 0) {
  ForwardOptions opts;
  detail::DropoutScope drop{opts, cfg.dropout};
  return temporal_attention(x, p, cfg, layer, drop);
}

/// b_{k,h,j,l} = <qdyn_{k,j,h}, beta_{j,l,h}>.
/// qdyn: [H, N_H, d, d_beta], beta: [N_H, d, d, d_beta] -> [H, N_H, d, d].
inline Tensor signature_bias(const Tensor& qdyn, const Tensor& beta) {
  if (qdyn.rank() != 4 || beta.rank() != 4 || qdyn.dim(1) != beta.dim(0) || qdyn.dim(2) != beta.dim(1) ||
      beta.dim(1) != beta.dim(2) || qdyn.dim(3) != beta.dim(3))
    fail(ErrorCode::ShapeError,
         "signature_bias: " + ad::shape_str(qdyn.shape()) + " vs " + ad::shape_str(beta.shape()));
  const std::size_t H = qdyn.dim(0), nh = qdyn.dim(1), d = qdyn.dim(2), db = qdyn.dim(3);
  Tensor qb = ad::reshape(ad::permute(qdyn, {1, 2, 0, 3}), {nh * d, H, db});
  Tensor bb = ad::reshape(beta, {nh * d, d, db});
  Tensor b = ad::reshape(ad::bmm(qb, bb, true), {nh, d, H, d});
  return ad::permute(b, {2, 0, 1, 3});
}

/// Row-wise softmax of QK^T/sqrt(d_k) + gamma * B over the asset axis.
/// q, k: [H, N_H, d, d_k]; `bias` [H, N_H, d, d] and `gamma` [1] may be
/// left undefined for plain attention. Returns [H, N_H, d, d].
inline Tensor signature_attention_weights(const Tensor& q, const Tensor& k, const Tensor& bias, const Tensor& gamma) {
  if (q.rank() != 4 || q.shape() != k.shape())
    fail(ErrorCode::ShapeError, "attention q/k: " + ad::shape_str(q.shape()) + " vs " + ad::shape_str(k.shape()));
  const std::size_t H = q.dim(0), nh = q.dim(1), d = q.dim(2), dk = q.dim(3);
  Tensor qf = ad::reshape(q, {H * nh, d, dk});
  Tensor kf = ad::reshape(k, {H * nh, d, dk});
  Tensor logits = ad::reshape(ad::scale(ad::bmm(qf, kf, true), 1.0 / std::sqrt(static_cast<double>(dk))),
                              {H, nh, d, d});
  if (bias.defined()) logits = ad::add(logits, ad::mul_scalar(bias, gamma));
  return ad::softmax_last(logits);
}

/// Gate value for a variant: softplus(gate_raw), or the constant 1 when the
/// gate is dropped.
inline Tensor gate_tensor(const SitParameters& p, Variant variant) {
  if (variant == Variant::no_gate) return Tensor::scalar(1.0);
  return ad::softplus(p.get("gate_raw"));
}

/// Signature-informed multi-head attention across assets, slices as batch.
inline Tensor asset_attention(const Tensor& x, const std::vector<double>& cross_sigs, const SitParameters& p,
                              const SitConfig& cfg, std::size_t layer, detail::DropoutScope& drop,
                              Variant variant = Variant::full) {
  detail::check_tokens(x, cfg);
  const std::size_t H = cfg.slices, d = cfg.assets, nh = cfg.n_heads, dk = cfg.d_k(), dm = cfg.d_model;
  const std::size_t db = cfg.beta_dim();
  if (cross_sigs.size() != d * d * cfg.cross_sig_dim())
    fail(ErrorCode::ShapeError, "cross signatures do not match d x d x d_cross");
  const std::string pre = detail::layer_prefix(layer) + ".asset";
  Tensor flat = ad::reshape(x, {H * d, dm});
  auto heads = [&](const char* w) {
    Tensor t = ad::reshape(ad::matmul(flat, p.get(pre + "." + w + ".w")), {H, d, nh, dk});
    return ad::permute(t, {0, 2, 1, 3});
  };
  Tensor q = heads("wq"), k = heads("wk"), v = heads("wv");
  Tensor bias, gamma;
  if (variant != Variant::no_bias) {
    Tensor c = Tensor::constant({d * d, cfg.cross_sig_dim()}, cross_sigs);
    Tensor beta = detail::mlp2(c, p, pre + ".mlp_beta1", pre + ".mlp_beta2");
    beta = ad::permute(ad::reshape(beta, {d, d, nh, db}), {2, 0, 1, 3});
    Tensor qdyn = detail::mlp2(flat, p, pre + ".mlp_q1", pre + ".mlp_q2");
    qdyn = ad::permute(ad::reshape(qdyn, {H, d, nh, db}), {0, 2, 1, 3});
    bias = signature_bias(qdyn, beta);
    gamma = gate_tensor(p, variant);
  }
  Tensor attn = signature_attention_weights(q, k, bias, gamma);
  Tensor ctx = ad::bmm(ad::reshape(attn, {H * nh, d, d}), ad::reshape(v, {H * nh, d, dk}));
  ctx = ad::reshape(ad::permute(ad::reshape(ctx, {H, nh, d, dk}), {0, 2, 1, 3}), {H * d, dm});
  Tensor out = ad::matmul(ctx, p.get(pre + ".wo.w"));
  return ad::reshape(detail::residual_tail(flat, out, p, pre, drop), {H, d, dm});
}

inline Tensor asset_attention(const Tensor& x, const std::vector<double>& cross_sigs, const SitParameters& p,
                              const SitConfig& cfg, std::size_t layer = 0, Variant variant = Variant::full) {
  ForwardOptions opts;
  detail::DropoutScope drop{opts, cfg.dropout};
  return asset_attention(x, cross_sigs, p, cfg, layer, drop, variant);
}

/// Closed form of the derivative of alpha_{j,l} with respect to beta_{j,l}
/// in the direction of the query q_j: gamma * alpha (1 - alpha) * |q_j|^2.
inline double bias_directional_derivative(double alpha_jl, std::span<const double> q, double gamma) {
  double qq = 0.0;
  for (double x : q) qq += x * x;
  return gamma * alpha_jl * (1.0 - alpha_jl) * qq;
}

/// d alpha_{j,l} / d gamma = alpha_{j,l} (b_{j,l} - sum_m alpha_{j,m} b_{j,m})
/// for one attention row `alpha` and its bias row `b`.
inline double gate_derivative(std::span<const double> alpha, std::span<const double> b, std::size_t l) {
  double avg = 0.0;
  for (std::size_t m = 0; m < alpha.size(); ++m) avg += alpha[m] * b[m];
  return alpha[l] * (b[l] - avg);
}

struct Allocation {
  Tensor logits;   // [K, d], predicted-return logits mu_hat
  Tensor weights;  // [K, d], softmax(mu_hat / tau) per row
};

/// Allocation weights from stored logits at a given temperature.
inline std::vector<double> allocate(std::span<const double> logits, std::size_t assets, double tau) {
  Tensor mu = Tensor::constant({logits.size() / assets, assets}, {logits.begin(), logits.end()});
  Tensor w = ad::softmax_last(ad::scale(mu, 1.0 / tau));
  return {w.value().begin(), w.value().end()};
}

inline Allocation forward(const ScenarioFeatures& f, const SitParameters& p, const SitConfig& cfg,
                          const ForwardOptions& opts = {}) {
  detail::DropoutScope drop{opts, cfg.dropout};
  Tensor x = embed(f, p, cfg);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    x = temporal_attention(x, p, cfg, l, drop);
    if (opts.variant != Variant::no_asset_attn) x = asset_attention(x, f.cross_sigs, p, cfg, l, drop, opts.variant);
  }
  Tensor last = ad::reshape(ad::slice(x, 0, cfg.slices - 1, 1), {cfg.assets, cfg.d_model});
  Tensor mu = ad::transpose(detail::linear(last, p, "head"));
  Tensor w = ad::softmax_last(ad::scale(mu, 1.0 / cfg.tau));
  return {mu, w};
}

}  // namespace sigalloc
