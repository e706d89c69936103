#pragma once

// Dense float64 tensors with tape-style reverse-mode differentiation.
//
// Each op that touches a tensor requiring gradients records its parents and a
// backward closure on the result node. backward() walks the recorded graph in
// reverse topological order. Leaf gradients accumulate across backward calls
// until zero_grad(); interior gradients are reset on every call.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sigalloc/error.hpp"
#include "sigalloc/rng.hpp"

namespace sigalloc::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<double> data) { return make_leaf(std::move(shape), std::move(data), false); }
  static Tensor parameter(Shape shape, std::vector<double> data) { return make_leaf(std::move(shape), std::move(data), true); }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = ad::numel(shape);
    return make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor scalar(double v) { return constant({1}, {v}); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }

  std::span<const double> value() const { return node_->value; }
  /// Mutable storage. Only meaningful on leaves (optimiser updates, tests).
  std::span<double> data() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> grad_mut() {
    node_->ensure_grad();
    return node_->grad;
  }
  double item() const {
    if (numel() != 1) fail(ErrorCode::NotScalar, "item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  static Tensor make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
    if (ad::numel(shape) != data.size())
      fail(ErrorCode::ShapeError, "data length " + std::to_string(data.size()) + " != numel of " + shape_str(shape));
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    node->leaf = true;
    return Tensor(std::move(node));
  }

  std::shared_ptr<Node> node_;
};

namespace detail {

/// Builds a result node; records parents and the backward closure only when
/// some input requires gradients.
inline Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->leaf = false;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (any) {
    node->requires_grad = true;
    for (auto& t : inputs) node->parents.push_back(t.ptr());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    fail(ErrorCode::ShapeError, std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

/// Gather with a precomputed source index per output element.
inline Tensor gather(const Tensor& a, Shape out_shape, std::vector<std::size_t> src) {
  std::vector<double> out(src.size());
  const auto in = a.value();
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = in[src[i]];
  auto idx = std::make_shared<std::vector<std::size_t>>(std::move(src));
  return make_result(std::move(out_shape), std::move(out), {a}, [idx](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < idx->size(); ++i) p.grad[(*idx)[i]] += self.grad[i];
  });
}

/// Splits `shape` around `axis` into (outer, axis length, inner).
inline std::tuple<std::size_t, std::size_t, std::size_t> split_axis(const Shape& shape, std::size_t axis) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  return {outer, shape[axis], inner};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      Node& p = detail::parent(self, k);
      if (!p.requires_grad) continue;
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      Node& p = detail::parent(self, k);
      if (!p.requires_grad) continue;
      p.ensure_grad();
      const double sign = k == 0 ? 1.0 : -1.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += sign * self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = detail::parent(self, 0);
    Node& pb = detail::parent(self, 1);
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.value[i];
    }
  });
}

/// a * factor for a compile-time-constant factor.
inline Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * factor;
  return detail::make_result(a.shape(), std::move(out), {a}, [factor](Node& self) {
    Node& p = detail::parent(self, 0);
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += factor * self.grad[i];
  });
}

/// a + offset, offset constant.
inline Tensor shift(const Tensor& a, double offset) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + offset;
  return detail::make_result(a.shape(), std::move(out), {a}, [](Node& self) {
    Node& p = detail::parent(self, 0);
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

/// a * s where s is a one-element tensor.
inline Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) fail(ErrorCode::ShapeError, "mul_scalar: scalar operand has shape " + shape_str(s.shape()));
  const double sv = s.value()[0];
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * sv;
  return detail::make_result(a.shape(), std::move(out), {a, s}, [](Node& self) {
    Node& pa = detail::parent(self, 0);
    Node& ps = detail::parent(self, 1);
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * ps.value[0];
    }
    if (ps.requires_grad) {
      ps.ensure_grad();
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * pa.value[i];
      ps.grad[0] += acc;
    }
  });
}

/// x[..., n] + bias[n], bias broadcast over the leading axes.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() == 0 || bias.rank() != 1 || bias.dim(0) != x.shape().back())
    fail(ErrorCode::ShapeError, "add_bias: " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
  const std::size_t n = bias.dim(0);
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] + bias.value()[i % n];
  return detail::make_result(x.shape(), std::move(out), {x, bias}, [n](Node& self) {
    Node& px = detail::parent(self, 0);
    Node& pb = detail::parent(self, 1);
    if (px.requires_grad) {
      px.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i % n] += self.grad[i];
    }
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.value()[i], 0.0);
  return detail::make_result(a.shape(), std::move(out), {a}, [](Node& self) {
    Node& p = detail::parent(self, 0);
    p.ensure_grad();
    // Subgradient 0 at the kink.
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (p.value[i] > 0.0) p.grad[i] += self.grad[i];
  });
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
/// Inverse of softplus for y > 0.
inline double softplus_inverse(double y) { return y + std::log(-std::expm1(-y)); }

inline Tensor softplus(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = softplus(a.value()[i]);
  return detail::make_result(a.shape(), std::move(out), {a}, [](Node& self) {
    Node& p = detail::parent(self, 0);
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * sigmoid(p.value[i]);
  });
}

/// Replaces entries where mask is set by `fill`. The mask is tiled over the
/// tensor, so a mask of the trailing-dims size broadcasts over leading axes.
inline Tensor masked_fill(const Tensor& a, std::vector<char> mask, double fill) {
  if (mask.empty() || a.numel() % mask.size() != 0)
    fail(ErrorCode::ShapeError, "masked_fill: mask length does not tile " + shape_str(a.shape()));
  std::vector<double> out(a.value().begin(), a.value().end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i % mask.size()]) out[i] = fill;
  auto m = std::make_shared<std::vector<char>>(std::move(mask));
  return detail::make_result(a.shape(), std::move(out), {a}, [m](Node& self) {
    Node& p = detail::parent(self, 0);
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (!(*m)[i % m->size()]) p.grad[i] += self.grad[i];
  });
}

/// Inverted dropout. The keep mask for element i is a pure function of
/// (seed, stream, i), so results do not depend on evaluation order.
inline Tensor dropout(const Tensor& a, double p, bool train, std::uint64_t seed, std::uint64_t stream) {
  if (!train || p <= 0.0) return a;
  if (p >= 1.0) fail(ErrorCode::ShapeError, "dropout probability must be < 1");
  const double keep_scale = 1.0 / (1.0 - p);
  auto factor = std::make_shared<std::vector<double>>(a.numel());
  const std::uint64_t key = hash_combine(seed, stream);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double u = to_unit(hash_combine(key, i));
    (*factor)[i] = u >= p ? keep_scale : 0.0;
    out[i] = a.value()[i] * (*factor)[i];
  }
  return detail::make_result(a.shape(), std::move(out), {a}, [factor](Node& self) {
    Node& p = detail::parent(self, 0);
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * (*factor)[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.value()) s += v;
  return detail::make_result({1}, {s}, {a}, [](Node& self) {
    Node& p = detail::parent(self, 0);
    p.ensure_grad();
    for (double& g : p.grad) g += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.numel() == 0) fail(ErrorCode::ShapeError, "mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

/// Sum over the last axis.
inline Tensor sum_last(const Tensor& a) {
  if (a.rank() == 0) fail(ErrorCode::ShapeError, "sum_last on rank-0 tensor");
  const std::size_t n = a.shape().back();
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  const std::size_t rows = a.numel() / n;
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r] += a.value()[r * n + c];
  return detail::make_result(std::move(out_shape), std::move(out), {a}, [n](Node& self) {
    Node& p = detail::parent(self, 0);
    p.ensure_grad();
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[i / n];
  });
}

// ---------------------------------------------------------------------------
// Normalisations

inline Tensor softmax_last(const Tensor& a) {
  if (a.rank() == 0) fail(ErrorCode::ShapeError, "softmax on rank-0 tensor");
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.numel() / n;
  std::vector<double> out(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.value().data() + r * n;
    double* y = out.data() + r * n;
    const double m = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += (y[c] = std::exp(x[c] - m));
    for (std::size_t c = 0; c < n; ++c) y[c] /= z;
  }
  return detail::make_result(a.shape(), std::move(out), {a}, [n, rows](Node& self) {
    Node& p = detail::parent(self, 0);
    p.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* gy = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += gy[c] * y[c];
      for (std::size_t c = 0; c < n; ++c) p.grad[r * n + c] += y[c] * (gy[c] - dot);
    }
  });
}

/// Layer normalisation over the last axis with learned gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  if (x.rank() == 0) fail(ErrorCode::ShapeError, "layer_norm on rank-0 tensor");
  const std::size_t n = x.shape().back();
  if (gain.numel() != n || bias.numel() != n)
    fail(ErrorCode::ShapeError, "layer_norm: gain/bias length must equal last axis " + std::to_string(n));
  const std::size_t rows = x.numel() / n;
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.value().data() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += xr[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (xr[c] - mu) * is;
      (*xhat)[r * n + c] = h;
      out[r * n + c] = h * gain.value()[c] + bias.value()[c];
    }
  }
  return detail::make_result(x.shape(), std::move(out), {x, gain, bias}, [n, rows, xhat, inv_std](Node& self) {
    Node& px = detail::parent(self, 0);
    Node& pg = detail::parent(self, 1);
    Node& pb = detail::parent(self, 2);
    if (pg.requires_grad) pg.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    if (px.requires_grad) px.ensure_grad();
    std::vector<double> dh(n);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gy = self.grad.data() + r * n;
      const double* h = xhat->data() + r * n;
      double mean_dh = 0.0, mean_dh_h = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        if (pg.requires_grad) pg.grad[c] += gy[c] * h[c];
        if (pb.requires_grad) pb.grad[c] += gy[c];
        dh[c] = gy[c] * pg.value[c];
        mean_dh += dh[c];
        mean_dh_h += dh[c] * h[c];
      }
      if (!px.requires_grad) continue;
      mean_dh /= static_cast<double>(n);
      mean_dh_h /= static_cast<double>(n);
      const double is = (*inv_std)[r];
      for (std::size_t c = 0; c < n; ++c) px.grad[r * n + c] += is * (dh[c] - mean_dh - h[c] * mean_dh_h);
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    fail(ErrorCode::ShapeError, "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  const double* A = a.value().data();
  const double* B = b.value().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B + p * n;
      double* crow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& pa = detail::parent(self, 0);
    Node& pb = detail::parent(self, 1);
    const double* G = self.grad.data();
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* brow = pb.value.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * brow[j];
          pa.grad[i * k + p] += acc;
        }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa.value[i * k + p];
          double* gb = pb.grad.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gb[j] += av * G[i * n + j];
        }
    }
  });
}

/// Batched product a[B,m,k] x b[B,k,n], or a[B,m,k] x b[B,n,k]^T when transpose_b.
inline Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0))
    fail(ErrorCode::ShapeError, "bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  if ((transpose_b ? b.dim(2) : b.dim(1)) != k)
    fail(ErrorCode::ShapeError, "bmm inner dims: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  // b element (p, j) of batch t.
  auto b_at = [transpose_b, k, n](std::size_t t, std::size_t p, std::size_t j) {
    return transpose_b ? t * n * k + j * k + p : t * k * n + p * n + j;
  };
  std::vector<double> out(batch * m * n, 0.0);
  const double* A = a.value().data();
  const double* B = b.value().data();
  for (std::size_t t = 0; t < batch; ++t)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += A[t * m * k + i * k + p] * B[b_at(t, p, j)];
        out[t * m * n + i * n + j] = acc;
      }
  return detail::make_result({batch, m, n}, std::move(out), {a, b}, [batch, m, k, n, b_at](Node& self) {
    Node& pa = detail::parent(self, 0);
    Node& pb = detail::parent(self, 1);
    const double* G = self.grad.data();
    if (pa.requires_grad) pa.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    for (std::size_t t = 0; t < batch; ++t)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double g = G[t * m * n + i * n + j];
          if (g == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) {
            const std::size_t ai = t * m * k + i * k + p;
            const std::size_t bi = b_at(t, p, j);
            if (pa.requires_grad) pa.grad[ai] += g * pb.value[bi];
            if (pb.requires_grad) pb.grad[bi] += g * pa.value[ai];
          }
        }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (ad::numel(shape) != a.numel())
    fail(ErrorCode::ShapeError, "reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(a.value().begin(), a.value().end());
  return detail::make_result(std::move(shape), std::move(out), {a}, [](Node& self) {
    Node& p = detail::parent(self, 0);
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

/// Axis permutation: output axis i is input axis perm[i].
inline Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm) {
  const Shape& in = a.shape();
  if (perm.size() != in.size()) fail(ErrorCode::ShapeError, "permute: rank mismatch");
  const std::size_t rank = in.size();
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out_shape(rank);
  std::vector<char> seen(rank, 0);
  for (std::size_t i = 0; i < rank; ++i) {
    if (perm[i] >= rank || seen[perm[i]]) fail(ErrorCode::ShapeError, "permute: invalid permutation");
    seen[perm[i]] = 1;
    out_shape[i] = in[perm[i]];
  }
  std::vector<std::size_t> src(a.numel());
  std::vector<std::size_t> counter(rank, 0);
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < rank; ++i) off += counter[i] * in_stride[perm[i]];
    src[flat] = off;
    for (std::size_t i = rank; i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  return detail::gather(a, std::move(out_shape), std::move(src));
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) fail(ErrorCode::ShapeError, "transpose expects a matrix");
  return permute(a, {1, 0});
}

inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= a.rank() || start + length > a.dim(axis) || length == 0)
    fail(ErrorCode::ShapeError, "slice out of range on " + shape_str(a.shape()));
  auto [outer, dim, inner] = detail::split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  std::vector<std::size_t> src;
  src.reserve(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < length; ++i)
      for (std::size_t j = 0; j < inner; ++j) src.push_back((o * dim + start + i) * inner + j);
  return detail::gather(a, std::move(out_shape), std::move(src));
}

/// Selects rows of a (axis 0) by index; indices may repeat.
inline Tensor take(const Tensor& a, const std::vector<std::size_t>& rows) {
  if (a.rank() == 0) fail(ErrorCode::ShapeError, "take on rank-0 tensor");
  const std::size_t inner = a.numel() / a.dim(0);
  Shape out_shape = a.shape();
  out_shape[0] = rows.size();
  std::vector<std::size_t> src;
  src.reserve(rows.size() * inner);
  for (std::size_t r : rows) {
    if (r >= a.dim(0)) fail(ErrorCode::ShapeError, "take: row index out of range");
    for (std::size_t j = 0; j < inner; ++j) src.push_back(r * inner + j);
  }
  return detail::gather(a, std::move(out_shape), std::move(src));
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) fail(ErrorCode::ShapeError, "concat of nothing");
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) fail(ErrorCode::ShapeError, "concat axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != out_shape.size()) fail(ErrorCode::ShapeError, "concat rank mismatch");
    for (std::size_t i = 0; i < out_shape.size(); ++i)
      if (i != axis && p.dim(i) != out_shape[i])
        fail(ErrorCode::ShapeError, "concat: " + shape_str(p.shape()) + " vs " + shape_str(out_shape));
    total += p.dim(axis);
  }
  out_shape[axis] = total;
  auto [outer, unused, inner] = detail::split_axis(out_shape, axis);
  (void)unused;
  std::vector<double> out(ad::numel(out_shape));
  // (part, flat index in part) for each output element
  auto origin = std::make_shared<std::vector<std::pair<std::size_t, std::size_t>>>(out.size());
  std::size_t pos = 0;
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const std::size_t block = parts[k].dim(axis) * inner;
      for (std::size_t j = 0; j < block; ++j) {
        const std::size_t src = o * block + j;
        out[pos] = parts[k].value()[src];
        (*origin)[pos++] = {k, src};
      }
    }
  return detail::make_result(std::move(out_shape), std::move(out), parts, [origin](Node& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->ensure_grad();
    for (std::size_t i = 0; i < origin->size(); ++i) {
      auto [k, src] = (*origin)[i];
      Node& p = *self.parents[k];
      if (p.requires_grad) p.grad[src] += self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Quantiles

/// Lower empirical q-quantile: the ceil(q n)-th smallest value (1-based),
/// clamped to [1, n].
inline double lower_quantile(std::span<const double> values, double q) {
  if (values.empty()) fail(ErrorCode::EmptyScenario, "quantile of empty sample");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  // Guard against q*n landing a hair above an integer through rounding.
  auto rank = static_cast<std::ptrdiff_t>(std::ceil(q * n - 1e-9));
  rank = std::clamp<std::ptrdiff_t>(rank, 1, static_cast<std::ptrdiff_t>(sorted.size()));
  return sorted[static_cast<std::size_t>(rank - 1)];
}

/// Empirical q-quantile of all entries, returned as a constant: no gradient
/// flows through it.
inline Tensor quantile_stop_grad(const Tensor& a, double q) {
  return Tensor::scalar(lower_quantile(a.value(), q));
}

/// Detaches a value from the graph.
inline Tensor detach(const Tensor& a) {
  return Tensor::constant(a.shape(), std::vector<double>(a.value().begin(), a.value().end()));
}

// ---------------------------------------------------------------------------
// Backward

/// Reverse-mode sweep from a scalar loss. Interior gradients are recomputed
/// from scratch; leaf gradients accumulate, so two calls double them.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) fail(ErrorCode::NotScalar, "backward() needs a scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order)
    if (!n->leaf) n->grad.assign(n->value.size(), 0.0);
  Node* root = loss.node();
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

}  // namespace sigalloc::ad
