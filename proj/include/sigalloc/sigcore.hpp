#pragma once

// Piecewise-linear paths, truncated signatures and lead-lag statistics.
//
// Signatures are stored level by level without the implicit level-0 scalar.
// A word (i_1, ..., i_k) over c channels sits at offset
// sum_{m<k} c^m + (i_1 c^{k-1} + ... + i_k) in the flat coordinate vector.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sigalloc/error.hpp"

namespace sigalloc {

inline constexpr int kMaxSignatureLevel = 4;

/// Number of stored coordinates for a level-`level` signature over `channels`.
constexpr std::size_t signature_length(std::size_t channels, int level) {
  std::size_t total = 0;
  std::size_t block = 1;
  for (int k = 1; k <= level; ++k) {
    block *= channels;
    total += block;
  }
  return total;
}

class PiecewisePath {
 public:
  PiecewisePath() = default;

  /// `values` is row-major: one row of `channels` reals per time stamp.
  PiecewisePath(std::vector<double> times, std::vector<double> values, std::size_t channels)
      : times_(std::move(times)), values_(std::move(values)), channels_(channels) {
    if (channels_ == 0) fail(ErrorCode::InvalidPath, "path needs at least one channel");
    if (times_.size() < 2) fail(ErrorCode::InvalidPath, "path needs at least 2 points");
    if (values_.size() != times_.size() * channels_)
      fail(ErrorCode::InvalidPath, "value count does not match times x channels");
    for (std::size_t i = 1; i < times_.size(); ++i)
      if (!(times_[i] > times_[i - 1]))
        fail(ErrorCode::InvalidPath, "times must be strictly increasing");
  }

  /// Single-channel path from a scalar series.
  static PiecewisePath scalar(std::vector<double> times, std::vector<double> values) {
    return PiecewisePath(std::move(times), std::move(values), 1);
  }

  std::size_t size() const noexcept { return times_.size(); }
  std::size_t channels() const noexcept { return channels_; }
  std::span<const double> times() const noexcept { return times_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<const double> point(std::size_t i) const {
    return std::span<const double>(values_).subspan(i * channels_, channels_);
  }
  double value(std::size_t i, std::size_t channel) const { return values_[i * channels_ + channel]; }

 private:
  std::vector<double> times_;
  std::vector<double> values_;
  std::size_t channels_ = 0;
};

class TruncatedSignature {
 public:
  TruncatedSignature() = default;

  /// The identity element (signature of a constant path): all stored coords zero.
  TruncatedSignature(std::size_t channels, int level)
      : channels_(channels), level_(level), coords_(signature_length(channels, level), 0.0) {}

  TruncatedSignature(std::size_t channels, int level, std::vector<double> coords)
      : channels_(channels), level_(level), coords_(std::move(coords)) {
    if (coords_.size() != signature_length(channels, level))
      fail(ErrorCode::ShapeError, "signature coordinate count does not match channels/level");
  }

  std::size_t channels() const noexcept { return channels_; }
  int level() const noexcept { return level_; }
  std::span<const double> coords() const noexcept { return coords_; }
  std::span<double> coords() noexcept { return coords_; }

  std::size_t level_offset(int k) const { return signature_length(channels_, k - 1); }
  std::size_t level_size(int k) const {
    std::size_t n = 1;
    for (int i = 0; i < k; ++i) n *= channels_;
    return n;
  }
  std::span<const double> level_block(int k) const {
    return coords().subspan(level_offset(k), level_size(k));
  }
  std::span<double> level_block(int k) { return coords().subspan(level_offset(k), level_size(k)); }

  /// Coordinate of the word (i_1, ..., i_k), zero-based channel indices.
  double word(std::initializer_list<std::size_t> letters) const {
    std::size_t idx = 0;
    for (std::size_t a : letters) idx = idx * channels_ + a;
    return coords_[level_offset(static_cast<int>(letters.size())) + idx];
  }

 private:
  std::size_t channels_ = 0;
  int level_ = 0;
  std::vector<double> coords_;
};

namespace detail {

inline void check_level(int level) {
  if (level < 1 || level > kMaxSignatureLevel)
    fail(ErrorCode::UnsupportedLevel,
         "level " + std::to_string(level) + " outside [1, " + std::to_string(kMaxSignatureLevel) + "]");
}

}  // namespace detail

/// Truncated tensor exponential of a single increment: level k holds delta^{(x)k} / k!.
inline TruncatedSignature segment_signature(std::span<const double> increment, int level) {
  detail::check_level(level);
  const std::size_t c = increment.size();
  TruncatedSignature sig(c, level);
  auto first = sig.level_block(1);
  for (std::size_t i = 0; i < c; ++i) first[i] = increment[i];
  for (int k = 2; k <= level; ++k) {
    auto prev = sig.level_block(k - 1);
    auto cur = sig.level_block(k);
    const double inv_k = 1.0 / k;
    for (std::size_t idx = 0; idx < cur.size(); ++idx)
      cur[idx] = prev[idx / c] * increment[idx % c] * inv_k;
  }
  return sig;
}

/// Truncated product in the tensor algebra; the signature of a concatenation
/// is the product of the pieces' signatures.
inline TruncatedSignature tensor_product(const TruncatedSignature& a, const TruncatedSignature& b) {
  if (a.channels() != b.channels() || a.level() != b.level())
    fail(ErrorCode::ShapeError, "tensor_product operands differ in channels or level");
  const int level = a.level();
  TruncatedSignature out(a.channels(), level);
  for (int k = 1; k <= level; ++k) {
    auto dst = out.level_block(k);
    auto ak = a.level_block(k);
    auto bk = b.level_block(k);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = ak[i] + bk[i];
    for (int i = 1; i < k; ++i) {
      auto ai = a.level_block(i);
      auto bj = b.level_block(k - i);
      std::size_t pos = 0;
      for (double x : ai)
        for (double y : bj) dst[pos++] += x * y;
    }
  }
  return out;
}

/// Signature of the piecewise-linear interpolant, composed segment by segment.
inline TruncatedSignature signature(const PiecewisePath& path, int level) {
  detail::check_level(level);
  if (path.size() < 2) fail(ErrorCode::InvalidPath, "path needs at least 2 points");
  const std::size_t c = path.channels();
  TruncatedSignature acc(c, level);
  std::vector<double> delta(c);
  for (std::size_t i = 1; i < path.size(); ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) delta[ch] = path.value(i, ch) - path.value(i - 1, ch);
    acc = tensor_product(acc, segment_signature(delta, level));
  }
  return acc;
}

namespace detail {

inline PiecewisePath joint_basepointed(const PiecewisePath& first, const PiecewisePath& second) {
  if (first.channels() != 1 || second.channels() != 1)
    fail(ErrorCode::ShapeError, "cross signature expects single-channel paths");
  if (first.size() != second.size())
    fail(ErrorCode::GridMismatch, "paths have different numbers of points");
  for (std::size_t i = 0; i < first.size(); ++i)
    if (first.times()[i] != second.times()[i])
      fail(ErrorCode::GridMismatch, "paths do not share a time grid");
  std::vector<double> joint(first.size() * 2);
  const double base1 = first.value(0, 0);
  const double base2 = second.value(0, 0);
  for (std::size_t i = 0; i < first.size(); ++i) {
    joint[2 * i] = first.value(i, 0) - base1;
    joint[2 * i + 1] = second.value(i, 0) - base2;
  }
  return PiecewisePath({first.times().begin(), first.times().end()}, std::move(joint), 2);
}

}  // namespace detail

/// Signature of the basepointed two-channel path (path_j, path_l).
inline TruncatedSignature cross_signature(const PiecewisePath& path_j, const PiecewisePath& path_l,
                                          int level) {
  return signature(detail::joint_basepointed(path_j, path_l), level);
}

/// S^{12} - S^{21} of the basepointed joint path. Positive when path_j leads path_l.
inline double signed_area(const PiecewisePath& path_j, const PiecewisePath& path_l) {
  const auto sig = cross_signature(path_j, path_l, 2);
  return sig.word({0, 1}) - sig.word({1, 0});
}

/// Level-2 antisymmetric part read from an existing two-channel signature.
inline double signed_area(const TruncatedSignature& two_channel) {
  if (two_channel.channels() != 2 || two_channel.level() < 2)
    fail(ErrorCode::ShapeError, "signed area needs a two-channel signature of level >= 2");
  return two_channel.word({0, 1}) - two_channel.word({1, 0});
}

/// Strict lead-lag pair through the given synchronisation values: on each
/// lead interval the leader moves while the lagger holds, then the lagger
/// catches up. Returns (leader, lagger) on the shared grid 0, L, 2L, ..., 2N L.
inline std::pair<PiecewisePath, PiecewisePath> make_leadlag_path(std::span<const double> sync_values,
                                                                 double segment_len = 1.0) {
  if (sync_values.size() < 2)
    fail(ErrorCode::DegenerateLeadLag, "need at least two synchronisation values");
  if (!(segment_len > 0.0)) fail(ErrorCode::InvalidPath, "segment length must be positive");
  for (std::size_t k = 1; k < sync_values.size(); ++k)
    if (sync_values[k] == sync_values[k - 1])
      fail(ErrorCode::DegenerateLeadLag,
           "consecutive synchronisation values coincide at index " + std::to_string(k));
  const std::size_t n = sync_values.size() - 1;
  std::vector<double> times(2 * n + 1);
  for (std::size_t i = 0; i < times.size(); ++i) times[i] = static_cast<double>(i) * segment_len;
  std::vector<double> leader(2 * n + 1);
  std::vector<double> lagger(2 * n + 1);
  leader[0] = lagger[0] = sync_values[0];
  for (std::size_t k = 1; k <= n; ++k) {
    leader[2 * k - 1] = sync_values[k];
    lagger[2 * k - 1] = sync_values[k - 1];
    leader[2 * k] = lagger[2 * k] = sync_values[k];
  }
  return {PiecewisePath::scalar(times, std::move(leader)), PiecewisePath::scalar(times, std::move(lagger))};
}

/// Two-channel (time, value) path with time rescaled to [0, 1] across the
/// samples. Breaks the degeneracy of scalar signatures.
inline PiecewisePath time_augmented(std::span<const double> samples) {
  if (samples.size() < 2) fail(ErrorCode::InvalidPath, "path needs at least 2 points");
  const std::size_t n = samples.size();
  std::vector<double> times(n);
  std::vector<double> values(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n - 1);
    times[i] = t;
    values[2 * i] = t;
    values[2 * i + 1] = samples[i];
  }
  return PiecewisePath(std::move(times), std::move(values), 2);
}

}  // namespace sigalloc
