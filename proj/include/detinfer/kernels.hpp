// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

// Software-emulated numeric kernels whose floating-point reduction order is an
// explicit, inspectable function of the input shape and a schedule policy.
//
// Every binary combine is followed by rounding to a configurable mantissa
// width, so the order in which partial sums are combined is visible in the
// result bits. A kernel invoked twice on the same shape with the same policy
// produces identical bits; changing the shape (and thereby the split factor)
// may not.

#pragma once

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "detinfer/errors.hpp"

namespace detinfer::kernels {

using Scalar = double;

inline constexpr int kMinMantissaBits = 2;
inline constexpr int kMaxMantissaBits = 52;

void check_mantissa_bits(int mantissa_bits);

namespace detail {

// Round-to-nearest-even on the IEEE-754 binary64 bit pattern, keeping a
// fixed number of explicit fraction bits. Non-finite values pass through.
// Subnormals are rounded at the same absolute bit position.
class Rounder {
 public:
  explicit Rounder(int mantissa_bits)
      : shift_(52 - mantissa_bits),
        bias_(shift_ == 0 ? 0 : (std::uint64_t{1} << (shift_ - 1)) - 1),
        keep_(~((std::uint64_t{1} << shift_) - 1)),
        tie_(shift_ == 0 ? 0 : 1) {}

  Scalar operator()(Scalar x) const {
    constexpr std::uint64_t kExponent = 0x7ff0000000000000ULL;
    auto bits = std::bit_cast<std::uint64_t>(x);
    if ((bits & kExponent) == kExponent) {
      return x;
    }
    bits = (bits + bias_ + ((bits >> shift_) & tie_)) & keep_;
    return std::bit_cast<Scalar>(bits);
  }

 private:
  int shift_;
  std::uint64_t bias_;
  std::uint64_t keep_;
  std::uint64_t tie_;
};

inline Scalar round_bits(Scalar x, int mantissa_bits) { return Rounder(mantissa_bits)(x); }

}  // namespace detail

/// Rounds `x` to nearest-even with `mantissa_bits` fraction bits (2..52).
/// Idempotent. Throws ConfigError for an out-of-range width.
inline Scalar round_accum(Scalar x, int mantissa_bits) {
  check_mantissa_bits(mantissa_bits);
  return detail::round_bits(x, mantissa_bits);
}

/// A full binary combine tree over `n_inputs` leaves plus the accumulation
/// precision used at every internal node.
///
/// The tree is held as a postfix program: a non-negative entry pushes the leaf
/// with that index, kCombine pops two partials and pushes their rounded sum.
class ReductionPlan {
 public:
  static constexpr std::int32_t kCombine = -1;

  /// Contiguous split-K style plan: leaves are cut into `split_factor`
  /// segments (the first n % split segments one leaf longer), each segment is
  /// folded left to right, then the partials are folded left to right.
  /// split_factor == 1 is the plain sequential chain.
  static ReductionPlan split(std::size_t n_inputs, std::size_t split_factor,
                             int mantissa_bits);

  std::size_t n_inputs() const { return n_inputs_; }
  std::size_t split_factor() const { return split_factor_; }
  int mantissa_bits() const { return mantissa_bits_; }
  std::span<const std::int32_t> program() const { return program_; }

  /// Canonical nested-pair text, e.g. "((0 1) (2 3))". A single leaf is "0".
  std::string to_string() const;

  Scalar evaluate(std::span<const Scalar> values) const;

  /// Folds leaf(i) for i in [0, n_inputs) in plan order without materialising
  /// the leaves. Equivalent to evaluate() on the same values.
  template <typename LeafFn>
  Scalar fold(LeafFn&& leaf) const {
    const detail::Rounder round(mantissa_bits_);
    Scalar total = 0.0;
    for (std::size_t seg = 0; seg + 1 < segment_bounds_.size(); ++seg) {
      std::size_t i = segment_bounds_[seg];
      const std::size_t end = segment_bounds_[seg + 1];
      Scalar partial = leaf(i);
      for (++i; i < end; ++i) {
        partial = round(partial + leaf(i));
      }
      total = seg == 0 ? partial : round(total + partial);
    }
    return total;
  }

  /// fold() over `Lanes` independent leaf streams at once; leaf(i, lane).
  /// Each lane's result is bit-identical to a separate fold().
  template <std::size_t Lanes, typename LeafFn>
  std::array<Scalar, Lanes> fold_lanes(LeafFn&& leaf) const {
    const detail::Rounder round(mantissa_bits_);
    std::array<Scalar, Lanes> total{};
    std::array<Scalar, Lanes> partial{};
    for (std::size_t seg = 0; seg + 1 < segment_bounds_.size(); ++seg) {
      std::size_t i = segment_bounds_[seg];
      const std::size_t end = segment_bounds_[seg + 1];
      for (std::size_t l = 0; l < Lanes; ++l) {
        partial[l] = leaf(i, l);
      }
      for (++i; i < end; ++i) {
        for (std::size_t l = 0; l < Lanes; ++l) {
          partial[l] = round(partial[l] + leaf(i, l));
        }
      }
      for (std::size_t l = 0; l < Lanes; ++l) {
        total[l] = seg == 0 ? partial[l] : round(total[l] + partial[l]);
      }
    }
    return total;
  }

  friend bool operator==(const ReductionPlan&, const ReductionPlan&) = default;

 private:
  ReductionPlan() = default;

  std::size_t n_inputs_ = 0;
  std::size_t split_factor_ = 1;
  int mantissa_bits_ = kMaxMantissaBits;
  std::vector<std::int32_t> program_;
  // Segment start indices plus a final n_inputs sentinel.
  std::vector<std::size_t> segment_bounds_;
};

enum class ScheduleMode { shape_adaptive, pinned };

struct SplitRule {
  std::size_t max_rows = 0;  // inclusive upper bound on batch rows
  std::size_t split = 1;

  friend bool operator==(const SplitRule&, const SplitRule&) = default;
};

/// Maps a kernel invocation shape to a split factor.
///
/// shape_adaptive: the first rule whose max_rows >= batch_rows wins, and
/// `split_above` applies beyond the last rule. pinned: always `pinned_split`.
struct SchedulePolicy {
  ScheduleMode mode = ScheduleMode::shape_adaptive;
  std::vector<SplitRule> split_thresholds = {{4, 1}, {16, 2}, {64, 4}};
  std::size_t split_above = 8;
  std::size_t pinned_split = 1;
  int mantissa_bits = 10;

  static SchedulePolicy adaptive(int mantissa_bits = 10);
  static SchedulePolicy pinned(std::size_t split = 1, int mantissa_bits = 10);

  std::size_t split_for_rows(std::size_t batch_rows) const;
  void validate() const;

  friend bool operator==(const SchedulePolicy&, const SchedulePolicy&) = default;
};

/// The split factor is capped at the reduction length.
ReductionPlan make_plan(const SchedulePolicy& policy, std::size_t reduction_len,
                        std::size_t batch_rows);

/// Folds `values` in exactly the order given by `plan`.
Scalar reduce(std::span<const Scalar> values, const ReductionPlan& plan);

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Scalar> data;  // row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Matrix(std::size_t r, std::size_t c, std::vector<Scalar> values);

  Scalar& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  Scalar operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<Scalar> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const Scalar> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  Matrix transposed() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// Read-only strided view used for per-head slices of a KV cache.
struct MatrixView {
  const Scalar* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t stride = 0;

  MatrixView() = default;
  MatrixView(const Scalar* d, std::size_t r, std::size_t c, std::size_t s)
      : data(d), rows(r), cols(c), stride(s) {}
  explicit MatrixView(const Matrix& m) : data(m.data.data()), rows(m.rows), cols(m.cols), stride(m.cols) {}

  std::span<const Scalar> row(std::size_t r) const { return {data + r * stride, cols}; }
};

/// C = A * B. Every output element reduces its K rounded products with
/// make_plan(policy, K, M), the same plan for all M rows.
Matrix gemm(const Matrix& a, const Matrix& b, const SchedulePolicy& policy);

/// As gemm, with B supplied transposed (N x K).
Matrix gemm_bt(const Matrix& a, const Matrix& b_t, const SchedulePolicy& policy);

/// Root-mean-square normalisation of one row. The mean square reduction uses
/// make_plan(policy, x.size(), batch_rows).
std::vector<Scalar> rmsnorm(std::span<const Scalar> x, std::span<const Scalar> weight, Scalar eps,
                            const SchedulePolicy& policy, std::size_t batch_rows);

/// rmsnorm applied to every row of `x`, with batch_rows = x.rows.
Matrix rmsnorm_rows(const Matrix& x, std::span<const Scalar> weight, Scalar eps,
                    const SchedulePolicy& policy);

/// Single-query scaled dot-product attention over a context of k.rows
/// positions. The softmax denominator and the value-weighted sums reduce over
/// the context with a plan cut into `kv_splits` contiguous segments.
std::vector<Scalar> attention_row(std::span<const Scalar> q, MatrixView k, MatrixView v,
                                  std::size_t kv_splits, int mantissa_bits);

inline std::vector<Scalar> attention_row(std::span<const Scalar> q, const Matrix& k,
                                         const Matrix& v, std::size_t kv_splits,
                                         int mantissa_bits) {
  return attention_row(q, MatrixView(k), MatrixView(v), kv_splits, mantissa_bits);
}

/// Throws NumericError naming `what` if any value is NaN or infinite.
void require_finite(std::span<const Scalar> values, const char* what);

}  // namespace detinfer::kernels
