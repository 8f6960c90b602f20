// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

#include "detinfer/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace detinfer::kernels {

void check_mantissa_bits(int mantissa_bits) {
  if (mantissa_bits < kMinMantissaBits || mantissa_bits > kMaxMantissaBits) {
    throw ConfigError("mantissa_bits must be in [2, 52], got " + std::to_string(mantissa_bits));
  }
}

ReductionPlan ReductionPlan::split(std::size_t n_inputs, std::size_t split_factor,
                                   int mantissa_bits) {
  check_mantissa_bits(mantissa_bits);
  if (n_inputs == 0) {
    throw ConfigError("reduction plan needs at least one input");
  }
  if (split_factor == 0 || split_factor > n_inputs) {
    throw ConfigError("split factor " + std::to_string(split_factor) +
                      " invalid for reduction length " + std::to_string(n_inputs));
  }
  ReductionPlan plan;
  plan.n_inputs_ = n_inputs;
  plan.split_factor_ = split_factor;
  plan.mantissa_bits_ = mantissa_bits;
  plan.program_.reserve(2 * n_inputs);

  const std::size_t base = n_inputs / split_factor;
  const std::size_t extra = n_inputs % split_factor;
  std::size_t leaf = 0;
  for (std::size_t seg = 0; seg < split_factor; ++seg) {
    const std::size_t len = base + (seg < extra ? 1 : 0);
    plan.segment_bounds_.push_back(leaf);
    plan.program_.push_back(static_cast<std::int32_t>(leaf++));
    for (std::size_t i = 1; i < len; ++i) {
      plan.program_.push_back(static_cast<std::int32_t>(leaf++));
      plan.program_.push_back(kCombine);
    }
    if (seg > 0) {
      plan.program_.push_back(kCombine);
    }
  }

  plan.segment_bounds_.push_back(n_inputs);
  return plan;
}

std::string ReductionPlan::to_string() const {
  std::vector<std::string> stack;
  for (auto op : program_) {
    if (op == kCombine) {
      std::string rhs = std::move(stack.back());
      stack.pop_back();
      stack.back() = "(" + stack.back() + " " + rhs + ")";
    } else {
      stack.push_back(std::to_string(op));
    }
  }
  return stack.empty() ? std::string{} : stack.front();
}

Scalar ReductionPlan::evaluate(std::span<const Scalar> values) const {
  if (values.size() != n_inputs_) {
    throw ShapeError("reduce: got " + std::to_string(values.size()) + " values for a plan over " +
                     std::to_string(n_inputs_) + " inputs");
  }
  return fold([&](std::size_t i) { return values[i]; });
}

SchedulePolicy SchedulePolicy::adaptive(int mantissa_bits) {
  SchedulePolicy p;
  p.mantissa_bits = mantissa_bits;
  return p;
}

SchedulePolicy SchedulePolicy::pinned(std::size_t split, int mantissa_bits) {
  SchedulePolicy p;
  p.mode = ScheduleMode::pinned;
  p.pinned_split = split;
  p.mantissa_bits = mantissa_bits;
  return p;
}

std::size_t SchedulePolicy::split_for_rows(std::size_t batch_rows) const {
  if (mode == ScheduleMode::pinned) {
    return pinned_split;
  }
  for (const auto& rule : split_thresholds) {
    if (batch_rows <= rule.max_rows) {
      return rule.split;
    }
  }
  return split_above;
}

void SchedulePolicy::validate() const {
  check_mantissa_bits(mantissa_bits);
  if (pinned_split == 0 || split_above == 0) {
    throw ConfigError("split factors must be >= 1");
  }
  std::size_t prev = 0;
  for (const auto& rule : split_thresholds) {
    if (rule.split == 0) {
      throw ConfigError("split factors must be >= 1");
    }
    if (rule.max_rows <= prev && prev != 0) {
      throw ConfigError("split_thresholds must have strictly increasing max_rows");
    }
    prev = rule.max_rows;
  }
}

ReductionPlan make_plan(const SchedulePolicy& policy, std::size_t reduction_len,
                        std::size_t batch_rows) {
  if (reduction_len == 0 || batch_rows == 0) {
    throw ConfigError("make_plan: reduction length and batch rows must be >= 1");
  }
  return ReductionPlan::split(reduction_len, std::min(policy.split_for_rows(batch_rows), reduction_len),
                              policy.mantissa_bits);
}

Scalar reduce(std::span<const Scalar> values, const ReductionPlan& plan) {
  return plan.evaluate(values);
}

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<Scalar> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != rows * cols) {
    throw ShapeError("matrix data length " + std::to_string(data.size()) + " != " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::transposed() const {
  Matrix t(cols, rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      t(c, r) = (*this)(r, c);
    }
  }
  return t;
}

Matrix gemm_bt(const Matrix& a, const Matrix& b_t, const SchedulePolicy& policy) {
  if (a.cols != b_t.cols) {
    throw ShapeError("gemm: inner dimensions " + std::to_string(a.cols) + " and " +
                     std::to_string(b_t.cols) + " differ");
  }
  const ReductionPlan plan = make_plan(policy, a.cols, a.rows);
  const detail::Rounder round(policy.mantissa_bits);
  Matrix out(a.rows, b_t.rows);
  constexpr std::size_t kLanes = 4;
  for (std::size_t i = 0; i < a.rows; ++i) {
    const Scalar* arow = a.row(i).data();
    std::size_t j = 0;
    for (; j + kLanes <= b_t.rows; j += kLanes) {
      const Scalar* bbase = b_t.row(j).data();
      const std::size_t stride = b_t.cols;
      const auto sums = plan.fold_lanes<kLanes>([&](std::size_t k, std::size_t lane) {
        return round(arow[k] * bbase[lane * stride + k]);
      });
      for (std::size_t l = 0; l < kLanes; ++l) {
        out(i, j + l) = sums[l];
      }
    }
    for (; j < b_t.rows; ++j) {
      const Scalar* brow = b_t.row(j).data();
      out(i, j) = plan.fold([&](std::size_t k) { return round(arow[k] * brow[k]); });
    }
  }
  return out;
}

Matrix gemm(const Matrix& a, const Matrix& b, const SchedulePolicy& policy) {
  if (a.cols != b.rows) {
    throw ShapeError("gemm: inner dimensions " + std::to_string(a.cols) + " and " +
                     std::to_string(b.rows) + " differ");
  }
  return gemm_bt(a, b.transposed(), policy);
}

namespace {

void rmsnorm_into(std::span<const Scalar> x, std::span<const Scalar> weight, Scalar eps,
                  const ReductionPlan& plan, std::span<Scalar> out) {
  const detail::Rounder round(plan.mantissa_bits());
  const Scalar sum_sq = plan.fold([&](std::size_t i) { return round(x[i] * x[i]); });
  const Scalar mean_sq = round(sum_sq / static_cast<Scalar>(x.size()));
  const Scalar inv_rms = round(1.0 / std::sqrt(round(mean_sq + eps)));
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = round(round(x[i] * inv_rms) * weight[i]);
  }
}

}  // namespace

std::vector<Scalar> rmsnorm(std::span<const Scalar> x, std::span<const Scalar> weight, Scalar eps,
                            const SchedulePolicy& policy, std::size_t batch_rows) {
  if (x.size() != weight.size()) {
    throw ShapeError("rmsnorm: input length " + std::to_string(x.size()) + " != weight length " +
                     std::to_string(weight.size()));
  }
  const ReductionPlan plan = make_plan(policy, x.size(), batch_rows);
  std::vector<Scalar> out(x.size());
  rmsnorm_into(x, weight, eps, plan, out);
  return out;
}

Matrix rmsnorm_rows(const Matrix& x, std::span<const Scalar> weight, Scalar eps,
                    const SchedulePolicy& policy) {
  if (x.cols != weight.size()) {
    throw ShapeError("rmsnorm: input width " + std::to_string(x.cols) + " != weight length " +
                     std::to_string(weight.size()));
  }
  const ReductionPlan plan = make_plan(policy, x.cols, x.rows);
  Matrix out(x.rows, x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    rmsnorm_into(x.row(r), weight, eps, plan, out.row(r));
  }
  return out;
}

std::vector<Scalar> attention_row(std::span<const Scalar> q, MatrixView k, MatrixView v,
                                  std::size_t kv_splits, int mantissa_bits) {
  check_mantissa_bits(mantissa_bits);
  const std::size_t ctx = k.rows;
  if (ctx == 0) {
    throw ShapeError("attention: empty context");
  }
  if (v.rows != ctx || k.cols != q.size()) {
    throw ShapeError("attention: query/key/value shapes disagree");
  }
  const int bits = mantissa_bits;
  const detail::Rounder round(bits);
  const ReductionPlan dot_plan = ReductionPlan::split(q.size(), 1, bits);
  const ReductionPlan ctx_plan = ReductionPlan::split(ctx, kv_splits, bits);
  const Scalar scale = round(1.0 / std::sqrt(static_cast<Scalar>(q.size())));

  std::vector<Scalar> weights(ctx);
  Scalar max_score = -INFINITY;
  for (std::size_t t = 0; t < ctx; ++t) {
    const Scalar* krow = k.data + t * k.stride;
    const Scalar dot = dot_plan.fold([&](std::size_t d) { return round(q[d] * krow[d]); });
    weights[t] = round(dot * scale);
    max_score = std::max(max_score, weights[t]);
  }
  for (std::size_t t = 0; t < ctx; ++t) {
    weights[t] = round(std::exp(round(weights[t] - max_score)));
  }
  const Scalar denom = ctx_plan.evaluate(weights);

  std::vector<Scalar> out(v.cols);
  constexpr std::size_t kLanes = 4;
  std::size_t d0 = 0;
  for (; d0 + kLanes <= v.cols; d0 += kLanes) {
    const Scalar* column = v.data + d0;
    const auto sums = ctx_plan.fold_lanes<kLanes>([&](std::size_t t, std::size_t lane) {
      return round(weights[t] * column[t * v.stride + lane]);
    });
    for (std::size_t l = 0; l < kLanes; ++l) {
      out[d0 + l] = round(sums[l] / denom);
    }
  }
  for (std::size_t d = d0; d < v.cols; ++d) {
    const Scalar* column = v.data + d;
    const Scalar sum = ctx_plan.fold([&](std::size_t t) {
      return round(weights[t] * column[t * v.stride]);
    });
    out[d] = round(sum / denom);
  }
  return out;
}

void require_finite(std::span<const Scalar> values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string(what) + ": non-finite value at index " + std::to_string(i));
    }
  }
}

}  // namespace detinfer::kernels
