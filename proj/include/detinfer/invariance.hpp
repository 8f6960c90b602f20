// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

// Bit-exact invariance checks for the emulated kernels.
//
// Position invariance: at a fixed input shape, a row's output does not depend
// on where the row sits in the batch or on the values of the other rows.
// Batch invariance: a row's output does not depend on the batch size at all;
// it holds only for pinned policies.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "detinfer/kernels.hpp"

namespace detinfer::invariance {

using kernels::Scalar;
using kernels::SchedulePolicy;

struct Shape {
  std::size_t rows = 1;  // batch rows
  std::size_t k = 1;     // reduction length (context length for attention)
  std::size_t n = 1;     // output columns (head dim for attention)
};

// Each check fills a batch from `seed`, tracks one row, moves it to every
// other position while redrawing the remaining rows, and compares bits.
bool gemm_position_invariant(const Shape& shape, const SchedulePolicy& policy, std::uint64_t seed);
bool rmsnorm_position_invariant(const Shape& shape, const SchedulePolicy& policy, std::uint64_t seed);
bool attention_position_invariant(const Shape& shape, const SchedulePolicy& policy,
                                  std::uint64_t seed);

// Compares the tracked row computed inside a batch of shape.rows against the
// same row computed alone.
bool gemm_batch_invariant(const Shape& shape, const SchedulePolicy& policy, std::uint64_t seed);
bool rmsnorm_batch_invariant(const Shape& shape, const SchedulePolicy& policy, std::uint64_t seed);
bool attention_batch_invariant(const Shape& shape, const SchedulePolicy& policy, std::uint64_t seed);

/// Dot product of two length-k standard normal vectors drawn from `seed`,
/// reduced with a `split`-segment plan.
Scalar seeded_dot(std::size_t k, std::uint64_t seed, std::size_t split, int mantissa_bits);

/// First seed in [seed_begin, seed_end) whose seeded_dot differs between the
/// two split factors.
std::optional<std::uint64_t> find_split_witness(std::size_t k, int mantissa_bits,
                                                std::size_t split_a, std::size_t split_b,
                                                std::uint64_t seed_begin, std::uint64_t seed_end);

struct CheckResult {
  std::string kernel;
  std::string property;
  std::string policy;
  Shape shape;
  bool passed = false;
};

/// Position invariance under the adaptive and pinned policies, and batch
/// invariance under the pinned policy, for every kernel over a fixed shape
/// grid.
std::vector<CheckResult> run_suite(int mantissa_bits, std::uint64_t seed);

}  // namespace detinfer::invariance
