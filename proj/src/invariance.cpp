// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

#include "detinfer/invariance.hpp"

#include <algorithm>
#include <cstring>
#include <optional>

#include "detinfer/rng.hpp"

namespace detinfer::invariance {

namespace {

using kernels::Matrix;

std::vector<Scalar> normals(Rng& rng, std::size_t n) {
  std::vector<Scalar> v(n);
  for (auto& x : v) {
    x = rng.normal();
  }
  return v;
}

bool same_bits(std::span<const Scalar> a, std::span<const Scalar> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(Scalar)) == 0;
}

// Builds a rows x cols batch holding `tracked` at `position` and fresh values
// elsewhere.
Matrix batch_with(std::span<const Scalar> tracked, std::size_t rows, std::size_t position, Rng& rng) {
  Matrix m(rows, tracked.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const auto values = r == position ? std::vector<Scalar>(tracked.begin(), tracked.end())
                                      : normals(rng, tracked.size());
    std::copy(values.begin(), values.end(), m.row(r).begin());
  }
  return m;
}

// Runs `kernel(batch)` with the tracked row at each position (and at rows=1
// when `alone` is set) and checks every copy of the tracked output agrees.
template <typename Kernel>
bool tracked_row_stable(std::size_t rows, std::size_t cols, std::uint64_t seed, bool alone, Kernel kernel) {
  Rng rng(seed);
  const auto tracked = normals(rng, cols);
  std::optional<std::vector<Scalar>> reference;
  const auto agree = [&](const std::vector<Scalar>& out) {
    if (!reference) {
      reference = out;
      return true;
    }
    return same_bits(*reference, out);
  };
  for (std::size_t p = 0; p < rows; ++p) {
    const Matrix batch = batch_with(tracked, rows, p, rng);
    if (!agree(kernel(batch, p))) {
      return false;
    }
  }
  if (alone) {
    const Matrix single = batch_with(tracked, 1, 0, rng);
    if (!agree(kernel(single, 0))) {
      return false;
    }
  }
  return true;
}

auto gemm_kernel(const Shape& shape, const SchedulePolicy& policy, std::uint64_t seed) {
  Rng rng(hash_combine(seed, 0x9e11ULL));
  Matrix b(shape.k, shape.n, normals(rng, shape.k * shape.n));
  return [b = std::move(b), &policy](const Matrix& a, std::size_t row) {
    const Matrix c = kernels::gemm(a, b, policy);
    const auto r = c.row(row);
    return std::vector<Scalar>(r.begin(), r.end());
  };
}

auto rmsnorm_kernel(const Shape& shape, const SchedulePolicy& policy, std::uint64_t seed) {
  Rng rng(hash_combine(seed, 0x4a5ULL));
  std::vector<Scalar> weight = normals(rng, shape.k);
  return [weight = std::move(weight), &policy](const Matrix& x, std::size_t row) {
    const Matrix y = kernels::rmsnorm_rows(x, weight, 1e-5, policy);
    const auto r = y.row(row);
    return std::vector<Scalar>(r.begin(), r.end());
  };
}

// Queries are the batch rows (width n); every row attends over its own
// context of k positions. kv_splits follows the model's rule.
auto attention_kernel(const Shape& shape, const SchedulePolicy& policy, std::uint64_t seed) {
  Rng rng(hash_combine(seed, 0xa77ULL));
  Matrix k(shape.k, shape.n, normals(rng, shape.k * shape.n));
  Matrix v(shape.k, shape.n, normals(rng, shape.k * shape.n));
  return [k = std::move(k), v = std::move(v), &policy](const Matrix& q, std::size_t row) {
    const std::size_t kv_splits = std::min(policy.split_for_rows(q.rows), k.rows);
    std::vector<Scalar> out;
    for (std::size_t r = 0; r < q.rows; ++r) {
      // Other rows are computed too, as a batched kernel would.
      auto o = kernels::attention_row(q.row(r), k, v, kv_splits, policy.mantissa_bits);
      if (r == row) {
        out = std::move(o);
      }
    }
    return out;
  };
}

}  // namespace

bool gemm_position_invariant(const Shape& shape, const SchedulePolicy& policy, std::uint64_t seed) {
  return tracked_row_stable(shape.rows, shape.k, seed, false, gemm_kernel(shape, policy, seed));
}

bool rmsnorm_position_invariant(const Shape& shape, const SchedulePolicy& policy, std::uint64_t seed) {
  return tracked_row_stable(shape.rows, shape.k, seed, false, rmsnorm_kernel(shape, policy, seed));
}

bool attention_position_invariant(const Shape& shape, const SchedulePolicy& policy,
                                  std::uint64_t seed) {
  return tracked_row_stable(shape.rows, shape.n, seed, false, attention_kernel(shape, policy, seed));
}

bool gemm_batch_invariant(const Shape& shape, const SchedulePolicy& policy, std::uint64_t seed) {
  return tracked_row_stable(shape.rows, shape.k, seed, true, gemm_kernel(shape, policy, seed));
}

bool rmsnorm_batch_invariant(const Shape& shape, const SchedulePolicy& policy, std::uint64_t seed) {
  return tracked_row_stable(shape.rows, shape.k, seed, true, rmsnorm_kernel(shape, policy, seed));
}

bool attention_batch_invariant(const Shape& shape, const SchedulePolicy& policy, std::uint64_t seed) {
  return tracked_row_stable(shape.rows, shape.n, seed, true, attention_kernel(shape, policy, seed));
}

Scalar seeded_dot(std::size_t k, std::uint64_t seed, std::size_t split, int mantissa_bits) {
  Rng rng(seed);
  const Matrix a(1, k, normals(rng, k));
  const Matrix b(k, 1, normals(rng, k));
  return kernels::gemm(a, b, SchedulePolicy::pinned(split, mantissa_bits))(0, 0);
}

std::optional<std::uint64_t> find_split_witness(std::size_t k, int mantissa_bits,
                                                std::size_t split_a, std::size_t split_b,
                                                std::uint64_t seed_begin, std::uint64_t seed_end) {
  for (std::uint64_t s = seed_begin; s < seed_end; ++s) {
    if (seeded_dot(k, s, split_a, mantissa_bits) != seeded_dot(k, s, split_b, mantissa_bits)) {
      return s;
    }
  }
  return std::nullopt;
}

std::vector<CheckResult> run_suite(int mantissa_bits, std::uint64_t seed) {
  const std::vector<Shape> shapes = {{1, 16, 8}, {3, 64, 16}, {8, 64, 16}, {17, 96, 8}, {33, 128, 16}, {70, 200, 8}};
  const SchedulePolicy adaptive = SchedulePolicy::adaptive(mantissa_bits);
  const SchedulePolicy pinned = SchedulePolicy::pinned(1, mantissa_bits);
  std::vector<CheckResult> results;
  for (const Shape& s : shapes) {
    for (const auto* policy : {&adaptive, &pinned}) {
      const std::string name = policy == &adaptive ? "shape_adaptive" : "pinned";
      results.push_back({"gemm", "position", name, s, gemm_position_invariant(s, *policy, seed)});
      results.push_back({"rmsnorm", "position", name, s, rmsnorm_position_invariant(s, *policy, seed)});
      results.push_back({"attention", "position", name, s, attention_position_invariant(s, *policy, seed)});
    }
    results.push_back({"gemm", "batch", "pinned", s, gemm_batch_invariant(s, pinned, seed)});
    results.push_back({"rmsnorm", "batch", "pinned", s, rmsnorm_batch_invariant(s, pinned, seed)});
    results.push_back({"attention", "batch", "pinned", s, attention_batch_invariant(s, pinned, seed)});
  }
  return results;
}

}  // namespace detinfer::invariance
