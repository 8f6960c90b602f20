// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "detinfer/engine.hpp"
#include "detinfer/rng.hpp"

namespace detinfer {

/// Integer length distribution, clamped to [min, max].
struct LengthDist {
  enum class Kind { fixed, uniform, lognormal };

  Kind kind = Kind::fixed;
  double a = 16.0;  // fixed: value; uniform: low; lognormal: mean
  double b = 16.0;  // uniform: high; lognormal: median
  std::size_t min = 1;
  std::size_t max = 1 << 20;

  static LengthDist fixed(std::size_t n) { return {Kind::fixed, double(n), double(n), n, n}; }
  static LengthDist uniform(std::size_t lo, std::size_t hi) { return {Kind::uniform, double(lo), double(hi), lo, hi}; }
  /// Lognormal with the given mean and median (mean > median gives the
  /// right skew of chat traces): mu = ln(median), sigma^2 = 2 ln(mean/median).
  static LengthDist lognormal(double mean, double median, std::size_t min, std::size_t max);

  void validate() const;
  std::size_t sample(Rng& rng) const;
};

enum class ArrivalKind { all_at_zero, poisson, explicit_offsets };

struct ArrivalProcess {
  ArrivalKind kind = ArrivalKind::all_at_zero;
  double qps = 0.0;  // poisson: requests per virtual second (1e6 ticks)
  std::uint64_t seed = 0;
};

struct Workload {
  std::vector<Request> requests;
  ArrivalProcess arrival;
};

struct SyntheticSpec {
  std::size_t n = 64;
  LengthDist prompt_len = LengthDist::fixed(16);
  LengthDist output_len = LengthDist::fixed(32);
  double det_ratio = 0.0;
  // Fraction of requests using seeded Gumbel sampling instead of greedy.
  double seeded_ratio = 0.0;
  std::uint64_t seed = 1;
  std::size_t vocab_size = 256;
  RequestId first_id = 0;
};

/// Reproducible synthetic workload. Exactly floor(n * det_ratio) requests are
/// deterministic, chosen by a seeded shuffle that does not depend on the
/// ratio, so a higher ratio's deterministic set contains a lower one's.
Workload gen_synthetic(const SyntheticSpec& spec);

/// Reassigns deterministic flags as gen_synthetic would for `ratio`.
void assign_det_flags(Workload& workload, double ratio, std::uint64_t seed);

/// Sets arrival ticks from a Poisson process; offsets are non-decreasing in
/// request order.
void apply_poisson_arrivals(Workload& workload, double qps, std::uint64_t seed);

/// Prompt tokens in [1, vocab) derived from (seed, request id).
std::vector<TokenId> synthetic_prompt(std::size_t len, std::uint64_t seed, RequestId id,
                                      std::size_t vocab_size);

/// JSON lines, one request per line:
/// {"id", "prompt_tokens" | "prompt_len", "max_new_tokens", "is_deterministic",
///  "sampler": {"type": "greedy"|"seeded", "seed"?, "temperature"?},
///  "arrival_offset_ticks"}
/// Lines with prompt_len get tokens from synthetic_prompt(len, 0, id, vocab).
/// Throws ConfigError naming the line on schema errors.
Workload read_workload(std::istream& in, std::size_t vocab_size);
Workload load_workload(const std::filesystem::path& path, std::size_t vocab_size);
void write_workload(std::ostream& out, const Workload& workload);

}  // namespace detinfer
