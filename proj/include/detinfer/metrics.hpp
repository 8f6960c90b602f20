// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace detinfer {

using RequestId = std::uint64_t;

struct Percentiles {
  double p50 = 0.0;
  double p75 = 0.0;
  double p90 = 0.0;
  double p99 = 0.0;
};

/// Nearest-rank percentiles; all zero for an empty sample.
Percentiles percentiles(std::vector<double> samples);

struct RequestTiming {
  RequestId id = 0;
  bool is_deterministic = false;
  std::int64_t arrival_tick = 0;
  std::int64_t first_token_tick = -1;
  std::int64_t finish_tick = -1;
  std::uint64_t released_tokens = 0;
  std::uint64_t rollbacks = 0;
  std::uint64_t recomputed_tokens = 0;
  // Filled only by drift runs.
  std::optional<std::uint64_t> first_span;
  std::optional<std::uint64_t> second_span;

  std::int64_t e2e() const { return finish_tick - arrival_tick; }
  std::int64_t ttft() const { return first_token_tick - arrival_tick; }
};

struct RunMetrics {
  // Scheduler state at snapshot time.
  std::uint64_t queued = 0;
  std::uint64_t active = 0;
  std::uint64_t finished = 0;

  std::uint64_t prefill_passes = 0;
  std::uint64_t decode_passes = 0;
  std::uint64_t verification_passes = 0;

  // Tokens sampled on the fast path, including those later discarded.
  std::uint64_t decoded_tokens = 0;
  // Fresh tokens contributed by the verifier (one per committing member).
  std::uint64_t verifier_tokens = 0;
  std::uint64_t released_tokens = 0;
  std::uint64_t rollback_count = 0;
  // Fast-path tokens decoded but discarded by verification.
  std::uint64_t recomputed_tokens = 0;
  std::uint64_t tentative_in_flight = 0;
  // Input positions replayed by verification passes, pads included.
  std::uint64_t verified_positions = 0;
  // KV rows replaced by verifier-produced rows.
  std::uint64_t kv_overwrites = 0;

  // Virtual time; filled by the harness.
  std::int64_t total_ticks = 0;
  std::vector<RequestTiming> requests;

  /// recomputed / (recomputed + released); zero when nothing was decoded.
  double recomputed_fraction() const {
    const auto denom = recomputed_tokens + released_tokens;
    return denom == 0 ? 0.0 : static_cast<double>(recomputed_tokens) / static_cast<double>(denom);
  }

  /// Released tokens per virtual second (1 tick = 1 microsecond).
  double tokens_per_second() const {
    return total_ticks == 0 ? 0.0 : static_cast<double>(released_tokens) * 1e6 /
                                        static_cast<double>(total_ticks);
  }
};

}  // namespace detinfer
