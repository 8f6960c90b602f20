// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

#include "detinfer/sampler.hpp"

#include <cmath>
#include <vector>

#include "detinfer/errors.hpp"
#include "detinfer/rng.hpp"

namespace detinfer {

TokenId sample_greedy(std::span<const Scalar> logits) {
  if (logits.empty()) {
    throw NumericError("sampler: empty logit row");
  }
  kernels::require_finite(logits, "sampler logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) {
      best = i;
    }
  }
  return static_cast<TokenId>(best);
}

double seeded_uniform(std::uint64_t request_seed, std::uint64_t position, std::uint64_t index) {
  const std::uint64_t h = hash_combine(hash_combine(request_seed, position), index);
  // Midpoint of one of 2^53 equal cells: strictly inside (0, 1).
  return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

TokenId sample_seeded(std::span<const Scalar> logits, std::uint64_t request_seed,
                      std::uint64_t position) {
  if (logits.empty()) {
    throw NumericError("sampler: empty logit row");
  }
  kernels::require_finite(logits, "sampler logits");
  std::size_t best = 0;
  double best_score = -INFINITY;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double u = seeded_uniform(request_seed, position, i);
    const double score = logits[i] - std::log(-std::log(u));
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  return static_cast<TokenId>(best);
}

TokenId sample(const SamplerSpec& spec, std::span<const Scalar> logits, std::uint64_t position) {
  if (spec.kind == SamplerSpec::Kind::greedy) {
    return sample_greedy(logits);
  }
  if (!(spec.temperature > 0.0)) {
    throw ConfigError("seeded sampler needs a positive temperature");
  }
  if (spec.temperature == 1.0) {
    return sample_seeded(logits, spec.seed, position);
  }
  std::vector<Scalar> scaled(logits.begin(), logits.end());
  for (auto& x : scaled) {
    x /= spec.temperature;
  }
  return sample_seeded(scaled, spec.seed, position);
}

}  // namespace detinfer
