// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>

#include "detinfer/model.hpp"

namespace detinfer {

struct SamplerSpec {
  enum class Kind { greedy, seeded };

  Kind kind = Kind::greedy;
  std::uint64_t seed = 0;
  double temperature = 1.0;  // seeded only

  static SamplerSpec greedy() { return {}; }
  static SamplerSpec seeded(std::uint64_t seed, double temperature = 1.0) {
    return {Kind::seeded, seed, temperature};
  }

  friend bool operator==(const SamplerSpec&, const SamplerSpec&) = default;
};

/// Index of the first maximal logit. Throws NumericError on non-finite input.
TokenId sample_greedy(std::span<const Scalar> logits);

/// Gumbel-max sampling whose noise for entry i is a pure function of
/// (request_seed, position, i), so the draw never depends on co-batched work.
TokenId sample_seeded(std::span<const Scalar> logits, std::uint64_t request_seed,
                      std::uint64_t position);

/// The uniform in (0, 1) behind the Gumbel noise of one vocabulary entry.
double seeded_uniform(std::uint64_t request_seed, std::uint64_t position, std::uint64_t index);

/// Dispatches on `spec`; `position` is the absolute position of the token
/// being produced. Seeded sampling divides logits by the temperature first.
TokenId sample(const SamplerSpec& spec, std::span<const Scalar> logits, std::uint64_t position);

}  // namespace detinfer
