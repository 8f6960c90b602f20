// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

// Ground-truth executors that share only the model with the engine.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "detinfer/engine.hpp"
#include "detinfer/model.hpp"

namespace detinfer {

/// The sequence every deterministic run of `request` must release: prefill,
/// then one token at a time from a W-position window [last token, pads...]
/// under the verifier policy, reading position 0. Stops at EOS or
/// max_new_tokens.
std::vector<TokenId> canonical_sequence(const Request& request, const Model& model,
                                        const EngineConfig& config);

/// Pure fast-path decoding with nothing co-batched (batch rows = 1).
std::vector<TokenId> batch1_sequence(const Request& request, const Model& model,
                                     const EngineConfig& config);

/// canonical_sequence for each request, spread over hardware threads.
std::vector<std::vector<TokenId>> canonical_sequences(std::span<const Request> requests,
                                                      const Model& model,
                                                      const EngineConfig& config);
std::vector<std::vector<TokenId>> batch1_sequences(std::span<const Request> requests,
                                                   const Model& model, const EngineConfig& config);

struct ConsistentSpans {
  std::size_t first_span = 0;
  std::size_t second_span = 0;

  friend bool operator==(const ConsistentSpans&, const ConsistentSpans&) = default;
};

/// first_span: length of the common prefix. second_span: matches counted
/// position by position from just after the first divergence up to the next
/// one (or the end of the shorter list). Zero when the lists never diverge.
ConsistentSpans consistent_spans(std::span<const TokenId> reference,
                                 std::span<const TokenId> observed);

}  // namespace detinfer
