// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "detinfer/kernels.hpp"

namespace detinfer {

using kernels::Matrix;
using kernels::Scalar;
using kernels::SchedulePolicy;

using TokenId = std::int32_t;

// Inert filler for verification windows. Causal attention keeps it from
// influencing any earlier position.
inline constexpr TokenId kPadToken = 0;

struct ModelConfig {
  std::size_t vocab_size = 256;
  std::size_t hidden_dim = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t max_seq_len = 1024;
  int mantissa_bits = 10;
  std::uint64_t seed = 42;

  std::size_t head_dim() const { return hidden_dim / n_heads; }
  void validate() const;
};

/// Per-layer key/value rows for one sequence.
///
/// Rows below committed_len() were produced by prefill or verification and are
/// never removed. Rows in [committed_len(), total_len()) are tentative.
class KvCache {
 public:
  KvCache() = default;
  KvCache(std::size_t n_layers, std::size_t hidden_dim);

  std::size_t committed_len() const { return committed_len_; }
  std::size_t total_len() const { return total_len_; }
  std::size_t n_layers() const { return keys_.size(); }
  std::size_t hidden_dim() const { return hidden_dim_; }

  /// Appends `n` zeroed positions, to be filled by a forward pass.
  void extend(std::size_t n);

  /// Drops tentative rows beyond `len`. Throws EngineFault below committed_len.
  void truncate(std::size_t len);

  /// Marks rows below `len` consistent. `len` must lie in
  /// [committed_len, total_len].
  void commit(std::size_t len);

  std::span<Scalar> key(std::size_t layer, std::size_t pos);
  std::span<Scalar> value(std::size_t layer, std::size_t pos);
  std::span<const Scalar> key(std::size_t layer, std::size_t pos) const;
  std::span<const Scalar> value(std::size_t layer, std::size_t pos) const;

  /// Keys/values of positions [0, len) restricted to one head's columns.
  kernels::MatrixView key_view(std::size_t layer, std::size_t col0, std::size_t width,
                               std::size_t len) const;
  kernels::MatrixView value_view(std::size_t layer, std::size_t col0, std::size_t width,
                                 std::size_t len) const;

  friend bool operator==(const KvCache&, const KvCache&) = default;

 private:
  std::size_t hidden_dim_ = 0;
  std::size_t committed_len_ = 0;
  std::size_t total_len_ = 0;
  std::vector<std::vector<Scalar>> keys_;
  std::vector<std::vector<Scalar>> values_;
};

struct LayerWeights {
  std::vector<Scalar> attn_norm;
  std::vector<Scalar> ffn_norm;
  // Projections stored transposed (out x in) for gemm_bt.
  Matrix wq;
  Matrix wk;
  Matrix wv;
  Matrix wo;
  Matrix w_up;
  Matrix w_down;
};

struct ModelWeights {
  Matrix token_embedding;     // vocab x hidden
  Matrix position_embedding;  // max_seq_len x hidden
  std::vector<LayerWeights> layers;
  std::vector<Scalar> final_norm;
  Matrix unembedding;  // vocab x hidden
};

/// One request's contribution to a forward pass: `tokens` occupy absolute
/// positions starting at cache->total_len().
struct SpanInput {
  KvCache* cache = nullptr;
  std::span<const TokenId> tokens;
};

/// Tiny decoder-only transformer evaluated through the emulated kernels.
/// Immutable after construction; forward() over disjoint caches is safe to
/// call concurrently.
class Model {
 public:
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const ModelWeights& weights() const { return weights_; }

  /// 64-bit FNV-1a over every weight's bit pattern.
  std::uint64_t checksum() const;

  KvCache make_cache() const { return KvCache(config_.n_layers, config_.hidden_dim); }

  /// Runs all spans as a single batch and returns one logit row per input
  /// token, in span order. Every kernel picks its plan from `policy` with
  /// batch_rows equal to the total number of input tokens. Each span's cache
  /// grows by its token count.
  ///
  /// Throws ShapeError on a bad token id or an exceeded max_seq_len, and
  /// NumericError if any logit is non-finite.
  Matrix forward(std::span<const SpanInput> spans, const SchedulePolicy& policy) const;

 private:
  ModelConfig config_;
  ModelWeights weights_;
};

inline Model init_model(const ModelConfig& config) { return Model(config); }

}  // namespace detinfer
