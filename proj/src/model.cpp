// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

#include "detinfer/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "detinfer/errors.hpp"
#include "detinfer/rng.hpp"

namespace detinfer {

using kernels::detail::round_bits;

namespace {

constexpr Scalar kNormEps = 1e-5;

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev, int bits) {
  Matrix m(rows, cols);
  for (auto& x : m.data) {
    x = round_bits(rng.normal(0.0, stddev), bits);
  }
  return m;
}

void fnv_mix(std::uint64_t& h, std::span<const Scalar> values) {
  for (Scalar v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffu;
      h *= 0x100000001b3ULL;
    }
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size == 0 || hidden_dim == 0 || n_layers == 0 || n_heads == 0 || ffn_dim == 0 ||
      max_seq_len == 0) {
    throw ConfigError("model dimensions must all be >= 1");
  }
  if (hidden_dim % n_heads != 0) {
    throw ConfigError("hidden_dim must be divisible by n_heads");
  }
  kernels::check_mantissa_bits(mantissa_bits);
}

KvCache::KvCache(std::size_t n_layers, std::size_t hidden_dim)
    : hidden_dim_(hidden_dim), keys_(n_layers), values_(n_layers) {}

void KvCache::extend(std::size_t n) {
  total_len_ += n;
  for (std::size_t l = 0; l < keys_.size(); ++l) {
    keys_[l].resize(total_len_ * hidden_dim_, 0.0);
    values_[l].resize(total_len_ * hidden_dim_, 0.0);
  }
}

void KvCache::truncate(std::size_t len) {
  if (len < committed_len_) {
    throw EngineFault("kv cache: truncation to " + std::to_string(len) +
                      " would drop committed entries (committed_len " +
                      std::to_string(committed_len_) + ")");
  }
  if (len >= total_len_) {
    return;
  }
  total_len_ = len;
  for (std::size_t l = 0; l < keys_.size(); ++l) {
    keys_[l].resize(total_len_ * hidden_dim_);
    values_[l].resize(total_len_ * hidden_dim_);
  }
}

void KvCache::commit(std::size_t len) {
  if (len < committed_len_ || len > total_len_) {
    throw EngineFault("kv cache: commit length " + std::to_string(len) + " outside [" +
                      std::to_string(committed_len_) + ", " + std::to_string(total_len_) + "]");
  }
  committed_len_ = len;
}

std::span<Scalar> KvCache::key(std::size_t layer, std::size_t pos) {
  return {keys_[layer].data() + pos * hidden_dim_, hidden_dim_};
}
std::span<Scalar> KvCache::value(std::size_t layer, std::size_t pos) {
  return {values_[layer].data() + pos * hidden_dim_, hidden_dim_};
}
std::span<const Scalar> KvCache::key(std::size_t layer, std::size_t pos) const {
  return {keys_[layer].data() + pos * hidden_dim_, hidden_dim_};
}
std::span<const Scalar> KvCache::value(std::size_t layer, std::size_t pos) const {
  return {values_[layer].data() + pos * hidden_dim_, hidden_dim_};
}

kernels::MatrixView KvCache::key_view(std::size_t layer, std::size_t col0, std::size_t width,
                                      std::size_t len) const {
  return {keys_[layer].data() + col0, len, width, hidden_dim_};
}
kernels::MatrixView KvCache::value_view(std::size_t layer, std::size_t col0, std::size_t width,
                                        std::size_t len) const {
  return {values_[layer].data() + col0, len, width, hidden_dim_};
}

Model::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  const int bits = config_.mantissa_bits;
  const std::size_t h = config_.hidden_dim;
  const std::size_t f = config_.ffn_dim;
  Rng rng(config_.seed);

  weights_.token_embedding = random_matrix(rng, config_.vocab_size, h, 1.0, bits);
  weights_.position_embedding = random_matrix(rng, config_.max_seq_len, h, 0.5, bits);
  const double attn_std = 1.0 / std::sqrt(static_cast<double>(h));
  const double down_std = 1.0 / std::sqrt(static_cast<double>(f));
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    LayerWeights layer;
    layer.attn_norm.assign(h, 1.0);
    layer.ffn_norm.assign(h, 1.0);
    layer.wq = random_matrix(rng, h, h, attn_std, bits);
    layer.wk = random_matrix(rng, h, h, attn_std, bits);
    layer.wv = random_matrix(rng, h, h, attn_std, bits);
    layer.wo = random_matrix(rng, h, h, attn_std, bits);
    layer.w_up = random_matrix(rng, f, h, attn_std, bits);
    layer.w_down = random_matrix(rng, h, f, down_std, bits);
    weights_.layers.push_back(std::move(layer));
  }
  weights_.final_norm.assign(h, 1.0);
  // Larger logit scale than 1/sqrt(h) so greedy decoding is not dominated by
  // a handful of tokens.
  weights_.unembedding = random_matrix(rng, config_.vocab_size, h, 2.0 * attn_std, bits);
}

std::uint64_t Model::checksum() const {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  fnv_mix(hash, weights_.token_embedding.data);
  fnv_mix(hash, weights_.position_embedding.data);
  for (const auto& layer : weights_.layers) {
    fnv_mix(hash, layer.attn_norm);
    fnv_mix(hash, layer.ffn_norm);
    for (const Matrix* m : {&layer.wq, &layer.wk, &layer.wv, &layer.wo, &layer.w_up, &layer.w_down}) {
      fnv_mix(hash, m->data);
    }
  }
  fnv_mix(hash, weights_.final_norm);
  fnv_mix(hash, weights_.unembedding.data);
  return hash;
}

Matrix Model::forward(std::span<const SpanInput> spans, const SchedulePolicy& policy) const {
  policy.validate();
  const int bits = policy.mantissa_bits;
  const std::size_t h = config_.hidden_dim;
  const std::size_t head_dim = config_.head_dim();

  struct RowRef {
    KvCache* cache;
    std::size_t pos;
  };
  std::vector<RowRef> rows;
  std::vector<TokenId> tokens;
  for (const auto& span : spans) {
    if (span.cache == nullptr) {
      throw ShapeError("forward: span without a cache");
    }
    const std::size_t start = span.cache->total_len();
    if (start + span.tokens.size() > config_.max_seq_len) {
      throw ShapeError("forward: position " + std::to_string(start + span.tokens.size() - 1) +
                       " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
    }
    for (std::size_t i = 0; i < span.tokens.size(); ++i) {
      const TokenId t = span.tokens[i];
      if (t < 0 || static_cast<std::size_t>(t) >= config_.vocab_size) {
        throw ShapeError("forward: token id " + std::to_string(t) + " outside vocabulary");
      }
      rows.push_back({span.cache, start + i});
      tokens.push_back(t);
    }
  }
  const std::size_t n_rows = rows.size();
  if (n_rows == 0) {
    throw ShapeError("forward: no input tokens");
  }

  std::vector<std::pair<KvCache*, std::size_t>> restore;
  for (const auto& span : spans) {
    restore.emplace_back(span.cache, span.cache->total_len());
    span.cache->extend(span.tokens.size());
  }

  try {
    Matrix x(n_rows, h);
    for (std::size_t r = 0; r < n_rows; ++r) {
      const auto tok = weights_.token_embedding.row(static_cast<std::size_t>(tokens[r]));
      const auto pos = weights_.position_embedding.row(rows[r].pos);
      for (std::size_t c = 0; c < h; ++c) {
        x(r, c) = round_bits(tok[c] + pos[c], bits);
      }
    }

    const std::size_t split = policy.split_for_rows(n_rows);
    Matrix attn(n_rows, h);
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
      const LayerWeights& lw = weights_.layers[l];
      const Matrix normed = kernels::rmsnorm_rows(x, lw.attn_norm, kNormEps, policy);
      const Matrix q = kernels::gemm_bt(normed, lw.wq, policy);
      const Matrix k = kernels::gemm_bt(normed, lw.wk, policy);
      const Matrix v = kernels::gemm_bt(normed, lw.wv, policy);
      for (std::size_t r = 0; r < n_rows; ++r) {
        std::ranges::copy(k.row(r), rows[r].cache->key(l, rows[r].pos).begin());
        std::ranges::copy(v.row(r), rows[r].cache->value(l, rows[r].pos).begin());
      }
      for (std::size_t r = 0; r < n_rows; ++r) {
        const std::size_t ctx = rows[r].pos + 1;
        const std::size_t kv_splits = std::min(split, ctx);
        for (std::size_t head = 0; head < config_.n_heads; ++head) {
          const std::size_t c0 = head * head_dim;
          const auto out = kernels::attention_row(
              q.row(r).subspan(c0, head_dim), rows[r].cache->key_view(l, c0, head_dim, ctx),
              rows[r].cache->value_view(l, c0, head_dim, ctx), kv_splits, bits);
          std::ranges::copy(out, attn.row(r).begin() + static_cast<std::ptrdiff_t>(c0));
        }
      }
      const Matrix projected = kernels::gemm_bt(attn, lw.wo, policy);
      for (std::size_t i = 0; i < x.data.size(); ++i) {
        x.data[i] = round_bits(x.data[i] + projected.data[i], bits);
      }

      const Matrix normed2 = kernels::rmsnorm_rows(x, lw.ffn_norm, kNormEps, policy);
      Matrix up = kernels::gemm_bt(normed2, lw.w_up, policy);
      for (auto& u : up.data) {
        // SiLU
        u = round_bits(u / round_bits(1.0 + std::exp(-u), bits), bits);
      }
      const Matrix down = kernels::gemm_bt(up, lw.w_down, policy);
      for (std::size_t i = 0; i < x.data.size(); ++i) {
        x.data[i] = round_bits(x.data[i] + down.data[i], bits);
      }
    }

    const Matrix final_normed = kernels::rmsnorm_rows(x, weights_.final_norm, kNormEps, policy);
    Matrix logits = kernels::gemm_bt(final_normed, weights_.unembedding, policy);
    kernels::require_finite(logits.data, "forward logits");
    return logits;
  } catch (...) {
    for (auto& [cache, len] : restore) {
      cache->truncate(len);
    }
    throw;
  }
}

}  // namespace detinfer
