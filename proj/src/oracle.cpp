// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

#include "detinfer/oracle.hpp"

#include <algorithm>
#include <exception>
#include <thread>

#include "detinfer/sampler.hpp"

namespace detinfer {

namespace {

KvCache prefill(const Request& request, const Model& model, const SchedulePolicy& policy) {
  KvCache kv = model.make_cache();
  const std::size_t rows = request.prompt.size() - 1;
  if (rows > 0) {
    const SpanInput span{&kv, std::span<const TokenId>(request.prompt.data(), rows)};
    model.forward(std::span<const SpanInput>(&span, 1), policy);
  }
  kv.commit(kv.total_len());
  return kv;
}

bool is_eos(const EngineConfig& config, TokenId t) {
  return config.eos_token >= 0 && t == config.eos_token;
}

template <typename Fn>
std::vector<std::vector<TokenId>> map_requests(std::span<const Request> requests, Fn fn) {
  std::vector<std::vector<TokenId>> out(requests.size());
  const std::size_t workers =
      std::min<std::size_t>(std::max(1u, std::thread::hardware_concurrency()), requests.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < requests.size(); ++i) {
      out[i] = fn(requests[i]);
    }
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < requests.size(); i += workers) {
          out[i] = fn(requests[i]);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) {
    t.join();
  }
  for (const auto& e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
  return out;
}

}  // namespace

std::vector<TokenId> canonical_sequence(const Request& request, const Model& model,
                                        const EngineConfig& config) {
  KvCache kv = prefill(request, model, config.fast_path);
  std::vector<TokenId> out;
  std::vector<TokenId> window(config.window_size, kPadToken);
  TokenId last = request.prompt.back();
  while (out.size() < request.max_new_tokens) {
    const std::size_t pos = kv.total_len();
    window[0] = last;
    const SpanInput span{&kv, window};
    const Matrix logits = model.forward(std::span<const SpanInput>(&span, 1), config.verifier);
    last = sample(request.sampler, logits.row(0), pos + 1);
    kv.truncate(pos + 1);
    kv.commit(pos + 1);
    out.push_back(last);
    if (is_eos(config, last)) {
      break;
    }
  }
  return out;
}

std::vector<TokenId> batch1_sequence(const Request& request, const Model& model,
                                     const EngineConfig& config) {
  KvCache kv = prefill(request, model, config.fast_path);
  std::vector<TokenId> out;
  TokenId last = request.prompt.back();
  while (out.size() < request.max_new_tokens) {
    const std::size_t pos = kv.total_len();
    const SpanInput span{&kv, std::span<const TokenId>(&last, 1)};
    const Matrix logits = model.forward(std::span<const SpanInput>(&span, 1), config.fast_path);
    last = sample(request.sampler, logits.row(0), pos + 1);
    out.push_back(last);
    if (is_eos(config, last)) {
      break;
    }
  }
  return out;
}

std::vector<std::vector<TokenId>> canonical_sequences(std::span<const Request> requests,
                                                      const Model& model,
                                                      const EngineConfig& config) {
  return map_requests(requests, [&](const Request& r) { return canonical_sequence(r, model, config); });
}

std::vector<std::vector<TokenId>> batch1_sequences(std::span<const Request> requests,
                                                   const Model& model, const EngineConfig& config) {
  return map_requests(requests, [&](const Request& r) { return batch1_sequence(r, model, config); });
}

ConsistentSpans consistent_spans(std::span<const TokenId> reference,
                                 std::span<const TokenId> observed) {
  const std::size_t n = std::min(reference.size(), observed.size());
  ConsistentSpans spans;
  while (spans.first_span < n && reference[spans.first_span] == observed[spans.first_span]) {
    ++spans.first_span;
  }
  if (spans.first_span == n && reference.size() == observed.size()) {
    return spans;
  }
  for (std::size_t i = spans.first_span + 1; i < n && reference[i] == observed[i]; ++i) {
    ++spans.second_span;
  }
  return spans;
}

}  // namespace detinfer
