// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

// Decode-verify-rollback scheduler.
//
// Requests that opt into determinism decode optimistically on the fast path
// (shape-adaptive kernels, batch composition changes every iteration). Their
// candidates are withheld until a fixed-shape verification pass under pinned
// kernel plans replays the window [last consistent token, candidates..., pads]
// and confirms them. The matched prefix plus one verifier token is committed,
// the verifier's KV rows replace the fast-path rows, and anything past the
// first mismatch is discarded. Other requests are released straight from the
// fast path and never pay for verification.

#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "detinfer/kernels.hpp"
#include "detinfer/metrics.hpp"
#include "detinfer/model.hpp"
#include "detinfer/sampler.hpp"

namespace detinfer {

struct Request {
  RequestId id = 0;
  std::vector<TokenId> prompt;
  std::size_t max_new_tokens = 1;
  bool is_deterministic = false;
  SamplerSpec sampler;
  std::int64_t arrival_tick = 0;
};

enum class SeqStatus { queued, prefilling, decoding, awaiting_verification, finished };

const char* to_string(SeqStatus status);

struct SequenceState {
  Request request;
  std::vector<TokenId> committed;  // released to the caller
  std::vector<TokenId> tentative;  // fast-path output awaiting verification
  KvCache kv;
  SeqStatus status = SeqStatus::queued;
  bool eos_pending = false;
  std::uint64_t ready_since = 0;  // decode iteration at which it became ready

  /// The newest consistent token: the next verification window starts here.
  TokenId last_committed() const {
    return committed.empty() ? request.prompt.back() : committed.back();
  }
  /// The token the next fast-path iteration consumes.
  TokenId last_token() const { return tentative.empty() ? last_committed() : tentative.back(); }
  std::size_t generated() const { return committed.size() + tentative.size(); }
};

struct VerificationMember {
  RequestId id = 0;
  std::vector<TokenId> window;  // exactly window_size tokens
  std::size_t candidate_count = 0;
  std::size_t pad_count = 0;
};

struct VerificationGroup {
  std::size_t window_size = 0;
  std::vector<VerificationMember> members;
};

struct RollbackEvent {
  std::size_t discarded_count = 0;
};

struct VerificationOutcome {
  RequestId id = 0;
  std::size_t matched_prefix = 0;
  std::vector<TokenId> committed_now;
  std::optional<RollbackEvent> rollback;
  bool finished = false;
};

enum class Action { idle, prefill, decode, verify };

const char* to_string(Action action);

struct EngineEvent {
  std::int64_t tick = 0;
  Action action = Action::idle;
  RequestId request_id = 0;
  std::vector<TokenId> tokens_released;
  std::size_t matched_prefix = 0;
  std::size_t discarded = 0;
  bool finished = false;
};

/// One JSON object per line: {tick, action, request_id, tokens_released,
/// matched_prefix, discarded, finished}.
std::string to_json_line(const EngineEvent& event);

struct StepReport {
  Action action = Action::idle;
  // Input rows processed by the pass; drives the cost model.
  std::size_t pass_tokens = 0;
  std::vector<EngineEvent> events;
};

struct EngineConfig {
  std::size_t window_size = 32;
  std::size_t group_size = 8;
  std::size_t max_batch = 32;
  // Decode iterations a ready member may wait before a partial group runs.
  std::size_t staleness_bound = 4;
  // Test switch: when false, deterministic requests are released from the
  // fast path like any other request.
  bool verification_enabled = true;
  TokenId eos_token = -1;  // negative: no end-of-sequence token
  SchedulePolicy fast_path = SchedulePolicy::adaptive();
  SchedulePolicy verifier = SchedulePolicy::pinned();

  void validate() const;
};

/// Rewrites a fast-path token before it is stored. Arguments are the request,
/// the token's output index (0-based among generated tokens) and the sampled
/// token. Test-only fault injection.
using DecodeOverride = std::function<TokenId(RequestId, std::size_t, TokenId)>;

/// Runs one request's prefill: prompt[0 .. P-2] in a pass of its own, under
/// `policy` with batch rows = P-1. The last prompt token is left as the
/// consistent seed. Returns the number of rows processed.
std::size_t run_prefill(const Model& model, const Request& request, KvCache& kv,
                        const SchedulePolicy& policy);

class Engine {
 public:
  Engine(std::shared_ptr<const Model> model, EngineConfig config);

  const EngineConfig& config() const { return config_; }
  const Model& model() const { return *model_; }

  /// Validates and enqueues; callable from any thread. Throws RequestError on
  /// an empty prompt, zero max_new_tokens, out-of-vocabulary tokens, a
  /// sequence that cannot fit max_seq_len, or a duplicate id.
  RequestId submit(Request request);

  /// Executes exactly one scheduler action. Throws EngineFault if a pass
  /// produced non-finite logits or an internal invariant broke.
  StepReport step();

  /// True when every submitted request has finished.
  bool done() const;

  RunMetrics metrics() const;

  const SequenceState& state(RequestId id) const;
  const std::vector<TokenId>& released(RequestId id) const { return state(id).committed; }
  std::vector<RequestId> request_ids() const;

  /// Sequences awaiting verification, oldest first.
  std::vector<RequestId> ready() const { return {ready_.begin(), ready_.end()}; }

  /// Builds a group from the first group_size entries of `ready`.
  VerificationGroup plan_verification(std::span<const RequestId> ready) const;

  /// One forward pass under the verifier policy over every member's window.
  /// Leaves the verifier's KV rows in each member's cache; apply_outcome
  /// trims them to the commit point.
  std::vector<VerificationOutcome> run_verification(const VerificationGroup& group);

  /// Commits an outcome into its sequence and returns the release event.
  EngineEvent apply_outcome(const VerificationOutcome& outcome);

  void set_decode_override(DecodeOverride override) { decode_override_ = std::move(override); }

 private:
  enum Class { kPrefill = 0, kDecode = 1, kVerify = 2 };

  SequenceState& mutable_state(RequestId id);
  void drain_inbox();
  std::vector<RequestId> decodable() const;
  bool verification_due(bool can_decode) const;
  bool releases_directly(const SequenceState& seq) const;

  StepReport do_prefill();
  StepReport do_decode(const std::vector<RequestId>& batch);
  StepReport do_verify();

  std::shared_ptr<const Model> model_;
  EngineConfig config_;

  mutable std::mutex inbox_mutex_;
  std::vector<Request> inbox_;
  std::vector<RequestId> known_ids_;  // guarded by inbox_mutex_, sorted

  std::map<RequestId, SequenceState> states_;
  std::deque<RequestId> queue_;
  std::vector<RequestId> active_;  // admission order
  std::deque<RequestId> ready_;

  std::uint64_t decode_iter_ = 0;
  std::int64_t step_index_ = 0;
  std::size_t starving_[3] = {0, 0, 0};
  RunMetrics counters_;
  DecodeOverride decode_override_;
};

}  // namespace detinfer
