// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

#include "detinfer/engine.hpp"

#include <algorithm>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "detinfer/errors.hpp"

namespace detinfer {

const char* to_string(SeqStatus status) {
  switch (status) {
    case SeqStatus::queued: return "queued";
    case SeqStatus::prefilling: return "prefilling";
    case SeqStatus::decoding: return "decoding";
    case SeqStatus::awaiting_verification: return "awaiting_verification";
    case SeqStatus::finished: return "finished";
  }
  return "unknown";
}

const char* to_string(Action action) {
  switch (action) {
    case Action::idle: return "idle";
    case Action::prefill: return "prefill";
    case Action::decode: return "decode";
    case Action::verify: return "verify";
  }
  return "unknown";
}

std::string to_json_line(const EngineEvent& event) {
  nlohmann::ordered_json j;
  j["tick"] = event.tick;
  j["action"] = to_string(event.action);
  j["request_id"] = event.request_id;
  j["tokens_released"] = event.tokens_released;
  j["matched_prefix"] = event.matched_prefix;
  j["discarded"] = event.discarded;
  j["finished"] = event.finished;
  return j.dump();
}

void EngineConfig::validate() const {
  if (window_size < 2) {
    throw ConfigError("window_size must be >= 2");
  }
  if (group_size < 1) {
    throw ConfigError("group_size must be >= 1");
  }
  if (max_batch < 1) {
    throw ConfigError("max_batch must be >= 1");
  }
  fast_path.validate();
  verifier.validate();
}

std::size_t run_prefill(const Model& model, const Request& request, KvCache& kv,
                        const SchedulePolicy& policy) {
  const std::size_t rows = request.prompt.size() - 1;
  if (rows > 0) {
    const SpanInput span{&kv, std::span<const TokenId>(request.prompt.data(), rows)};
    model.forward(std::span<const SpanInput>(&span, 1), policy);
  }
  kv.commit(kv.total_len());
  return rows;
}

Engine::Engine(std::shared_ptr<const Model> model, EngineConfig config)
    : model_(std::move(model)), config_(std::move(config)) {
  if (!model_) {
    throw ConfigError("engine needs a model");
  }
  config_.validate();
  if (config_.eos_token >= 0 && static_cast<std::size_t>(config_.eos_token) >= model_->config().vocab_size) {
    throw ConfigError("eos_token outside vocabulary");
  }
}

RequestId Engine::submit(Request request) {
  if (request.prompt.empty()) {
    throw RequestError("request " + std::to_string(request.id) + ": empty prompt");
  }
  if (request.max_new_tokens < 1) {
    throw RequestError("request " + std::to_string(request.id) + ": max_new_tokens must be >= 1");
  }
  const auto& mc = model_->config();
  for (TokenId t : request.prompt) {
    if (t < 0 || static_cast<std::size_t>(t) >= mc.vocab_size) {
      throw RequestError("request " + std::to_string(request.id) + ": token " + std::to_string(t) +
                         " outside vocabulary");
    }
  }
  // Highest position touched: the last prompt token plus every output, and for
  // deterministic requests the padded tail of the final verification window.
  std::size_t last_pos = request.prompt.size() - 1 + request.max_new_tokens - 1;
  if (request.is_deterministic && config_.verification_enabled) {
    last_pos += config_.window_size - 1;
  }
  if (last_pos >= mc.max_seq_len) {
    throw RequestError("request " + std::to_string(request.id) + " needs position " +
                       std::to_string(last_pos) + " but max_seq_len is " +
                       std::to_string(mc.max_seq_len));
  }
  if (request.sampler.kind == SamplerSpec::Kind::seeded && !(request.sampler.temperature > 0.0)) {
    throw RequestError("request " + std::to_string(request.id) + ": temperature must be positive");
  }

  std::lock_guard lock(inbox_mutex_);
  const auto it = std::lower_bound(known_ids_.begin(), known_ids_.end(), request.id);
  if (it != known_ids_.end() && *it == request.id) {
    throw RequestError("duplicate request id " + std::to_string(request.id));
  }
  known_ids_.insert(it, request.id);
  const RequestId id = request.id;
  inbox_.push_back(std::move(request));
  return id;
}

void Engine::drain_inbox() {
  std::vector<Request> incoming;
  {
    std::lock_guard lock(inbox_mutex_);
    incoming.swap(inbox_);
  }
  for (auto& request : incoming) {
    const RequestId id = request.id;
    SequenceState seq;
    seq.kv = model_->make_cache();
    seq.request = std::move(request);
    states_.emplace(id, std::move(seq));
    queue_.push_back(id);
  }
}

bool Engine::done() const {
  std::lock_guard lock(inbox_mutex_);
  return inbox_.empty() && queue_.empty() && active_.empty();
}

const SequenceState& Engine::state(RequestId id) const {
  const auto it = states_.find(id);
  if (it == states_.end()) {
    throw RequestError("unknown request id " + std::to_string(id));
  }
  return it->second;
}

SequenceState& Engine::mutable_state(RequestId id) {
  return const_cast<SequenceState&>(std::as_const(*this).state(id));
}

std::vector<RequestId> Engine::request_ids() const {
  std::vector<RequestId> ids;
  for (const auto& [id, seq] : states_) {
    ids.push_back(id);
  }
  return ids;
}

RunMetrics Engine::metrics() const {
  RunMetrics m = counters_;
  {
    std::lock_guard lock(inbox_mutex_);
    m.queued = queue_.size() + inbox_.size();
  }
  m.active = active_.size();
  m.tentative_in_flight = 0;
  for (RequestId id : active_) {
    m.tentative_in_flight += state(id).tentative.size();
  }
  return m;
}

bool Engine::releases_directly(const SequenceState& seq) const {
  return !seq.request.is_deterministic || !config_.verification_enabled;
}

std::vector<RequestId> Engine::decodable() const {
  std::vector<RequestId> batch;
  for (RequestId id : active_) {
    const SequenceState& seq = state(id);
    if (seq.status == SeqStatus::decoding) {
      batch.push_back(id);
    }
  }
  return batch;
}

bool Engine::verification_due(bool can_decode) const {
  if (ready_.empty()) {
    return false;
  }
  if (ready_.size() >= config_.group_size || !can_decode) {
    return true;
  }
  return decode_iter_ - state(ready_.front()).ready_since >= config_.staleness_bound;
}

StepReport Engine::step() {
  drain_inbox();
  const std::vector<RequestId> batch = decodable();
  const bool eligible[3] = {
      !queue_.empty() && active_.size() < config_.max_batch,
      !batch.empty(),
      verification_due(!batch.empty()),
  };

  // Highest priority wins unless a lower class has been passed over longer.
  int choice = -1;
  for (int c = kPrefill; c <= kVerify; ++c) {
    if (eligible[c] && (choice < 0 || starving_[c] > starving_[choice])) {
      choice = c;
    }
  }
  for (int c = kPrefill; c <= kVerify; ++c) {
    starving_[c] = (eligible[c] && c != choice) ? starving_[c] + 1 : 0;
  }

  StepReport report;
  switch (choice) {
    case kPrefill: report = do_prefill(); break;
    case kDecode: report = do_decode(batch); break;
    case kVerify: report = do_verify(); break;
    default: break;
  }
  for (auto& event : report.events) {
    event.tick = step_index_;
  }
  ++step_index_;
  return report;
}

StepReport Engine::do_prefill() {
  const RequestId id = queue_.front();
  queue_.pop_front();
  SequenceState& seq = mutable_state(id);
  seq.status = SeqStatus::prefilling;
  StepReport report;
  report.action = Action::prefill;
  try {
    report.pass_tokens = run_prefill(*model_, seq.request, seq.kv, config_.fast_path);
  } catch (const NumericError& e) {
    throw EngineFault("prefill of request " + std::to_string(id) + ": " + e.what());
  }
  seq.status = SeqStatus::decoding;
  active_.push_back(id);
  ++counters_.prefill_passes;
  report.events.push_back(EngineEvent{.action = Action::prefill, .request_id = id, .tokens_released = {}});
  return report;
}

StepReport Engine::do_decode(const std::vector<RequestId>& batch) {
  std::vector<TokenId> inputs;
  inputs.reserve(batch.size());
  std::vector<SpanInput> spans;
  spans.reserve(batch.size());
  for (RequestId id : batch) {
    SequenceState& seq = mutable_state(id);
    inputs.push_back(seq.last_token());
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    spans.push_back({&mutable_state(batch[i]).kv, std::span<const TokenId>(&inputs[i], 1)});
  }

  Matrix logits;
  try {
    logits = model_->forward(spans, config_.fast_path);
  } catch (const NumericError& e) {
    throw EngineFault("decode pass over " + std::to_string(batch.size()) + " requests: " + e.what());
  }

  StepReport report;
  report.action = Action::decode;
  report.pass_tokens = batch.size();
  ++decode_iter_;
  ++counters_.decode_passes;

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const RequestId id = batch[i];
    SequenceState& seq = mutable_state(id);
    const std::size_t out_pos = seq.kv.total_len();
    TokenId token = sample(seq.request.sampler, logits.row(i), out_pos);
    if (decode_override_) {
      token = decode_override_(id, seq.generated(), token);
    }
    ++counters_.decoded_tokens;
    const bool is_eos = config_.eos_token >= 0 && token == config_.eos_token;

    if (releases_directly(seq)) {
      seq.committed.push_back(token);
      seq.kv.commit(seq.kv.total_len());
      ++counters_.released_tokens;
      EngineEvent event{.action = Action::decode, .request_id = id, .tokens_released = {token}};
      if (is_eos || seq.committed.size() >= seq.request.max_new_tokens) {
        seq.status = SeqStatus::finished;
        event.finished = true;
      }
      report.events.push_back(std::move(event));
      continue;
    }

    seq.tentative.push_back(token);
    seq.eos_pending = is_eos;
    if (seq.eos_pending || seq.tentative.size() + 1 >= config_.window_size ||
        seq.generated() >= seq.request.max_new_tokens) {
      seq.status = SeqStatus::awaiting_verification;
      seq.ready_since = decode_iter_;
      ready_.push_back(id);
    }
    report.events.push_back(EngineEvent{.action = Action::decode, .request_id = id, .tokens_released = {}});
  }

  std::erase_if(active_, [&](RequestId id) {
    if (state(id).status != SeqStatus::finished) {
      return false;
    }
    ++counters_.finished;
    return true;
  });
  return report;
}

VerificationGroup Engine::plan_verification(std::span<const RequestId> ready) const {
  VerificationGroup group;
  group.window_size = config_.window_size;
  const std::size_t n = std::min(ready.size(), config_.group_size);
  for (std::size_t i = 0; i < n; ++i) {
    const SequenceState& seq = state(ready[i]);
    if (seq.tentative.empty() && !seq.eos_pending) {
      throw EngineFault("request " + std::to_string(ready[i]) + " has nothing to verify");
    }
    if (seq.tentative.size() >= config_.window_size) {
      throw EngineFault("request " + std::to_string(ready[i]) + " holds more candidates than fit a window");
    }
    VerificationMember member;
    member.id = ready[i];
    member.candidate_count = seq.tentative.size();
    member.window.reserve(config_.window_size);
    member.window.push_back(seq.last_committed());
    member.window.insert(member.window.end(), seq.tentative.begin(), seq.tentative.end());
    member.pad_count = config_.window_size - member.window.size();
    member.window.resize(config_.window_size, kPadToken);
    group.members.push_back(std::move(member));
  }
  return group;
}

std::vector<VerificationOutcome> Engine::run_verification(const VerificationGroup& group) {
  std::vector<SpanInput> spans;
  for (const auto& member : group.members) {
    if (member.window.size() != config_.window_size) {
      throw EngineFault("verification window for request " + std::to_string(member.id) +
                        " has " + std::to_string(member.window.size()) + " positions");
    }
    SequenceState& seq = mutable_state(member.id);
    if (member.window.front() != seq.last_committed()) {
      throw EngineFault("verification window for request " + std::to_string(member.id) +
                        " does not start from its last committed token");
    }
    // Fast-path rows are replaced by this pass.
    seq.kv.truncate(seq.kv.committed_len());
    spans.push_back({&seq.kv, member.window});
  }

  Matrix logits;
  try {
    logits = model_->forward(spans, config_.verifier);
  } catch (const NumericError& e) {
    std::string ids;
    for (const auto& member : group.members) {
      ids += (ids.empty() ? "" : ",") + std::to_string(member.id);
    }
    throw EngineFault("verification pass over requests [" + ids + "]: " + e.what());
  }

  std::vector<VerificationOutcome> outcomes;
  for (std::size_t m = 0; m < group.members.size(); ++m) {
    const auto& member = group.members[m];
    const SequenceState& seq = state(member.id);
    const std::size_t base_row = m * config_.window_size;
    const std::size_t first_out_pos = seq.kv.committed_len() + 1;
    const auto verifier_token = [&](std::size_t j) {
      return sample(seq.request.sampler, logits.row(base_row + j), first_out_pos + j);
    };

    VerificationOutcome outcome;
    outcome.id = member.id;
    const std::size_t k = member.candidate_count;
    std::size_t matched = 0;
    TokenId fresh = verifier_token(0);
    while (matched < k && seq.tentative[matched] == fresh) {
      ++matched;
      fresh = verifier_token(matched);
    }
    outcome.matched_prefix = matched;
    outcome.committed_now.assign(seq.tentative.begin(), seq.tentative.begin() + static_cast<std::ptrdiff_t>(matched));
    outcome.committed_now.push_back(fresh);
    if (matched < k) {
      outcome.rollback = RollbackEvent{k - matched};
    }

    // Nothing after an end-of-sequence token or past the output cap.
    if (config_.eos_token >= 0) {
      const auto eos = std::find(outcome.committed_now.begin(), outcome.committed_now.end(), config_.eos_token);
      if (eos != outcome.committed_now.end()) {
        outcome.committed_now.erase(eos + 1, outcome.committed_now.end());
        outcome.finished = true;
      }
    }
    const std::size_t remaining = seq.request.max_new_tokens - seq.committed.size();
    if (outcome.committed_now.size() >= remaining) {
      outcome.committed_now.resize(remaining);
      outcome.finished = true;
    }
    outcomes.push_back(std::move(outcome));
  }

  ++counters_.verification_passes;
  counters_.verified_positions += group.members.size() * config_.window_size;
  return outcomes;
}

EngineEvent Engine::apply_outcome(const VerificationOutcome& outcome) {
  SequenceState& seq = mutable_state(outcome.id);
  const std::size_t c = outcome.committed_now.size();
  if (c == 0) {
    throw EngineFault("request " + std::to_string(outcome.id) + ": verification committed nothing");
  }
  if (outcome.matched_prefix > seq.tentative.size() ||
      !std::equal(seq.tentative.begin(),
                  seq.tentative.begin() + static_cast<std::ptrdiff_t>(std::min(outcome.matched_prefix, c)),
                  outcome.committed_now.begin())) {
    throw EngineFault("request " + std::to_string(outcome.id) + ": outcome does not match candidates");
  }
  if (seq.committed.size() + c > seq.request.max_new_tokens) {
    throw EngineFault("request " + std::to_string(outcome.id) + ": commit exceeds max_new_tokens");
  }
  const std::size_t new_committed_len = seq.kv.committed_len() + c;
  if (!outcome.finished && seq.kv.total_len() < new_committed_len) {
    throw EngineFault("request " + std::to_string(outcome.id) + ": verifier KV rows missing");
  }

  const std::size_t discarded = seq.tentative.size() - std::min(outcome.matched_prefix, seq.tentative.size());
  const std::size_t fresh = c > outcome.matched_prefix ? 1 : 0;
  seq.committed.insert(seq.committed.end(), outcome.committed_now.begin(), outcome.committed_now.end());
  seq.tentative.clear();
  seq.eos_pending = false;
  if (outcome.finished) {
    seq.status = SeqStatus::finished;
  } else {
    seq.kv.truncate(new_committed_len);
    seq.kv.commit(new_committed_len);
    seq.status = SeqStatus::decoding;
  }

  counters_.released_tokens += c;
  counters_.verifier_tokens += fresh;
  counters_.recomputed_tokens += discarded;
  counters_.kv_overwrites += c;
  if (outcome.rollback) {
    ++counters_.rollback_count;
  }
  std::erase(ready_, outcome.id);
  if (outcome.finished) {
    std::erase(active_, outcome.id);
    ++counters_.finished;
  }

  return EngineEvent{.action = Action::verify,
                     .request_id = outcome.id,
                     .tokens_released = outcome.committed_now,
                     .matched_prefix = outcome.matched_prefix,
                     .discarded = discarded,
                     .finished = outcome.finished};
}

StepReport Engine::do_verify() {
  const std::vector<RequestId> candidates(ready_.begin(), ready_.end());
  const VerificationGroup group = plan_verification(candidates);
  const auto outcomes = run_verification(group);

  StepReport report;
  report.action = Action::verify;
  report.pass_tokens = group.members.size() * config_.window_size;
  for (const auto& outcome : outcomes) {
    report.events.push_back(apply_outcome(outcome));
  }
  return report;
}

}  // namespace detinfer
