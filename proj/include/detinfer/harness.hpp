// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

// Virtual-clock runs over an Engine. Time is measured in ticks (1 tick = 1
// microsecond); a pass costs fixed_ticks + per_token_ticks * rows, so small
// passes are dominated by fixed overhead and the per-token cost of a pass
// falls as it grows. The constants are synthetic.

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "detinfer/engine.hpp"
#include "detinfer/errors.hpp"
#include "detinfer/metrics.hpp"
#include "detinfer/model.hpp"
#include "detinfer/oracle.hpp"
#include "detinfer/workload.hpp"

namespace detinfer {

struct CostModel {
  std::int64_t fixed_ticks = 5000;
  std::int64_t per_token_ticks = 10;

  void validate() const;
  std::int64_t cost(Action action, std::size_t pass_tokens) const;
};

struct RunOptions {
  // Maximum engine steps; 0 derives a bound from the workload.
  std::uint64_t step_budget = 0;
  bool record_events = true;
  DecodeOverride decode_override;
};

struct RunResult {
  RunMetrics metrics;
  std::vector<EngineEvent> events;
  std::map<RequestId, std::vector<TokenId>> outputs;
};

/// An engine fault or exhausted step budget, with the event log up to the
/// failure.
class RunFault : public EngineFault {
 public:
  RunFault(const std::string& what, std::vector<EngineEvent> events)
      : EngineFault(what), events_(std::move(events)) {}
  const std::vector<EngineEvent>& events() const { return events_; }

 private:
  std::vector<EngineEvent> events_;
};

/// Discrete-event loop: requests are submitted once the clock reaches their
/// arrival tick, each step advances the clock by its pass cost, and an idle
/// engine jumps to the next arrival. Event ticks are virtual times at which
/// the pass completed.
RunResult run_online(std::shared_ptr<const Model> model, const EngineConfig& config,
                     const Workload& workload, const CostModel& cost,
                     const RunOptions& options = {});

/// run_online with every arrival moved to tick 0.
RunResult run_offline(std::shared_ptr<const Model> model, const EngineConfig& config,
                      const Workload& workload, const CostModel& cost,
                      const RunOptions& options = {});

struct DriftRecord {
  RequestId id = 0;
  ConsistentSpans spans;
};

struct DriftSpec {
  std::size_t n = 64;
  LengthDist prompt_len = LengthDist::uniform(8, 32);
  LengthDist output_len = LengthDist::fixed(64);
  double qps = 50.0;  // co-traffic arrival rate
  std::uint64_t seed = 1;
};

/// Batch-size-one references against an online co-batched run with
/// verification disabled.
std::vector<DriftRecord> drift_experiment(std::shared_ptr<const Model> model,
                                          const EngineConfig& config, const CostModel& cost,
                                          const DriftSpec& spec);

struct SweepCell {
  std::size_t window_size = 0;
  std::size_t group_size = 0;
  RunMetrics metrics;
  // Deterministic outputs equal those of the first cell.
  bool outputs_match = true;
};

/// Offline runs over the cross product of windows and group sizes, W-major.
std::vector<SweepCell> ablation_sweep(std::shared_ptr<const Model> model,
                                      const EngineConfig& base, const CostModel& cost,
                                      std::span<const std::size_t> windows,
                                      std::span<const std::size_t> groups,
                                      const Workload& workload);

/// Outputs of deterministic requests whose released tokens differ from
/// `expected`: (request, first differing position), request-ordered.
std::vector<std::pair<RequestId, std::size_t>> divergences(
    const std::map<RequestId, std::vector<TokenId>>& observed,
    const std::map<RequestId, std::vector<TokenId>>& expected);

/// Metrics report: {schema_version, config, counters, latency{e2e, ttft}}.
nlohmann::ordered_json metrics_report(const RunMetrics& metrics,
                                      const nlohmann::ordered_json& config_echo);

void write_events(std::ostream& out, std::span<const EngineEvent> events);
void write_drift_csv(std::ostream& out, std::span<const DriftRecord> records);
void write_sweep_csv(std::ostream& out, std::span<const SweepCell> cells);

}  // namespace detinfer
