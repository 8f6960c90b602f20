// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

#include "detinfer/harness.hpp"

#include <algorithm>
#include <cstdio>

namespace detinfer {

void CostModel::validate() const {
  if (fixed_ticks < 0 || per_token_ticks < 0 || fixed_ticks + per_token_ticks == 0) {
    throw ConfigError("cost model needs non-negative constants, not both zero");
  }
}

std::int64_t CostModel::cost(Action action, std::size_t pass_tokens) const {
  if (action == Action::idle) {
    return 0;
  }
  return fixed_ticks + per_token_ticks * static_cast<std::int64_t>(pass_tokens);
}

namespace {

std::uint64_t default_step_budget(const Workload& workload, const EngineConfig& config) {
  // Worst case per output token: one verification plus a window of decodes.
  std::uint64_t budget = 64;
  for (const auto& r : workload.requests) {
    budget += 2 + r.max_new_tokens * (config.window_size + 2);
  }
  return budget;
}

}  // namespace

RunResult run_online(std::shared_ptr<const Model> model, const EngineConfig& config,
                     const Workload& workload, const CostModel& cost, const RunOptions& options) {
  cost.validate();
  Engine engine(std::move(model), config);
  if (options.decode_override) {
    engine.set_decode_override(options.decode_override);
  }

  std::vector<const Request*> order;
  for (const auto& r : workload.requests) {
    order.push_back(&r);
  }
  std::stable_sort(order.begin(), order.end(), [](const Request* a, const Request* b) {
    return a->arrival_tick < b->arrival_tick;
  });

  RunResult result;
  std::map<RequestId, RequestTiming> timing;
  const std::uint64_t budget =
      options.step_budget > 0 ? options.step_budget : default_step_budget(workload, config);

  std::int64_t now = 0;
  std::size_t next = 0;
  std::uint64_t steps = 0;
  try {
    while (true) {
      while (next < order.size() && order[next]->arrival_tick <= now) {
        const Request& r = *order[next++];
        engine.submit(r);
        RequestTiming& t = timing[r.id];
        t.id = r.id;
        t.is_deterministic = r.is_deterministic;
        t.arrival_tick = r.arrival_tick;
      }
      if (engine.done()) {
        if (next == order.size()) {
          break;
        }
        now = std::max(now, order[next]->arrival_tick);
        continue;
      }
      if (++steps > budget) {
        throw EngineFault("step budget of " + std::to_string(budget) + " exhausted");
      }
      StepReport report = engine.step();
      if (report.action == Action::idle) {
        throw EngineFault("engine idle with unfinished requests");
      }
      now += cost.cost(report.action, report.pass_tokens);
      for (auto& event : report.events) {
        event.tick = now;
        RequestTiming& t = timing.at(event.request_id);
        if (!event.tokens_released.empty()) {
          if (t.first_token_tick < 0) {
            t.first_token_tick = now;
          }
          t.released_tokens += event.tokens_released.size();
        }
        if (event.discarded > 0) {
          ++t.rollbacks;
          t.recomputed_tokens += event.discarded;
        }
        if (event.finished) {
          t.finish_tick = now;
        }
        if (options.record_events) {
          result.events.push_back(std::move(event));
        }
      }
    }
  } catch (const EngineFault& e) {
    throw RunFault(e.what(), std::move(result.events));
  }

  result.metrics = engine.metrics();
  result.metrics.total_ticks = now;
  for (auto& [id, t] : timing) {
    result.metrics.requests.push_back(t);
    result.outputs[id] = engine.released(id);
  }
  return result;
}

RunResult run_offline(std::shared_ptr<const Model> model, const EngineConfig& config,
                      const Workload& workload, const CostModel& cost, const RunOptions& options) {
  Workload offline = workload;
  for (auto& r : offline.requests) {
    r.arrival_tick = 0;
  }
  offline.arrival = {};
  return run_online(std::move(model), config, offline, cost, options);
}

std::vector<DriftRecord> drift_experiment(std::shared_ptr<const Model> model,
                                          const EngineConfig& config, const CostModel& cost,
                                          const DriftSpec& spec) {
  SyntheticSpec gen;
  gen.n = spec.n;
  gen.prompt_len = spec.prompt_len;
  gen.output_len = spec.output_len;
  gen.seed = spec.seed;
  gen.vocab_size = model->config().vocab_size;
  Workload workload = gen_synthetic(gen);
  apply_poisson_arrivals(workload, spec.qps, spec.seed);

  EngineConfig fast = config;
  fast.verification_enabled = false;
  const auto references = batch1_sequences(workload.requests, *model, fast);
  RunOptions options;
  options.record_events = false;
  const RunResult run = run_online(model, fast, workload, cost, options);

  std::vector<DriftRecord> records;
  for (std::size_t i = 0; i < workload.requests.size(); ++i) {
    const RequestId id = workload.requests[i].id;
    records.push_back({id, consistent_spans(references[i], run.outputs.at(id))});
  }
  return records;
}

std::vector<SweepCell> ablation_sweep(std::shared_ptr<const Model> model, const EngineConfig& base,
                                      const CostModel& cost, std::span<const std::size_t> windows,
                                      std::span<const std::size_t> groups,
                                      const Workload& workload) {
  std::vector<SweepCell> cells;
  std::map<RequestId, std::vector<TokenId>> reference;
  RunOptions options;
  options.record_events = false;
  for (std::size_t w : windows) {
    for (std::size_t g : groups) {
      EngineConfig config = base;
      config.window_size = w;
      config.group_size = g;
      RunResult run = run_offline(model, config, workload, cost, options);
      std::map<RequestId, std::vector<TokenId>> det;
      for (const auto& r : workload.requests) {
        if (r.is_deterministic) {
          det[r.id] = run.outputs.at(r.id);
        }
      }
      SweepCell cell{w, g, std::move(run.metrics), true};
      if (cells.empty()) {
        reference = std::move(det);
      } else {
        cell.outputs_match = det == reference;
      }
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

std::vector<std::pair<RequestId, std::size_t>> divergences(
    const std::map<RequestId, std::vector<TokenId>>& observed,
    const std::map<RequestId, std::vector<TokenId>>& expected) {
  std::vector<std::pair<RequestId, std::size_t>> out;
  for (const auto& [id, want] : expected) {
    const auto it = observed.find(id);
    if (it == observed.end()) {
      out.emplace_back(id, 0);
      continue;
    }
    const auto& got = it->second;
    const auto mismatch = std::mismatch(want.begin(), want.end(), got.begin(), got.end());
    if (mismatch.first != want.end() || mismatch.second != got.end()) {
      out.emplace_back(id, static_cast<std::size_t>(mismatch.first - want.begin()));
    }
  }
  return out;
}

namespace {

nlohmann::ordered_json percentile_json(const std::vector<double>& samples) {
  const Percentiles p = percentiles(samples);
  nlohmann::ordered_json j;
  j["count"] = samples.size();
  j["p50"] = p.p50;
  j["p75"] = p.p75;
  j["p90"] = p.p90;
  j["p99"] = p.p99;
  return j;
}

nlohmann::ordered_json latency_json(const RunMetrics& m, int det_filter) {
  std::vector<double> e2e;
  std::vector<double> ttft;
  for (const auto& r : m.requests) {
    if (det_filter >= 0 && r.is_deterministic != (det_filter == 1)) {
      continue;
    }
    if (r.finish_tick >= 0) {
      e2e.push_back(static_cast<double>(r.e2e()));
    }
    if (r.first_token_tick >= 0) {
      ttft.push_back(static_cast<double>(r.ttft()));
    }
  }
  nlohmann::ordered_json j;
  j["e2e_ticks"] = percentile_json(e2e);
  j["ttft_ticks"] = percentile_json(ttft);
  return j;
}

std::string fixed6(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

}  // namespace

nlohmann::ordered_json metrics_report(const RunMetrics& m, const nlohmann::ordered_json& config_echo) {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["config"] = config_echo;
  nlohmann::ordered_json c;
  c["requests"] = m.requests.size();
  c["finished"] = m.finished;
  c["prefill_passes"] = m.prefill_passes;
  c["decode_passes"] = m.decode_passes;
  c["verification_passes"] = m.verification_passes;
  c["decoded_tokens"] = m.decoded_tokens;
  c["verifier_tokens"] = m.verifier_tokens;
  c["released_tokens"] = m.released_tokens;
  c["rollback_count"] = m.rollback_count;
  c["recomputed_tokens"] = m.recomputed_tokens;
  c["recomputed_fraction"] = m.recomputed_fraction();
  c["verified_positions"] = m.verified_positions;
  c["kv_overwrites"] = m.kv_overwrites;
  c["total_ticks"] = m.total_ticks;
  c["tokens_per_second"] = m.tokens_per_second();
  j["counters"] = c;
  nlohmann::ordered_json lat;
  lat["all"] = latency_json(m, -1);
  lat["deterministic"] = latency_json(m, 1);
  lat["non_deterministic"] = latency_json(m, 0);
  j["latency"] = lat;
  return j;
}

void write_events(std::ostream& out, std::span<const EngineEvent> events) {
  for (const auto& e : events) {
    out << to_json_line(e) << '\n';
  }
}

void write_drift_csv(std::ostream& out, std::span<const DriftRecord> records) {
  out << "request_id,first_span,second_span\n";
  for (const auto& r : records) {
    out << r.id << ',' << r.spans.first_span << ',' << r.spans.second_span << '\n';
  }
}

void write_sweep_csv(std::ostream& out, std::span<const SweepCell> cells) {
  out << "window_size,group_size,verification_passes,rollback_count,recomputed_tokens,"
         "released_tokens,recomputed_fraction,total_ticks,tokens_per_second,outputs_match\n";
  for (const auto& c : cells) {
    const auto& m = c.metrics;
    out << c.window_size << ',' << c.group_size << ',' << m.verification_passes << ','
        << m.rollback_count << ',' << m.recomputed_tokens << ',' << m.released_tokens << ','
        << fixed6(m.recomputed_fraction()) << ',' << m.total_ticks << ','
        << fixed6(m.tokens_per_second()) << ',' << (c.outputs_match ? "true" : "false") << '\n';
  }
}

}  // namespace detinfer
