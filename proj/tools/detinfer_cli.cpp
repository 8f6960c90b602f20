// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

// detinfer command-line front end. Exit codes: 0 success, 1 determinism
// violation, 2 usage or configuration error, 3 engine fault.
// DETINFER_LOG=debug prints progress to stderr.

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "detinfer/config.hpp"
#include "detinfer/errors.hpp"
#include "detinfer/harness.hpp"
#include "detinfer/invariance.hpp"
#include "detinfer/oracle.hpp"
#include "detinfer/workload.hpp"

namespace {

using namespace detinfer;

constexpr int kExitViolation = 1;
constexpr int kExitUsage = 2;
constexpr int kExitFault = 3;

bool debug_log() {
  const char* v = std::getenv("DETINFER_LOG");
  return v != nullptr && std::string(v) == "debug";
}

void log(const std::string& msg) {
  if (debug_log()) {
    std::cerr << "[detinfer] " << msg << '\n';
  }
}

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "Flat JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "Override a config key, key=value (value parsed as JSON)");
}

AppConfig resolve_config(const Common& c) {
  AppConfig config = c.config_path.empty() ? AppConfig{} : load_config(c.config_path);
  nlohmann::json overrides = nlohmann::json::object();
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("--set expects key=value, got '" + s + "'");
    }
    const std::string value = s.substr(eq + 1);
    overrides[s.substr(0, eq)] = nlohmann::json::accept(value) ? nlohmann::json::parse(value)
                                                               : nlohmann::json(value);
  }
  return apply_overrides(config, overrides);
}

std::shared_ptr<const Model> make_model(const AppConfig& config) {
  return std::make_shared<const Model>(init_model(config.model));
}

LengthDist parse_dist(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ':');) {
    parts.push_back(p);
  }
  const auto num = [&](std::size_t i) {
    try {
      std::size_t used = 0;
      const double v = std::stod(parts.at(i), &used);
      if (used != parts[i].size()) {
        throw std::invalid_argument("");
      }
      return v;
    } catch (const std::exception&) {
      throw ConfigError("bad length distribution '" + text + "'");
    }
  };
  const auto count = [&](std::size_t i) { return static_cast<std::size_t>(num(i)); };
  LengthDist d;
  if (parts.size() == 2 && parts[0] == "fixed") {
    d = LengthDist::fixed(count(1));
  } else if (parts.size() == 3 && parts[0] == "uniform") {
    d = LengthDist::uniform(count(1), count(2));
  } else if (parts.size() == 5 && parts[0] == "lognormal") {
    d = LengthDist::lognormal(num(1), num(2), count(3), count(4));
  } else {
    throw ConfigError("length distribution must be fixed:N, uniform:LO:HI or "
                      "lognormal:MEAN:MEDIAN:MIN:MAX, got '" + text + "'");
  }
  d.validate();
  return d;
}

std::vector<std::size_t> parse_list(const std::string& text, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ',');) {
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(p, &used);
      if (used != p.size() || v == 0) {
        throw std::invalid_argument("");
      }
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError(std::string(what) + " must be a comma-separated list of positive integers");
    }
  }
  if (out.empty()) {
    throw ConfigError(std::string(what) + " is empty");
  }
  return out;
}

// Writes to `path`, or stdout when it is empty or "-".
void emit(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw ConfigError("cannot write " + path);
  }
  out << content;
}

std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

void write_event_log(const std::string& path, std::span<const EngineEvent> events) {
  if (path.empty()) {
    return;
  }
  std::ostringstream out;
  write_events(out, events);
  emit(path, out.str());
}

std::string percentile_table(const RunMetrics& m) {
  std::ostringstream out;
  out << "class              metric      count        p50        p75        p90        p99\n";
  const auto row = [&](const char* cls, const char* metric, const std::vector<double>& v) {
    const Percentiles p = percentiles(v);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-18s %-8s %8zu %10.0f %10.0f %10.0f %10.0f\n", cls, metric,
                  v.size(), p.p50, p.p75, p.p90, p.p99);
    out << buf;
  };
  for (int cls = -1; cls <= 1; ++cls) {
    std::vector<double> e2e;
    std::vector<double> ttft;
    for (const auto& r : m.requests) {
      if (cls >= 0 && r.is_deterministic != (cls == 1)) {
        continue;
      }
      if (r.finish_tick >= 0) {
        e2e.push_back(static_cast<double>(r.e2e()));
      }
      if (r.first_token_tick >= 0) {
        ttft.push_back(static_cast<double>(r.ttft()));
      }
    }
    const char* name = cls < 0 ? "all" : cls == 1 ? "deterministic" : "non_deterministic";
    row(name, "e2e", e2e);
    row(name, "ttft", ttft);
  }
  return out.str();
}

struct RunArgs {
  Common common;
  std::string workload_path;
  std::string out_path;
  std::string events_path;
  std::optional<double> det_ratio;
  std::uint64_t det_seed = 1;
  std::optional<double> qps;
  std::uint64_t arrival_seed = 1;
};

void add_run_options(CLI::App* cmd, RunArgs& a, bool online) {
  add_common(cmd, a.common);
  cmd->add_option("--workload", a.workload_path, "Workload JSON-lines file")->required();
  cmd->add_option("--out", a.out_path, "Metrics JSON output path (default stdout)");
  cmd->add_option("--events", a.events_path, "Event log JSON-lines output path");
  cmd->add_option("--det-ratio", a.det_ratio, "Reassign deterministic flags to this fraction");
  cmd->add_option("--det-seed", a.det_seed, "Seed for --det-ratio reassignment");
  if (online) {
    cmd->add_option("--qps", a.qps, "Replace arrivals with a Poisson process at this rate");
    cmd->add_option("--arrival-seed", a.arrival_seed, "Seed for Poisson arrivals");
  }
}

int cmd_run(const RunArgs& a, bool online) {
  const AppConfig config = resolve_config(a.common);
  Workload workload = load_workload(a.workload_path, config.model.vocab_size);
  if (a.det_ratio) {
    assign_det_flags(workload, *a.det_ratio, a.det_seed);
  }
  if (a.qps) {
    if (!(*a.qps > 0.0)) {
      throw ConfigError("--qps must be positive");
    }
    apply_poisson_arrivals(workload, *a.qps, a.arrival_seed);
  }
  log("running " + std::to_string(workload.requests.size()) + " requests");
  const auto model = make_model(config);
  RunResult run;
  try {
    run = online ? run_online(model, config.engine, workload, config.cost)
                 : run_offline(model, config.engine, workload, config.cost);
  } catch (const RunFault& e) {
    write_event_log(a.events_path, e.events());
    throw;
  }
  write_event_log(a.events_path, run.events);
  auto echo = config_to_json(config);
  echo["mode"] = online ? "online" : "offline";
  emit(a.out_path, dump(metrics_report(run.metrics, echo)));
  if (online) {
    std::cout << percentile_table(run.metrics);
  } else if (!a.out_path.empty() && a.out_path != "-") {
    const auto& m = run.metrics;
    std::cout << "requests=" << m.requests.size() << " released_tokens=" << m.released_tokens
              << " verification_passes=" << m.verification_passes
              << " rollbacks=" << m.rollback_count << " total_ticks=" << m.total_ticks << '\n';
  }
  return 0;
}

struct GenArgs {
  std::size_t n = 64;
  std::string prompt_len = "uniform:4:32";
  std::string output_len = "uniform:16:64";
  double det_ratio = 0.0;
  double seeded_ratio = 0.0;
  std::uint64_t seed = 1;
  std::size_t vocab = 256;
  std::optional<double> qps;
  std::uint64_t arrival_seed = 1;
  std::string out_path;
};

int cmd_gen(const GenArgs& a) {
  SyntheticSpec spec;
  spec.n = a.n;
  spec.prompt_len = parse_dist(a.prompt_len);
  spec.output_len = parse_dist(a.output_len);
  spec.det_ratio = a.det_ratio;
  spec.seeded_ratio = a.seeded_ratio;
  spec.seed = a.seed;
  spec.vocab_size = a.vocab;
  Workload w = gen_synthetic(spec);
  if (a.qps) {
    apply_poisson_arrivals(w, *a.qps, a.arrival_seed);
  }
  std::ostringstream out;
  write_workload(out, w);
  emit(a.out_path, out.str());
  return 0;
}

struct VerifyArgs {
  Common common;
  std::string workload_path;
  std::size_t runs = 10;
  std::uint64_t seed = 1;
  std::size_t co_traffic = 32;
  double qps = 200.0;
  bool disable_verification = false;
};

int cmd_verify(const VerifyArgs& a) {
  AppConfig config = resolve_config(a.common);
  if (a.disable_verification) {
    config.engine.verification_enabled = false;
  }
  if (a.runs < 2) {
    throw ConfigError("--runs must be >= 2");
  }
  if (!(a.qps > 0.0)) {
    throw ConfigError("--qps must be positive");
  }
  const Workload base = load_workload(a.workload_path, config.model.vocab_size);
  std::vector<Request> det;
  RequestId max_id = 0;
  for (const auto& r : base.requests) {
    max_id = std::max(max_id, r.id);
    if (r.is_deterministic) {
      det.push_back(r);
    }
  }
  const auto model = make_model(config);
  log("computing canonical sequences for " + std::to_string(det.size()) + " requests");
  const auto canon = canonical_sequences(det, *model, config.engine);
  std::map<RequestId, std::vector<TokenId>> expected;
  for (std::size_t i = 0; i < det.size(); ++i) {
    expected[det[i].id] = canon[i];
  }

  std::size_t violating_runs = 0;
  std::optional<std::pair<RequestId, std::size_t>> first;
  std::size_t first_run = 0;
  for (std::size_t run = 0; run < a.runs; ++run) {
    const std::uint64_t run_seed = hash_combine(a.seed, run);
    // Fresh non-deterministic co-traffic, shuffled order, jittered arrivals.
    SyntheticSpec co;
    co.n = a.co_traffic;
    co.prompt_len = LengthDist::uniform(2, 32);
    co.output_len = LengthDist::uniform(8, 64);
    co.seed = run_seed;
    co.vocab_size = config.model.vocab_size;
    co.first_id = max_id + 1;
    Workload w = gen_synthetic(co);
    for (const auto& r : base.requests) {
      w.requests.push_back(r);
    }
    Rng rng(run_seed);
    rng.shuffle(std::span<Request>(w.requests));
    apply_poisson_arrivals(w, a.qps, run_seed);

    log("run " + std::to_string(run + 1) + "/" + std::to_string(a.runs));
    RunOptions options;
    options.record_events = false;
    const RunResult result = run_online(model, config.engine, w, config.cost, options);
    const auto diffs = divergences(result.outputs, expected);
    if (!diffs.empty()) {
      ++violating_runs;
      if (!first) {
        first = diffs.front();
        first_run = run;
      }
    }
  }

  std::cout << "runs=" << a.runs << " deterministic_requests=" << det.size()
            << " violating_runs=" << violating_runs << '\n';
  if (first) {
    std::cout << "FAIL first divergence: run " << first_run << " request " << first->first
              << " position " << first->second << '\n';
    return kExitViolation;
  }
  std::cout << "PASS every deterministic output matched the canonical sequence in every run\n";
  return 0;
}

struct DriftArgs {
  Common common;
  std::size_t n = 64;
  std::string prompt_len = "uniform:8:32";
  std::string output_len = "fixed:64";
  double qps = 50.0;
  std::uint64_t seed = 1;
  std::string out_path;
};

int cmd_drift(const DriftArgs& a) {
  const AppConfig config = resolve_config(a.common);
  if (!(a.qps > 0.0)) {
    throw ConfigError("--qps must be positive");
  }
  DriftSpec spec;
  spec.n = a.n;
  spec.prompt_len = parse_dist(a.prompt_len);
  spec.output_len = parse_dist(a.output_len);
  spec.qps = a.qps;
  spec.seed = a.seed;
  const auto records = drift_experiment(make_model(config), config.engine, config.cost, spec);
  std::ostringstream out;
  write_drift_csv(out, records);
  emit(a.out_path, out.str());
  if (!a.out_path.empty() && a.out_path != "-" && !records.empty()) {
    std::vector<double> f;
    std::vector<double> s;
    for (const auto& r : records) {
      f.push_back(static_cast<double>(r.spans.first_span));
      s.push_back(static_cast<double>(r.spans.second_span));
    }
    std::cout << "requests=" << records.size() << " median_first_span=" << percentiles(f).p50
              << " median_second_span=" << percentiles(s).p50 << '\n';
  }
  return 0;
}

struct SweepArgs {
  Common common;
  std::string workload_path;
  std::string windows = "16,32,64,128,256";
  std::string groups = "1,2,4,8";
  std::string out_path;
};

int cmd_sweep(const SweepArgs& a) {
  const AppConfig config = resolve_config(a.common);
  const auto windows = parse_list(a.windows, "--windows");
  const auto groups = parse_list(a.groups, "--groups");
  const Workload workload = load_workload(a.workload_path, config.model.vocab_size);
  const auto cells = ablation_sweep(make_model(config), config.engine, config.cost, windows, groups, workload);
  std::ostringstream out;
  write_sweep_csv(out, cells);
  emit(a.out_path, out.str());
  const bool consistent = std::all_of(cells.begin(), cells.end(), [](const SweepCell& c) { return c.outputs_match; });
  if (!consistent) {
    std::cerr << "deterministic outputs differ between sweep cells\n";
    return kExitViolation;
  }
  return 0;
}

struct BenchArgs {
  int mantissa = 10;
  std::uint64_t seed = 1;
  std::size_t k = 64;
  std::uint64_t max_seeds = 100000;
  std::string out_path;
};

int cmd_bench(const BenchArgs& a) {
  kernels::check_mantissa_bits(a.mantissa);
  if (a.k < 2) {
    throw ConfigError("--k must be >= 2");
  }
  const auto results = invariance::run_suite(a.mantissa, a.seed);
  const auto witness = invariance::find_split_witness(a.k, a.mantissa, 1, 2, 0, a.max_seeds);
  std::ostringstream out;
  out << "check,kernel,policy,rows,k,n,result\n";
  bool all_pass = true;
  for (const auto& r : results) {
    all_pass = all_pass && r.passed;
    out << r.property << "_invariance," << r.kernel << ',' << r.policy << ',' << r.shape.rows << ','
        << r.shape.k << ',' << r.shape.n << ',' << (r.passed ? "pass" : "fail") << '\n';
  }
  out << "split_witness,dot,split1_vs_split2,1," << a.k << ",1,";
  if (witness) {
    out << "seed=" << *witness << '\n';
  } else {
    out << "none\n";
  }
  emit(a.out_path, out.str());
  return all_pass ? 0 : kExitViolation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"detinfer: deterministic inference via decode-verify-rollback"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-workload", "Write a synthetic workload as JSON lines");
  gen_cmd->add_option("--n", gen.n, "Number of requests");
  gen_cmd->add_option("--prompt-len", gen.prompt_len, "fixed:N | uniform:LO:HI | lognormal:MEAN:MEDIAN:MIN:MAX");
  gen_cmd->add_option("--output-len", gen.output_len, "Same syntax as --prompt-len");
  gen_cmd->add_option("--det-ratio", gen.det_ratio, "Fraction of deterministic requests");
  gen_cmd->add_option("--seeded-ratio", gen.seeded_ratio, "Fraction using seeded sampling");
  gen_cmd->add_option("--seed", gen.seed, "Workload seed");
  gen_cmd->add_option("--vocab", gen.vocab, "Vocabulary size");
  gen_cmd->add_option("--qps", gen.qps, "Poisson arrival rate (default: all at tick 0)");
  gen_cmd->add_option("--arrival-seed", gen.arrival_seed, "Seed for Poisson arrivals");
  gen_cmd->add_option("--out", gen.out_path, "Output path (default stdout)");

  RunArgs offline;
  auto* offline_cmd = app.add_subcommand("run-offline", "Run a workload with every request at tick 0");
  add_run_options(offline_cmd, offline, false);

  RunArgs online;
  auto* online_cmd = app.add_subcommand("run-online", "Run a workload on the virtual clock");
  add_run_options(online_cmd, online, true);

  VerifyArgs verify;
  auto* verify_cmd = app.add_subcommand("verify-determinism",
                                        "Check deterministic outputs across runs against the canonical sequence");
  add_common(verify_cmd, verify.common);
  verify_cmd->add_option("--workload", verify.workload_path, "Workload JSON-lines file")->required();
  verify_cmd->add_option("--runs", verify.runs, "Number of runs (>= 2)");
  verify_cmd->add_option("--seed", verify.seed, "Base seed for co-traffic and arrivals");
  verify_cmd->add_option("--co-traffic", verify.co_traffic, "Extra non-deterministic requests per run");
  verify_cmd->add_option("--qps", verify.qps, "Arrival rate of the combined traffic");
  verify_cmd->add_flag("--disable-verification", verify.disable_verification,
                       "Release deterministic requests from the fast path (negative control)");

  DriftArgs drift;
  auto* drift_cmd = app.add_subcommand("drift-experiment", "Consistent spans of co-batched fast-path outputs");
  add_common(drift_cmd, drift.common);
  drift_cmd->add_option("--n", drift.n, "Number of requests");
  drift_cmd->add_option("--prompt-len", drift.prompt_len, "Prompt length distribution");
  drift_cmd->add_option("--output-len", drift.output_len, "Output length distribution");
  drift_cmd->add_option("--qps", drift.qps, "Arrival rate");
  drift_cmd->add_option("--seed", drift.seed, "Workload and arrival seed");
  drift_cmd->add_option("--out", drift.out_path, "CSV output path (default stdout)");

  SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand("ablation-sweep", "Offline runs over window and group sizes");
  add_common(sweep_cmd, sweep.common);
  sweep_cmd->add_option("--workload", sweep.workload_path, "Workload JSON-lines file")->required();
  sweep_cmd->add_option("--windows", sweep.windows, "Comma-separated window sizes");
  sweep_cmd->add_option("--groups", sweep.groups, "Comma-separated group sizes");
  sweep_cmd->add_option("--out", sweep.out_path, "CSV output path (default stdout)");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("kernel-bench", "Kernel invariance checks and split witness search");
  bench_cmd->add_option("--mantissa", bench.mantissa, "Mantissa bits");
  bench_cmd->add_option("--seed", bench.seed, "Seed for check inputs");
  bench_cmd->add_option("--k", bench.k, "Dot product length for the witness search");
  bench_cmd->add_option("--max-seeds", bench.max_seeds, "Witness search limit");
  bench_cmd->add_option("--out", bench.out_path, "CSV output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen(gen);
    if (*offline_cmd) return cmd_run(offline, false);
    if (*online_cmd) return cmd_run(online, true);
    if (*verify_cmd) return cmd_verify(verify);
    if (*drift_cmd) return cmd_drift(drift);
    if (*sweep_cmd) return cmd_sweep(sweep);
    if (*bench_cmd) return cmd_bench(bench);
  } catch (const EngineFault& e) {
    std::cerr << "engine fault: " << e.what() << '\n';
    return kExitFault;
  } catch (const NumericError& e) {
    std::cerr << "engine fault: " << e.what() << '\n';
    return kExitFault;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
