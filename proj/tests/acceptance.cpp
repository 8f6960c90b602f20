// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails.

#include <algorithm>
#include <cstdio>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cli_runner.hpp"
#include "detinfer/harness.hpp"
#include "detinfer/invariance.hpp"
#include "detinfer/oracle.hpp"

namespace {

using namespace detinfer;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::shared_ptr<const Model> default_model() {
  static const auto m = std::make_shared<const Model>(init_model(ModelConfig{}));
  return m;
}

double median(std::vector<double> v) { return percentiles(std::move(v)).p50; }

std::string fmt(const char* format, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c);
  return buf;
}

// 1. verify-determinism over 64 deterministic requests, 10 runs.
Verdict determinism_guarantee() {
  const auto dir = cli::fresh_dir("acceptance_determinism");
  auto r = cli::run(dir, "gen-workload --n 64 --det-ratio 1 --prompt-len uniform:4:24 "
                         "--output-len uniform:16:48 --seed 7 --out det.jsonl");
  if (r.exit_code != 0) {
    return {false, "gen-workload failed: " + r.err};
  }
  r = cli::run(dir, "verify-determinism --workload det.jsonl --runs 10 --co-traffic 32 --qps 200 "
                    "--set mantissa_bits=10");
  std::string line = r.out.substr(0, r.out.find('\n'));
  return {r.exit_code == 0, line + " (exit " + std::to_string(r.exit_code) + ")"};
}

std::vector<DriftRecord> drift_records() {
  static const auto records = [] {
    DriftSpec spec;
    spec.n = 64;
    spec.prompt_len = LengthDist::uniform(8, 32);
    spec.output_len = LengthDist::fixed(64);
    spec.qps = 50;
    spec.seed = 1;  // frozen
    return drift_experiment(default_model(), EngineConfig{}, CostModel{}, spec);
  }();
  return records;
}

// 2. Verification off at mantissa 10: some request leaves its batch-1 path.
Verdict negative_control() {
  const auto records = drift_records();
  const auto diverged = std::count_if(records.begin(), records.end(),
                                      [](const DriftRecord& r) { return r.spans.first_span < 64; });
  return {diverged >= 1, std::to_string(diverged) + " of 64 requests diverged from batch-1 references"};
}

// 3. Second consistent span near zero.
Verdict drift_trend() {
  std::vector<double> first;
  std::vector<double> second;
  for (const auto& r : drift_records()) {
    first.push_back(static_cast<double>(r.spans.first_span));
    second.push_back(static_cast<double>(r.spans.second_span));
  }
  const double f = median(first);
  const double s = median(second);
  return {s < 0.1 * f, fmt("median first_span %.0f, median second_span %.0f", f, s)};
}

// 4. Every candidate wrong, 64 tokens, 64 verification commits.
Verdict forward_progress() {
  EngineConfig config;
  Request r;
  r.id = 1;
  r.prompt = synthetic_prompt(12, 4, 1, 256);
  r.max_new_tokens = 64;
  r.is_deterministic = true;
  const auto canonical = canonical_sequence(r, *default_model(), config);
  Engine engine(default_model(), config);
  engine.set_decode_override(
      [&](RequestId, std::size_t i, TokenId) { return static_cast<TokenId>((canonical[i] + 1) % 256); });
  engine.submit(r);
  std::size_t commits = 0;
  while (!engine.done()) {
    for (const auto& e : engine.step().events) {
      commits += e.action == Action::verify && !e.tokens_released.empty();
    }
  }
  const bool ok = commits == 64 && engine.released(r.id) == canonical;
  return {ok, std::to_string(commits) + " verification commits, output " +
                  (engine.released(r.id) == canonical ? "equals" : "differs from") + " canonical"};
}

// 5. Commit-W and commit-matched-plus-one accounting.
Verdict commit_accounting() {
  Request r;
  r.id = 2;
  r.prompt = synthetic_prompt(9, 4, 2, 256);
  r.max_new_tokens = 8;
  r.is_deterministic = true;

  const auto first_verify = [&](std::size_t window, std::function<TokenId(std::size_t, TokenId)> fn) {
    EngineConfig config;
    config.window_size = window;
    Engine engine(default_model(), config);
    engine.set_decode_override([&](RequestId, std::size_t i, TokenId t) { return fn(i, t); });
    engine.submit(r);
    while (true) {
      for (const auto& e : engine.step().events) {
        if (e.action == Action::verify) {
          return std::make_pair(e, engine.metrics());
        }
      }
    }
  };
  EngineConfig c4;
  c4.window_size = 4;
  const auto canonical = canonical_sequence(r, *default_model(), c4);

  const auto [all, m_all] = first_verify(4, [&](std::size_t i, TokenId) { return canonical[i]; });
  const bool a_ok = all.tokens_released == std::vector<TokenId>(canonical.begin(), canonical.begin() + 4) &&
                    all.matched_prefix == 3 && all.discarded == 0 && m_all.rollback_count == 0;

  const auto [bad, m_bad] = first_verify(5, [&](std::size_t i, TokenId) {
    return i == 2 ? static_cast<TokenId>((canonical[i] + 1) % 256) : canonical[i];
  });
  const bool b_ok = bad.tokens_released == std::vector<TokenId>(canonical.begin(), canonical.begin() + 3) &&
                    bad.matched_prefix == 2 && bad.discarded == 2 && m_bad.rollback_count == 1 &&
                    m_bad.recomputed_tokens == 2;
  return {a_ok && b_ok, std::string("all-match commits ") + std::to_string(all.tokens_released.size()) +
                            "; mismatch commits " + std::to_string(bad.tokens_released.size()) +
                            ", rollbacks " + std::to_string(m_bad.rollback_count) + ", recomputed " +
                            std::to_string(m_bad.recomputed_tokens)};
}

const std::vector<SweepCell>& sweep_cells() {
  static const auto cells = [] {
    SyntheticSpec spec;
    spec.n = 32;
    spec.prompt_len = LengthDist::uniform(4, 24);
    spec.output_len = LengthDist::fixed(128);
    spec.det_ratio = 1.0;
    spec.seed = 11;  // frozen
    const std::vector<std::size_t> windows = {16, 32, 64, 128, 256};
    const std::vector<std::size_t> groups = {1, 8};
    return ablation_sweep(default_model(), EngineConfig{}, CostModel{}, windows, groups, gen_synthetic(spec));
  }();
  return cells;
}

const SweepCell& cell(std::size_t w, std::size_t g) {
  for (const auto& c : sweep_cells()) {
    if (c.window_size == w && c.group_size == g) {
      return c;
    }
  }
  throw std::logic_error("missing sweep cell");
}

// 6. Recompute fraction non-decreasing in W.
Verdict recompute_trend() {
  bool ok = true;
  std::string detail;
  for (std::size_t g : {1u, 8u}) {
    double prev = -1;
    detail += "G=" + std::to_string(g) + ":";
    for (std::size_t w : {16u, 32u, 64u, 128u}) {
      const double f = cell(w, g).metrics.recomputed_fraction();
      ok = ok && f >= prev;
      prev = f;
      detail += fmt(" %.4f", f);
    }
    detail += g == 1 ? "; " : "";
  }
  const bool match = std::all_of(sweep_cells().begin(), sweep_cells().end(),
                                 [](const SweepCell& c) { return c.outputs_match; });
  return {ok && match, detail + (match ? "; outputs identical across cells" : "; OUTPUTS DIFFER")};
}

// 7. Small windows grouped beat one large window.
Verdict grouped_benefit() {
  const auto& small = cell(32, 8);
  const auto& large = cell(256, 1);
  const auto& single = cell(32, 1);
  const bool ok = small.metrics.recomputed_fraction() <= large.metrics.recomputed_fraction() &&
                  small.metrics.verification_passes < single.metrics.verification_passes;
  return {ok, fmt("recompute (32,8) %.4f vs (256,1) %.4f", small.metrics.recomputed_fraction(),
                  large.metrics.recomputed_fraction()) +
                  "; passes (32,8) " + std::to_string(small.metrics.verification_passes) + " vs (32,1) " +
                  std::to_string(single.metrics.verification_passes)};
}

// 8. Cost scales with the deterministic fraction.
Verdict selective_determinism() {
  SyntheticSpec spec;
  spec.n = 128;
  spec.prompt_len = LengthDist::uniform(4, 24);
  spec.output_len = LengthDist::uniform(16, 64);
  spec.seed = 5;  // frozen
  const Workload base = gen_synthetic(spec);
  const std::vector<double> ratios = {0.0, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0};
  std::vector<std::int64_t> ticks;
  std::uint64_t passes_at_zero = 0;
  for (double ratio : ratios) {
    Workload w = base;
    assign_det_flags(w, ratio, spec.seed);
    RunOptions options;
    options.record_events = false;
    const RunResult run = run_offline(default_model(), EngineConfig{}, w, CostModel{}, options);
    ticks.push_back(run.metrics.total_ticks);
    if (ratio == 0.0) {
      passes_at_zero = run.metrics.verification_passes;
    }
  }
  const double overhead = static_cast<double>(ticks[3]) / static_cast<double>(ticks[0]) - 1.0;
  const bool monotone = std::is_sorted(ticks.begin(), ticks.end());
  const bool ok = passes_at_zero == 0 && overhead <= 0.10 && monotone;
  return {ok, "verification passes at 0: " + std::to_string(passes_at_zero) +
                  fmt("; overhead at 0.1: %.2f%%", overhead * 100) +
                  fmt("; at 1.0: %.2f%%", (static_cast<double>(ticks.back()) / static_cast<double>(ticks[0]) - 1) * 100) +
                  (monotone ? "; monotone" : "; NOT monotone")};
}

// 9. Kernel invariance and a frozen split witness.
Verdict kernel_invariance() {
  std::size_t failed = 0;
  std::size_t total = 0;
  for (int bits : {8, 10}) {
    for (const auto& r : invariance::run_suite(bits, 1)) {
      ++total;
      failed += !r.passed;
    }
  }
  constexpr std::uint64_t kWitnessSeed = 1;  // frozen
  const bool witness = invariance::seeded_dot(64, kWitnessSeed, 1, 10) != invariance::seeded_dot(64, kWitnessSeed, 2, 10);
  return {failed == 0 && witness, std::to_string(total - failed) + "/" + std::to_string(total) +
                                      " invariance checks pass; split witness seed " +
                                      std::to_string(kWitnessSeed) + (witness ? " holds" : " LOST") +
                                      " at mantissa 10"};
}

// 10. Every command twice, byte-identical reports.
Verdict reproducibility() {
  const auto dir = cli::fresh_dir("acceptance_repro");
  const std::vector<std::pair<std::string, std::vector<std::string>>> commands = {
      {"gen-workload --n 24 --det-ratio 0.25 --seeded-ratio 0.5 --output-len uniform:4:24 --qps 30 --out w{}.jsonl",
       {"w{}.jsonl"}},
      {"run-offline --workload w1.jsonl --out off{}.json --events off{}.jsonl", {"off{}.json", "off{}.jsonl"}},
      {"run-online --workload w1.jsonl --qps 20 --out on{}.json --events on{}.jsonl", {"on{}.json", "on{}.jsonl"}},
      {"verify-determinism --workload w1.jsonl --runs 2 --co-traffic 8", {}},
      {"drift-experiment --n 8 --output-len fixed:16 --out drift{}.csv", {"drift{}.csv"}},
      {"ablation-sweep --workload w1.jsonl --windows 8,16 --groups 1,4 --out sweep{}.csv", {"sweep{}.csv"}},
      {"kernel-bench --mantissa 10 --out bench{}.csv", {"bench{}.csv"}},
  };
  const auto subst = [](std::string s, int i) {
    for (auto pos = s.find("{}"); pos != std::string::npos; pos = s.find("{}")) {
      s.replace(pos, 2, std::to_string(i));
    }
    return s;
  };
  std::size_t identical = 0;
  std::string bad;
  for (const auto& [cmd, files] : commands) {
    cli::Result runs[2];
    for (int i = 1; i <= 2; ++i) {
      runs[i - 1] = cli::run(dir, subst(cmd, i));
    }
    bool same = runs[0].exit_code == 0 && runs[0].exit_code == runs[1].exit_code && runs[0].out == runs[1].out;
    for (const auto& f : files) {
      const auto a = cli::slurp(dir / subst(f, 1));
      same = same && !a.empty() && a == cli::slurp(dir / subst(f, 2));
    }
    identical += same;
    if (!same) {
      bad += " " + cmd.substr(0, cmd.find(' '));
    }
  }
  return {identical == commands.size(),
          std::to_string(identical) + "/" + std::to_string(commands.size()) + " commands byte-identical" +
              (bad.empty() ? "" : "; differing:" + bad)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, Verdict (*)()>> criteria = {
      {"determinism guarantee", determinism_guarantee},
      {"negative control", negative_control},
      {"second consistent span near zero", drift_trend},
      {"forward progress", forward_progress},
      {"commit accounting", commit_accounting},
      {"recompute fraction grows with window", recompute_trend},
      {"grouped verification benefit", grouped_benefit},
      {"selective determinism", selective_determinism},
      {"kernel invariance", kernel_invariance},
      {"CLI reproducibility", reproducibility},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("%s [%zu] %s: %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
