// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

#include "detinfer/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "detinfer/errors.hpp"

namespace detinfer {

LengthDist LengthDist::lognormal(double mean, double median, std::size_t min, std::size_t max) {
  return {Kind::lognormal, mean, median, min, max};
}

void LengthDist::validate() const {
  if (min < 1 || min > max) {
    throw ConfigError("length distribution needs 1 <= min <= max");
  }
  switch (kind) {
    case Kind::fixed:
      break;
    case Kind::uniform:
      if (a > b) {
        throw ConfigError("uniform length distribution needs low <= high");
      }
      break;
    case Kind::lognormal:
      if (!(b > 0.0) || a < b) {
        throw ConfigError("lognormal length distribution needs mean >= median > 0");
      }
      break;
  }
}

std::size_t LengthDist::sample(Rng& rng) const {
  double x = a;
  switch (kind) {
    case Kind::fixed:
      break;
    case Kind::uniform:
      x = a + static_cast<double>(rng.below(static_cast<std::uint64_t>(b - a) + 1));
      break;
    case Kind::lognormal: {
      const double sigma = std::sqrt(2.0 * std::log(a / b));
      x = std::exp(std::log(b) + sigma * rng.normal());
      break;
    }
  }
  const auto n = static_cast<std::size_t>(std::llround(std::max(x, 0.0)));
  return std::clamp(n, min, max);
}

std::vector<TokenId> synthetic_prompt(std::size_t len, std::uint64_t seed, RequestId id,
                                      std::size_t vocab_size) {
  Rng rng(hash_combine(seed, id));
  std::vector<TokenId> tokens(len);
  for (auto& t : tokens) {
    t = static_cast<TokenId>(1 + rng.below(vocab_size - 1));
  }
  return tokens;
}

void assign_det_flags(Workload& workload, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) {
    throw ConfigError("det_ratio must be in [0, 1]");
  }
  const std::size_t n = workload.requests.size();
  const auto n_det = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio + 1e-9));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(hash_combine(seed, 0xde7e4417ULL));
  rng.shuffle(std::span<std::size_t>(order));
  for (auto& r : workload.requests) {
    r.is_deterministic = false;
  }
  for (std::size_t i = 0; i < n_det; ++i) {
    workload.requests[order[i]].is_deterministic = true;
  }
}

Workload gen_synthetic(const SyntheticSpec& spec) {
  spec.prompt_len.validate();
  spec.output_len.validate();
  if (!(spec.seeded_ratio >= 0.0 && spec.seeded_ratio <= 1.0)) {
    throw ConfigError("seeded_ratio must be in [0, 1]");
  }
  if (spec.vocab_size < 2) {
    throw ConfigError("vocab_size must be >= 2");
  }
  Workload w;
  Rng rng(spec.seed);
  for (std::size_t i = 0; i < spec.n; ++i) {
    Request r;
    r.id = spec.first_id + i;
    r.prompt = synthetic_prompt(spec.prompt_len.sample(rng), spec.seed, r.id, spec.vocab_size);
    r.max_new_tokens = spec.output_len.sample(rng);
    if (rng.uniform() < spec.seeded_ratio) {
      r.sampler = SamplerSpec::seeded(hash_combine(spec.seed, r.id ^ 0x5eedULL));
    }
    w.requests.push_back(std::move(r));
  }
  assign_det_flags(w, spec.det_ratio, spec.seed);
  return w;
}

void apply_poisson_arrivals(Workload& workload, double qps, std::uint64_t seed) {
  if (!(qps > 0.0)) {
    throw ConfigError("qps must be positive");
  }
  Rng rng(hash_combine(seed, 0xa441a1ULL));
  double t = 0.0;
  for (auto& r : workload.requests) {
    r.arrival_tick = static_cast<std::int64_t>(std::llround(t));
    t += rng.exponential(qps) * 1e6;
  }
  workload.arrival = {ArrivalKind::poisson, qps, seed};
}

namespace {

Request parse_request(const nlohmann::json& j, std::size_t vocab_size) {
  static const char* const kKeys[] = {"id", "prompt_tokens", "prompt_len", "max_new_tokens",
                                      "is_deterministic", "sampler", "arrival_offset_ticks"};
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(std::begin(kKeys), std::end(kKeys), [&](const char* k) { return key == k; }) ==
        std::end(kKeys)) {
      throw ConfigError("unknown field '" + key + "'");
    }
  }
  Request r;
  r.id = j.at("id").get<RequestId>();
  if (j.contains("prompt_tokens")) {
    r.prompt = j.at("prompt_tokens").get<std::vector<TokenId>>();
  } else {
    r.prompt = synthetic_prompt(j.at("prompt_len").get<std::size_t>(), 0, r.id, vocab_size);
  }
  r.max_new_tokens = j.at("max_new_tokens").get<std::size_t>();
  r.is_deterministic = j.value("is_deterministic", false);
  r.arrival_tick = j.value("arrival_offset_ticks", std::int64_t{0});
  if (j.contains("sampler")) {
    const auto& s = j.at("sampler");
    const auto type = s.at("type").get<std::string>();
    if (type == "greedy") {
      r.sampler = SamplerSpec::greedy();
    } else if (type == "seeded") {
      r.sampler = SamplerSpec::seeded(s.at("seed").get<std::uint64_t>(), s.value("temperature", 1.0));
    } else {
      throw ConfigError("unknown sampler type '" + type + "'");
    }
  }
  return r;
}

}  // namespace

Workload read_workload(std::istream& in, std::size_t vocab_size) {
  Workload w;
  w.arrival.kind = ArrivalKind::explicit_offsets;
  std::string line;
  std::size_t line_no = 0;
  std::int64_t prev_arrival = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    try {
      Request r = parse_request(nlohmann::json::parse(line), vocab_size);
      if (r.arrival_tick < prev_arrival) {
        throw ConfigError("arrival_offset_ticks must be non-decreasing");
      }
      prev_arrival = r.arrival_tick;
      w.requests.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("workload line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("workload line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  const bool all_zero = std::all_of(w.requests.begin(), w.requests.end(),
                                    [](const Request& r) { return r.arrival_tick == 0; });
  if (all_zero) {
    w.arrival.kind = ArrivalKind::all_at_zero;
  }
  return w;
}

Workload load_workload(const std::filesystem::path& path, std::size_t vocab_size) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open workload file " + path.string());
  }
  return read_workload(in, vocab_size);
}

void write_workload(std::ostream& out, const Workload& workload) {
  for (const auto& r : workload.requests) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["prompt_tokens"] = r.prompt;
    j["max_new_tokens"] = r.max_new_tokens;
    j["is_deterministic"] = r.is_deterministic;
    nlohmann::ordered_json s;
    if (r.sampler.kind == SamplerSpec::Kind::greedy) {
      s["type"] = "greedy";
    } else {
      s["type"] = "seeded";
      s["seed"] = r.sampler.seed;
      s["temperature"] = r.sampler.temperature;
    }
    j["sampler"] = s;
    j["arrival_offset_ticks"] = r.arrival_tick;
    out << j.dump() << '\n';
  }
}

}  // namespace detinfer
