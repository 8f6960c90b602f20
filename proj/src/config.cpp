// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

#include "detinfer/config.hpp"

#include <fstream>
#include <functional>
#include <map>

#include "detinfer/errors.hpp"

namespace detinfer {

namespace {

using kernels::ScheduleMode;
using kernels::SplitRule;
using Setter = std::function<void(AppConfig&, const nlohmann::json&)>;

template <typename T>
T as(const nlohmann::json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) {
        throw ConfigError(key + " must be true or false");
      }
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
        throw ConfigError(key + " must be a non-negative integer");
      }
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) {
        throw ConfigError(key + " must be an integer");
      }
    }
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(key + " has the wrong type");
  }
}

ScheduleMode parse_mode(const nlohmann::json& v) {
  const auto s = as<std::string>(v, "fast_path_mode");
  if (s == "shape_adaptive") {
    return ScheduleMode::shape_adaptive;
  }
  if (s == "pinned") {
    return ScheduleMode::pinned;
  }
  throw ConfigError("fast_path_mode must be \"shape_adaptive\" or \"pinned\"");
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"vocab_size", [](AppConfig& c, const nlohmann::json& v) { c.model.vocab_size = as<std::size_t>(v, "vocab_size"); }},
      {"hidden_dim", [](AppConfig& c, const nlohmann::json& v) { c.model.hidden_dim = as<std::size_t>(v, "hidden_dim"); }},
      {"n_layers", [](AppConfig& c, const nlohmann::json& v) { c.model.n_layers = as<std::size_t>(v, "n_layers"); }},
      {"n_heads", [](AppConfig& c, const nlohmann::json& v) { c.model.n_heads = as<std::size_t>(v, "n_heads"); }},
      {"ffn_dim", [](AppConfig& c, const nlohmann::json& v) { c.model.ffn_dim = as<std::size_t>(v, "ffn_dim"); }},
      {"max_seq_len", [](AppConfig& c, const nlohmann::json& v) { c.model.max_seq_len = as<std::size_t>(v, "max_seq_len"); }},
      {"mantissa_bits",
       [](AppConfig& c, const nlohmann::json& v) {
         const int bits = as<int>(v, "mantissa_bits");
         c.model.mantissa_bits = bits;
         c.engine.fast_path.mantissa_bits = bits;
         c.engine.verifier.mantissa_bits = bits;
       }},
      {"model_seed", [](AppConfig& c, const nlohmann::json& v) { c.model.seed = as<std::uint64_t>(v, "model_seed"); }},
      {"window_size", [](AppConfig& c, const nlohmann::json& v) { c.engine.window_size = as<std::size_t>(v, "window_size"); }},
      {"group_size", [](AppConfig& c, const nlohmann::json& v) { c.engine.group_size = as<std::size_t>(v, "group_size"); }},
      {"max_batch", [](AppConfig& c, const nlohmann::json& v) { c.engine.max_batch = as<std::size_t>(v, "max_batch"); }},
      {"staleness_bound",
       [](AppConfig& c, const nlohmann::json& v) { c.engine.staleness_bound = as<std::size_t>(v, "staleness_bound"); }},
      {"verification_enabled",
       [](AppConfig& c, const nlohmann::json& v) { c.engine.verification_enabled = as<bool>(v, "verification_enabled"); }},
      {"eos_token", [](AppConfig& c, const nlohmann::json& v) { c.engine.eos_token = as<TokenId>(v, "eos_token"); }},
      {"fast_path_mode", [](AppConfig& c, const nlohmann::json& v) { c.engine.fast_path.mode = parse_mode(v); }},
      {"fast_path_split",
       [](AppConfig& c, const nlohmann::json& v) { c.engine.fast_path.pinned_split = as<std::size_t>(v, "fast_path_split"); }},
      {"fast_path_split_thresholds",
       [](AppConfig& c, const nlohmann::json& v) {
         if (!v.is_array()) {
           throw ConfigError("fast_path_split_thresholds must be an array of [max_rows, split]");
         }
         std::vector<SplitRule> rules;
         for (const auto& rule : v) {
           if (!rule.is_array() || rule.size() != 2) {
             throw ConfigError("fast_path_split_thresholds entries must be [max_rows, split]");
           }
           rules.push_back({as<std::size_t>(rule[0], "max_rows"), as<std::size_t>(rule[1], "split")});
         }
         c.engine.fast_path.split_thresholds = std::move(rules);
       }},
      {"fast_path_split_above",
       [](AppConfig& c, const nlohmann::json& v) { c.engine.fast_path.split_above = as<std::size_t>(v, "fast_path_split_above"); }},
      {"verifier_split",
       [](AppConfig& c, const nlohmann::json& v) { c.engine.verifier.pinned_split = as<std::size_t>(v, "verifier_split"); }},
      {"cost_fixed_ticks",
       [](AppConfig& c, const nlohmann::json& v) { c.cost.fixed_ticks = as<std::int64_t>(v, "cost_fixed_ticks"); }},
      {"cost_per_token_ticks",
       [](AppConfig& c, const nlohmann::json& v) { c.cost.per_token_ticks = as<std::int64_t>(v, "cost_per_token_ticks"); }},
  };
  return table;
}

}  // namespace

void AppConfig::validate() const {
  model.validate();
  engine.validate();
  cost.validate();
  if (engine.window_size >= model.max_seq_len) {
    throw ConfigError("window_size must be smaller than max_seq_len");
  }
}

AppConfig apply_overrides(AppConfig base, const nlohmann::json& overrides) {
  if (!overrides.is_object()) {
    throw ConfigError("config must be a JSON object");
  }
  for (const auto& [key, value] : overrides.items()) {
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw ConfigError("unknown config key '" + key + "'");
    }
    it->second(base, value);
  }
  base.validate();
  return base;
}

AppConfig config_from_json(const nlohmann::json& j) { return apply_overrides(AppConfig{}, j); }

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file " + path.string());
  }
  try {
    return config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
}

nlohmann::ordered_json config_to_json(const AppConfig& c) {
  nlohmann::ordered_json j;
  j["vocab_size"] = c.model.vocab_size;
  j["hidden_dim"] = c.model.hidden_dim;
  j["n_layers"] = c.model.n_layers;
  j["n_heads"] = c.model.n_heads;
  j["ffn_dim"] = c.model.ffn_dim;
  j["max_seq_len"] = c.model.max_seq_len;
  j["mantissa_bits"] = c.model.mantissa_bits;
  j["model_seed"] = c.model.seed;
  j["window_size"] = c.engine.window_size;
  j["group_size"] = c.engine.group_size;
  j["max_batch"] = c.engine.max_batch;
  j["staleness_bound"] = c.engine.staleness_bound;
  j["verification_enabled"] = c.engine.verification_enabled;
  j["eos_token"] = c.engine.eos_token;
  j["fast_path_mode"] =
      c.engine.fast_path.mode == ScheduleMode::pinned ? "pinned" : "shape_adaptive";
  j["fast_path_split"] = c.engine.fast_path.pinned_split;
  auto rules = nlohmann::ordered_json::array();
  for (const auto& r : c.engine.fast_path.split_thresholds) {
    rules.push_back({r.max_rows, r.split});
  }
  j["fast_path_split_thresholds"] = rules;
  j["fast_path_split_above"] = c.engine.fast_path.split_above;
  j["verifier_split"] = c.engine.verifier.pinned_split;
  j["cost_fixed_ticks"] = c.cost.fixed_ticks;
  j["cost_per_token_ticks"] = c.cost.per_token_ticks;
  return j;
}

}  // namespace detinfer
