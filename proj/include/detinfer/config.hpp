// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "detinfer/engine.hpp"
#include "detinfer/harness.hpp"
#include "detinfer/model.hpp"

namespace detinfer {

/// Everything a run needs besides the workload, read from one flat JSON
/// object. Keys (all optional):
///   model:  vocab_size hidden_dim n_layers n_heads ffn_dim max_seq_len
///           mantissa_bits model_seed
///   engine: window_size group_size max_batch staleness_bound
///           verification_enabled eos_token
///   plans:  fast_path_mode ("shape_adaptive" | "pinned") fast_path_split
///           fast_path_split_thresholds ([[max_rows, split], ...])
///           fast_path_split_above verifier_split
///   cost:   cost_fixed_ticks cost_per_token_ticks
/// mantissa_bits applies to the model and to both schedule policies.
struct AppConfig {
  ModelConfig model;
  EngineConfig engine;
  CostModel cost;

  void validate() const;
};

/// Throws ConfigError on unknown keys, wrong types or invalid values.
AppConfig config_from_json(const nlohmann::json& j);
/// Applies `overrides` (same schema) on top of `base`.
AppConfig apply_overrides(AppConfig base, const nlohmann::json& overrides);
AppConfig load_config(const std::filesystem::path& path);

/// Every key with its effective value, in a fixed order.
nlohmann::ordered_json config_to_json(const AppConfig& config);

}  // namespace detinfer
