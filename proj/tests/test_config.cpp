// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "detinfer/config.hpp"
#include "detinfer/errors.hpp"

namespace {

using namespace detinfer;

TEST(Config, EmptyObjectGivesDefaults) {
  const AppConfig c = config_from_json(nlohmann::json::object());
  EXPECT_EQ(c.engine.window_size, 32u);
  EXPECT_EQ(c.engine.group_size, 8u);
  EXPECT_EQ(c.model.mantissa_bits, 10);
  EXPECT_EQ(c.cost.fixed_ticks, 5000);
  EXPECT_EQ(c.engine.verifier, SchedulePolicy::pinned());
}

TEST(Config, MantissaAppliesEverywhere) {
  const AppConfig c = config_from_json({{"mantissa_bits", 7}});
  EXPECT_EQ(c.model.mantissa_bits, 7);
  EXPECT_EQ(c.engine.fast_path.mantissa_bits, 7);
  EXPECT_EQ(c.engine.verifier.mantissa_bits, 7);
}

TEST(Config, ParsesPlanSettings) {
  const AppConfig c = config_from_json({{"fast_path_mode", "pinned"},
                                        {"fast_path_split", 2},
                                        {"fast_path_split_thresholds", {{2, 1}, {8, 4}}},
                                        {"fast_path_split_above", 16}});
  EXPECT_EQ(c.engine.fast_path.mode, kernels::ScheduleMode::pinned);
  EXPECT_EQ(c.engine.fast_path.pinned_split, 2u);
  ASSERT_EQ(c.engine.fast_path.split_thresholds.size(), 2u);
  EXPECT_EQ(c.engine.fast_path.split_thresholds[1].split, 4u);
  EXPECT_EQ(c.engine.fast_path.split_above, 16u);
}

TEST(Config, RejectsUnknownKeysTypesAndValues) {
  EXPECT_THROW(config_from_json({{"windowsize", 3}}), ConfigError);
  EXPECT_THROW(config_from_json({{"window_size", "big"}}), ConfigError);
  EXPECT_THROW(config_from_json({{"window_size", -4}}), ConfigError);
  EXPECT_THROW(config_from_json({{"window_size", 1}}), ConfigError);
  EXPECT_THROW(config_from_json({{"fast_path_mode", "fast"}}), ConfigError);
  EXPECT_THROW(config_from_json({{"mantissa_bits", 60}}), ConfigError);
  EXPECT_THROW(config_from_json({{"cost_fixed_ticks", -1}}), ConfigError);
  EXPECT_THROW(config_from_json({{"window_size", 1024}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::array()), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, EchoRoundTrips) {
  const AppConfig c = config_from_json({{"window_size", 16}, {"group_size", 4}, {"eos_token", 3},
                                        {"verification_enabled", false}, {"cost_per_token_ticks", 20}});
  const auto echo = config_to_json(c);
  EXPECT_EQ(config_to_json(config_from_json(nlohmann::json::parse(echo.dump()))), echo);
  EXPECT_EQ(echo["window_size"], 16);
  EXPECT_EQ(echo["verification_enabled"], false);
}

TEST(Config, OverridesApplyOnTop) {
  const AppConfig base = config_from_json({{"window_size", 16}});
  const AppConfig c = apply_overrides(base, {{"group_size", 2}});
  EXPECT_EQ(c.engine.window_size, 16u);
  EXPECT_EQ(c.engine.group_size, 2u);
}

}  // namespace
