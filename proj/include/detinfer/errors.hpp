// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace detinfer {

// Invalid configuration: bad policy thresholds, mantissa width out of range,
// split factor larger than the reduction, malformed config files.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Operand shapes do not agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A kernel or sampler produced or received a non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Request rejected at submission (empty prompt, duplicate id, too long).
class RequestError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Internal scheduler invariant broken, or a numeric fault inside a pass.
class EngineFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace detinfer
