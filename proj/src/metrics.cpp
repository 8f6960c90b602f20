// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

#include "detinfer/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace detinfer {

namespace {

double nearest_rank(const std::vector<double>& sorted, double p) {
  const auto n = static_cast<double>(sorted.size());
  const auto rank = static_cast<std::size_t>(std::max(1.0, std::ceil(p * n - 1e-9)));
  return sorted[std::min(rank, sorted.size()) - 1];
}

}  // namespace

Percentiles percentiles(std::vector<double> samples) {
  if (samples.empty()) {
    return {};
  }
  std::sort(samples.begin(), samples.end());
  return {nearest_rank(samples, 0.50), nearest_rank(samples, 0.75), nearest_rank(samples, 0.90),
          nearest_rank(samples, 0.99)};
}

}  // namespace detinfer
