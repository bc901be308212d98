// Copyright 2026 The transduct Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Run records and the label oracle interface shared by the round loop and
// the persistence layer.

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "transduct/linalg.hpp"

namespace transduct {

inline constexpr const char* kRecordVersion = "v1";

/// Metrics after one round. Round 0 is the prior.
struct RoundEntry {
  std::size_t round = 0;
  std::vector<Index> chosen;
  std::vector<double> objectives;
  /// Whether each chosen index lies in the relevant subset of S.
  std::vector<bool> relevant;
  /// Mean and max of sigma_n^2 over the full target space.
  double mean_variance = 0.0;
  double max_variance = 0.0;
  /// Distinct relevant points selected so far.
  std::size_t retrieved = 0;
  std::optional<double> rmse;
  std::optional<double> wall_time;

  bool operator==(const RoundEntry&) const = default;
};

struct RunRecord {
  std::string version = kRecordVersion;
  nlohmann::json config = nlohmann::json::object();
  RoundEntry initial;
  std::vector<RoundEntry> rounds;

  bool operator==(const RunRecord&) const = default;
};

/// Source of noisy labels for selected indices.
class LabelOracle {
 public:
  virtual ~LabelOracle() = default;
  virtual double label(Index index) = 0;
};

}  // namespace transduct
