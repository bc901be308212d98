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

// The active learning round loop with a GP model update.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <set>
#include <vector>

#include "transduct/error.hpp"
#include "transduct/posterior.hpp"
#include "transduct/record.hpp"
#include "transduct/selection.hpp"

namespace transduct {

struct LoopSetup {
  /// Full target space A; a subsample of size policy.target_subsample is
  /// drawn from it each round.
  std::vector<Index> targets;
  /// Sample space S.
  std::vector<Index> sample;
  /// Candidates drawn from S each round; unset uses all of S.
  std::optional<std::size_t> candidate_count;
  /// Points of S that count toward retrieval.
  std::vector<Index> relevant;
  /// Ground truth over the domain, for RMSE over A.
  std::optional<Vector> truth;
  SelectionInputs inputs;
  bool record_wall_time = false;
};

/// Metrics of the current posterior over the full target space.
inline RoundEntry measure(const PosteriorState& state, const LoopSetup& setup) {
  RoundEntry e;
  e.round = state.round();
  double sum = 0.0, sq = 0.0;
  for (Index a : setup.targets) {
    const double v = marginal_variance(state, a);
    sum += v;
    e.max_variance = std::max(e.max_variance, v);
    if (setup.truth) {
      const double d = state.mean()(static_cast<Eigen::Index>(a)) - (*setup.truth)(static_cast<Eigen::Index>(a));
      sq += d * d;
    }
  }
  const double count = static_cast<double>(setup.targets.size());
  e.mean_variance = sum / count;
  if (setup.truth) e.rmse = std::sqrt(sq / count);
  return e;
}

/// Runs `rounds` rounds: draw k candidates from S, draw m targets from A,
/// select a batch, query the oracle for each pick, and condition.
inline RunRecord run_loop(PosteriorState state, const LoopSetup& setup, const Policy& policy, LabelOracle& oracle,
                          std::size_t rounds, nlohmann::json config = nlohmann::json::object()) {
  if (setup.targets.empty()) throw InputError("run_loop: empty target space");
  if (setup.sample.empty()) throw InputError("run_loop: empty sample space");
  policy.validate(setup.targets.size());
  if (setup.truth && static_cast<std::size_t>(setup.truth->size()) != state.size()) {
    throw InputError("run_loop: truth size does not match the domain");
  }
  for (Index s : setup.sample) state.check_index(s);
  for (Index a : setup.targets) state.check_index(a);

  const std::set<Index> relevant(setup.relevant.begin(), setup.relevant.end());
  std::set<Index> retrieved;
  Rng rng(policy.seed);

  RunRecord record;
  record.config = std::move(config);
  record.initial = measure(state, setup);

  for (std::size_t n = 1; n <= rounds; ++n) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<Index> candidates;
    if (setup.candidate_count && *setup.candidate_count < setup.sample.size()) {
      std::sample(setup.sample.begin(), setup.sample.end(), std::back_inserter(candidates), *setup.candidate_count,
                  rng);
    } else {
      candidates = setup.sample;
    }
    std::vector<Index> targets;
    if (policy.target_subsample && *policy.target_subsample < setup.targets.size()) {
      targets = subsample_targets(setup.targets, *policy.target_subsample, rng);
    } else {
      targets = setup.targets;
    }

    Policy round_policy = policy;
    if (!policy.multiset) round_policy.batch_size = std::min(policy.batch_size, candidates.size());
    const BatchResult batch = select_batch(state, targets, candidates, round_policy, setup.inputs, rng);

    RoundEntry entry;
    for (Index x : batch.indices) {
      state.observe(x, oracle.label(x));
      const bool hit = relevant.count(x) > 0;
      entry.relevant.push_back(hit);
      if (hit) retrieved.insert(x);
    }
    const RoundEntry metrics = measure(state, setup);
    entry.round = n;
    entry.chosen = batch.indices;
    entry.objectives = batch.objectives;
    entry.mean_variance = metrics.mean_variance;
    entry.max_variance = metrics.max_variance;
    entry.rmse = metrics.rmse;
    entry.retrieved = retrieved.size();
    if (setup.record_wall_time) {
      entry.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    record.rounds.push_back(std::move(entry));
  }
  return record;
}

}  // namespace transduct
