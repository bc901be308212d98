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

// Decision rules and batch construction.
//
// Every rule maps a candidate x in the sample space S to a score where larger
// is better; rules that minimize a quantity are negated. Batches are built
// either by re-scoring after conditioning on each pick (BaCE) or by taking
// the b best scores of a single pass (TopB). Ties go to the lowest domain
// index everywhere.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "transduct/error.hpp"
#include "transduct/kernel.hpp"
#include "transduct/linalg.hpp"
#include "transduct/posterior.hpp"

namespace transduct {

using Rng = std::mt19937_64;

enum class Rule {
  ITL,
  CTL,
  UncertaintySampling,
  UndirectedITL,
  MaxDist,
  KMeansPP,
  CosineSimilarity,
  InformationDensity,
  MaxEntropy,
  MaxMargin,
  LeastConfidence,
  Random,
};

enum class BatchMode { BaCE, TopB };

inline const std::vector<std::pair<Rule, std::string>>& rule_names() {
  static const std::vector<std::pair<Rule, std::string>> names = {
      {Rule::ITL, "ITL"},
      {Rule::CTL, "CTL"},
      {Rule::UncertaintySampling, "UncertaintySampling"},
      {Rule::UndirectedITL, "UndirectedITL"},
      {Rule::MaxDist, "MaxDist"},
      {Rule::KMeansPP, "KMeansPP"},
      {Rule::CosineSimilarity, "CosineSimilarity"},
      {Rule::InformationDensity, "InformationDensity"},
      {Rule::MaxEntropy, "MaxEntropy"},
      {Rule::MaxMargin, "MaxMargin"},
      {Rule::LeastConfidence, "LeastConfidence"},
      {Rule::Random, "Random"},
  };
  return names;
}

inline std::string rule_name(Rule rule) {
  for (const auto& [r, name] : rule_names()) {
    if (r == rule) return name;
  }
  return "unknown";
}

inline Rule parse_rule(const std::string& text) {
  for (const auto& [r, name] : rule_names()) {
    if (name == text) return r;
  }
  throw InputError("unknown decision rule '" + text + "'");
}

inline std::string batch_mode_name(BatchMode mode) { return mode == BatchMode::BaCE ? "bace" : "topb"; }

inline BatchMode parse_batch_mode(const std::string& text) {
  if (text == "bace" || text == "BaCE") return BatchMode::BaCE;
  if (text == "topb" || text == "TopB") return BatchMode::TopB;
  throw InputError("unknown batch mode '" + text + "'");
}

inline bool needs_softmax(Rule rule) {
  return rule == Rule::MaxEntropy || rule == Rule::MaxMargin || rule == Rule::LeastConfidence ||
         rule == Rule::InformationDensity;
}

struct Policy {
  Rule rule = Rule::ITL;
  std::size_t batch_size = 1;
  BatchMode batch_mode = BatchMode::BaCE;
  /// Number of targets drawn from A each round; unset uses all of A.
  std::optional<std::size_t> target_subsample;
  std::uint64_t seed = 0;
  /// Noise variance used by the BaCE update and the scores; unset uses the
  /// posterior's noise model.
  std::optional<double> noise_var;
  /// Score I(y_A; y_x) instead of I(f_A; y_x), i.e. add rho^2 to the target
  /// block before inversion. Turn off for the exact objective.
  bool stabilize = true;
  /// Allow the same index more than once within a batch.
  bool multiset = false;
  /// Exponent on the cosine term of InformationDensity.
  double density_beta = 1.0;

  void validate(std::optional<std::size_t> target_count = std::nullopt) const {
    if (batch_size == 0) throw InputError("policy batch size must be at least 1");
    if (!(density_beta > 0.0)) throw InputError("InformationDensity beta must be positive");
    if (noise_var && !(*noise_var > 0.0)) throw InputError("policy noise variance must be positive");
    if (target_subsample) {
      if (*target_subsample == 0) throw InputError("target subsample size must be at least 1");
      if (target_count && *target_subsample > *target_count) {
        throw InputError("target subsample size exceeds the target set");
      }
    }
  }
};

/// Per-candidate class probabilities, rows keyed by domain index.
struct SoftmaxTable {
  std::vector<Index> ids;
  Matrix probs;

  void validate() const {
    if (static_cast<Eigen::Index>(ids.size()) != probs.rows()) throw InputError("softmax table ids/rows mismatch");
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      if (!probs.row(r).allFinite() || (probs.row(r).array() < 0.0).any()) {
        throw InputError("softmax row for id " + std::to_string(ids[static_cast<std::size_t>(r)]) +
                         " has negative or non-finite entries");
      }
      if (std::abs(probs.row(r).sum() - 1.0) > 1e-6) {
        throw InputError("softmax row for id " + std::to_string(ids[static_cast<std::size_t>(r)]) +
                         " does not sum to 1");
      }
    }
    build_lookup();
  }

  Vector row(Index id) const {
    if (lookup_.size() != ids.size()) build_lookup();
    auto it = lookup_.find(id);
    if (it == lookup_.end()) throw InputError("softmax table has no row for index " + std::to_string(id));
    return probs.row(static_cast<Eigen::Index>(it->second)).transpose();
  }

 private:
  void build_lookup() const {
    lookup_.clear();
    for (std::size_t i = 0; i < ids.size(); ++i) lookup_.emplace(ids[i], i);
  }
  mutable std::unordered_map<Index, std::size_t> lookup_;
};

/// Side inputs some baselines need. Points supply raw embeddings for
/// CosineSimilarity; when absent the prior kernel correlation is used.
struct SelectionInputs {
  const std::vector<Point>* points = nullptr;
  const SoftmaxTable* softmax = nullptr;
};

struct BatchResult {
  std::vector<Index> indices;
  std::vector<double> objectives;
};

namespace scores {

inline double softmax_entropy(const Vector& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) > 0.0) h -= p(i) * std::log(p(i));
  }
  return h;
}

/// Largest and second-largest class probability.
inline std::pair<double, double> top_two(const Vector& p) {
  double first = -1.0, second = -1.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) > first) {
      second = first;
      first = p(i);
    } else if (p(i) > second) {
      second = p(i);
    }
  }
  return {first, std::max(second, 0.0)};
}

inline double max_margin(const Vector& p) {
  const auto [p1, p2] = top_two(p);
  return -(p1 - p2);
}

inline double least_confidence(const Vector& p) { return -top_two(p).first; }

/// Correlation from a covariance, with zero-variance entries contributing 0.
inline double correlation(double cov_xy, double var_x, double var_y) {
  if (var_x <= 0.0 || var_y <= 0.0) return 0.0;
  return cov_xy / std::sqrt(std::max(var_x, kVarianceFloor) * std::max(var_y, kVarianceFloor));
}

inline double kernel_distance_sq(const Matrix& k, Index a, Index b) {
  const auto i = static_cast<Eigen::Index>(a);
  const auto j = static_cast<Eigen::Index>(b);
  return std::max(0.0, k(i, i) + k(j, j) - 2.0 * k(i, j));
}

}  // namespace scores

namespace detail {

// State of one batch construction: a local copy of the covariance over
// S ∪ A (updated in BaCE mode) plus everything the rules read.
class BatchScorer {
 public:
  BatchScorer(const PosteriorState& state, std::span<const Index> targets, std::span<const Index> candidates,
              const Policy& policy, const SelectionInputs& inputs)
      : state_(state), policy_(policy), inputs_(inputs) {
    local_ids_.assign(candidates.begin(), candidates.end());
    local_ids_.insert(local_ids_.end(), targets.begin(), targets.end());
    std::sort(local_ids_.begin(), local_ids_.end());
    local_ids_.erase(std::unique(local_ids_.begin(), local_ids_.end()), local_ids_.end());
    for (std::size_t i = 0; i < local_ids_.size(); ++i) position_.emplace(local_ids_[i], i);
    cov_ = linalg::principal(state.covariance(), local_ids_);
    initial_cov_ = cov_;
    noise_.resize(local_ids_.size());
    for (std::size_t i = 0; i < local_ids_.size(); ++i) {
      noise_[i] = policy.noise_var.value_or(state.noise_variance(local_ids_[i]));
    }
    for (Index a : targets) local_targets_.push_back(position_.at(a));
    for (const auto& obs : state.history()) history_.push_back(obs.index);
    if (needs_softmax(policy.rule) && inputs.softmax == nullptr) {
      throw InputError(rule_name(policy.rule) + " needs a softmax table");
    }
  }

  /// Scores every candidate under the current local covariance.
  std::vector<double> score_all(std::span<const Index> candidates, std::span<const Index> picked) {
    std::vector<double> out(candidates.size());
    std::optional<InformationScorer> itl;
    if (policy_.rule == Rule::ITL) {
      if (policy_.stabilize) {
        std::vector<double> target_noise;
        for (std::size_t a : local_targets_) target_noise.push_back(noise_[a]);
        itl.emplace(cov_, local_targets_, &target_noise);
      } else {
        itl.emplace(cov_, local_targets_);
      }
    }
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const std::size_t x = position_.at(candidates[c]);
      out[c] = itl ? itl->score(x, noise_[x]) : score_one(candidates[c], x, picked);
    }
    return out;
  }

  /// Rank-one update of the local covariance after picking `id`.
  void condition_on(Index id) {
    const std::size_t j = position_.at(id);
    const auto jj = static_cast<Eigen::Index>(j);
    const Vector column = cov_.col(jj);
    linalg::symmetric_downdate(cov_, column, std::max(0.0, column(jj)) + noise_[j]);
  }

  /// Squared kernel distance to the nearest selected point; with nothing
  /// selected yet, the squared distance to the zero function, k(x, x).
  double nearest_distance_sq(Index id, std::span<const Index> picked) const {
    const std::size_t x = position_.at(id);
    double best = std::numeric_limits<double>::infinity();
    bool any = false;
    auto visit = [&](Index other) {
      any = true;
      best = std::min(best, history_distance_sq(x, other));
    };
    for (Index h : history_) visit(h);
    for (Index p : picked) visit(p);
    if (!any) return std::max(0.0, initial_cov_(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(x)));
    return best;
  }

 private:
  double history_distance_sq(std::size_t x, Index other) const {
    auto it = position_.find(other);
    if (it != position_.end()) return scores::kernel_distance_sq(initial_cov_, x, it->second);
    const Matrix& k = state_.covariance();
    const Index gx = local_ids_[x];
    return scores::kernel_distance_sq(k, gx, other);
  }

  double cosine_to_targets(Index id) const {
    double acc = 0.0;
    const bool use_embeddings = inputs_.points != nullptr && (*inputs_.points)[id].embedding.has_value();
    const Matrix& prior = state_.prior_covariance();
    for (std::size_t a : local_targets_) {
      const Index target = local_ids_[a];
      if (use_embeddings) {
        acc += cosine_similarity((*inputs_.points)[id], (*inputs_.points)[target]);
      } else {
        const auto i = static_cast<Eigen::Index>(id);
        const auto t = static_cast<Eigen::Index>(target);
        acc += scores::correlation(prior(i, t), prior(i, i), prior(t, t));
      }
    }
    return acc / static_cast<double>(local_targets_.size());
  }

  double score_one(Index id, std::size_t x, std::span<const Index> picked) const {
    const auto xi = static_cast<Eigen::Index>(x);
    const double var_x = cov_(xi, xi);
    switch (policy_.rule) {
      case Rule::ITL:
        break;
      case Rule::CTL: {
        double acc = 0.0;
        for (std::size_t a : local_targets_) {
          const auto ai = static_cast<Eigen::Index>(a);
          acc += scores::correlation(cov_(xi, ai), var_x, cov_(ai, ai));
        }
        return acc;
      }
      case Rule::UncertaintySampling:
        return std::max(0.0, var_x);
      case Rule::UndirectedITL:
        return 0.5 * std::log1p(std::max(0.0, var_x) / noise_[x]);
      case Rule::MaxDist:
      case Rule::KMeansPP:
        return nearest_distance_sq(id, picked);
      case Rule::CosineSimilarity:
        return cosine_to_targets(id);
      case Rule::InformationDensity: {
        const double relevance = std::max(0.0, cosine_to_targets(id));
        return scores::softmax_entropy(inputs_.softmax->row(id)) * std::pow(relevance, policy_.density_beta);
      }
      case Rule::MaxEntropy:
        return scores::softmax_entropy(inputs_.softmax->row(id));
      case Rule::MaxMargin:
        return scores::max_margin(inputs_.softmax->row(id));
      case Rule::LeastConfidence:
        return scores::least_confidence(inputs_.softmax->row(id));
      case Rule::Random:
        return 0.0;
    }
    return 0.0;
  }

  const PosteriorState& state_;
  const Policy& policy_;
  const SelectionInputs& inputs_;
  std::vector<Index> local_ids_;
  std::unordered_map<Index, std::size_t> position_;
  Matrix cov_;
  Matrix initial_cov_;
  std::vector<double> noise_;
  std::vector<std::size_t> local_targets_;
  std::vector<Index> history_;
};

// Highest score, ties to the lowest domain index. Skips `excluded`.
inline std::size_t argmax_lowest(std::span<const Index> candidates, std::span<const double> values,
                                 const std::vector<bool>& excluded) {
  std::size_t best = candidates.size();
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    if (excluded[c]) continue;
    if (best == candidates.size() || values[c] > values[best] ||
        (values[c] == values[best] && candidates[c] < candidates[best])) {
      best = c;
    }
  }
  return best;
}

inline std::size_t uniform_pick(const std::vector<bool>& excluded, Rng& rng) {
  std::vector<std::size_t> open;
  for (std::size_t c = 0; c < excluded.size(); ++c) {
    if (!excluded[c]) open.push_back(c);
  }
  std::uniform_int_distribution<std::size_t> dist(0, open.size() - 1);
  return open[dist(rng)];
}

// Draws proportionally to `weights` (k-means++ seeding).
inline std::size_t weighted_pick(std::span<const double> weights, const std::vector<bool>& excluded, Rng& rng) {
  double total = 0.0;
  for (std::size_t c = 0; c < weights.size(); ++c) {
    if (!excluded[c]) total += weights[c];
  }
  if (!(total > 0.0)) return uniform_pick(excluded, rng);
  std::uniform_real_distribution<double> dist(0.0, total);
  const double u = dist(rng);
  double acc = 0.0;
  std::size_t last = weights.size();
  for (std::size_t c = 0; c < weights.size(); ++c) {
    if (excluded[c] || weights[c] <= 0.0) continue;
    acc += weights[c];
    last = c;
    if (u < acc) return c;
  }
  return last;
}

inline void check_indices(const PosteriorState& state, std::span<const Index> indices, const char* what) {
  for (Index i : indices) {
    if (i >= state.size()) throw InputError(std::string(what) + " index " + std::to_string(i) + " outside domain");
  }
}

}  // namespace detail

/// I(f_A; y_x | D_n) by the backward method.
inline double score_itl(const PosteriorState& state, std::span<const Index> targets, Index x) {
  return information_gain(state, IGQuery{{targets.begin(), targets.end()}, x, IGMethod::Backward});
}

/// Sum over A of the posterior correlation between f_x and f_a.
inline double score_ctl(const PosteriorState& state, std::span<const Index> targets, Index x) {
  state.check_index(x);
  const Matrix& k = state.covariance();
  const auto xi = static_cast<Eigen::Index>(x);
  double acc = 0.0;
  for (Index a : targets) {
    state.check_index(a);
    const auto ai = static_cast<Eigen::Index>(a);
    acc += scores::correlation(k(xi, ai), k(xi, xi), k(ai, ai));
  }
  return acc;
}

/// Score of `x` under any rule at the current posterior, before any batch
/// conditioning. Distance rules measure against the observation history.
inline double score_baseline(Rule rule, const PosteriorState& state, std::span<const Index> targets, Index x,
                             const SelectionInputs& inputs = {}) {
  state.check_index(x);
  Policy policy;
  policy.rule = rule;
  policy.stabilize = false;
  std::vector<Index> candidate{x};
  detail::BatchScorer scorer(state, targets, candidate, policy, inputs);
  return scorer.score_all(candidate, {}).front();
}

/// Builds a batch of `policy.batch_size` points from `candidates`.
inline BatchResult select_batch(const PosteriorState& state, std::span<const Index> targets,
                                std::span<const Index> candidates, const Policy& policy,
                                const SelectionInputs& inputs, Rng& rng) {
  policy.validate();
  if (candidates.empty()) throw InputError("select_batch: empty sample space");
  if (targets.empty()) throw InputError("select_batch: empty target space");
  if (!policy.multiset && policy.batch_size > candidates.size()) {
    throw InputError("select_batch: batch size " + std::to_string(policy.batch_size) +
                     " exceeds sample space of size " + std::to_string(candidates.size()));
  }
  detail::check_indices(state, targets, "target");
  detail::check_indices(state, candidates, "candidate");

  detail::BatchScorer scorer(state, targets, candidates, policy, inputs);
  BatchResult result;
  std::vector<bool> excluded(candidates.size(), false);
  const std::size_t b = policy.batch_size;

  auto take = [&](std::size_t c, double objective) {
    result.indices.push_back(candidates[c]);
    result.objectives.push_back(objective);
    if (!policy.multiset) excluded[c] = true;
  };

  if (policy.rule == Rule::Random) {
    for (std::size_t i = 0; i < b; ++i) take(detail::uniform_pick(excluded, rng), 0.0);
    return result;
  }

  if (policy.rule == Rule::KMeansPP) {
    for (std::size_t i = 0; i < b; ++i) {
      const bool seeded = !state.history().empty() || !result.indices.empty();
      if (!seeded) {
        take(detail::uniform_pick(excluded, rng), 0.0);
        continue;
      }
      const auto weights = scorer.score_all(candidates, result.indices);
      const std::size_t c = detail::weighted_pick(weights, excluded, rng);
      take(c, weights[c]);
    }
    return result;
  }

  if (policy.batch_mode == BatchMode::TopB) {
    const auto values = scorer.score_all(candidates, {});
    std::vector<std::size_t> order(candidates.size());
    for (std::size_t c = 0; c < order.size(); ++c) order[c] = c;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
      if (values[l] != values[r]) return values[l] > values[r];
      return candidates[l] < candidates[r];
    });
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t c = order[policy.multiset ? 0 : i];
      take(c, values[c]);
    }
    return result;
  }

  for (std::size_t i = 0; i < b; ++i) {
    const auto values = scorer.score_all(candidates, result.indices);
    const std::size_t c = detail::argmax_lowest(candidates, values, excluded);
    take(c, values[c]);
    scorer.condition_on(candidates[c]);
  }
  return result;
}

inline BatchResult select_batch(const PosteriorState& state, std::span<const Index> targets,
                                std::span<const Index> candidates, const Policy& policy) {
  Rng rng(policy.seed);
  return select_batch(state, targets, candidates, policy, SelectionInputs{}, rng);
}

inline std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t out = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    if (out > std::numeric_limits<std::uint64_t>::max() / (n - k + i)) return std::numeric_limits<std::uint64_t>::max();
    out = out * (n - k + i) / i;
  }
  return out;
}

/// Exact maximizer of I(f_A; y_B | D_n) over all size-b subsets of the
/// candidates. `objectives` holds the single optimal value.
inline BatchResult brute_force_batch(const PosteriorState& state, std::span<const Index> targets,
                                     std::span<const Index> candidates, std::size_t b) {
  if (b == 0 || b > candidates.size()) throw InputError("brute_force_batch: need 1 <= b <= |S|");
  if (binomial(candidates.size(), b) > 100000) {
    throw InputError("brute_force_batch: more than 1e5 subsets to enumerate");
  }
  if (targets.empty()) throw InputError("brute_force_batch: empty target space");
  detail::check_indices(state, targets, "target");
  detail::check_indices(state, candidates, "candidate");

  std::vector<Index> sorted(candidates.begin(), candidates.end());
  std::sort(sorted.begin(), sorted.end());

  // Var(f_S | f_A) once; each subset then needs two b x b log-dets.
  const Matrix given = linalg::schur_complement(state.covariance(), sorted, targets);
  const Matrix var_s = linalg::principal(state.covariance(), sorted);
  std::vector<double> noise(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) noise[i] = state.noise_variance(sorted[i]);

  BatchResult best;
  double best_value = -1.0;
  std::vector<Index> local(b);
  detail::for_each_selection(sorted.size(), b, false, [&](std::span<const std::size_t> pick) {
    for (std::size_t i = 0; i < b; ++i) local[i] = pick[i];
    Matrix vy = linalg::principal(var_s, local);
    Matrix vg = linalg::principal(given, local);
    for (std::size_t i = 0; i < b; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      vy(ii, ii) += noise[local[i]];
      vg(ii, ii) += noise[local[i]];
    }
    const double value = std::max(0.0, 0.5 * (linalg::log_det(vy) - linalg::log_det(vg)));
    if (value > best_value) {
      best_value = value;
      best.indices.clear();
      for (std::size_t i = 0; i < b; ++i) best.indices.push_back(sorted[local[i]]);
    }
  });
  best.objectives = {best_value};
  return best;
}

/// Uniform sample of m targets without replacement, in their original order.
inline std::vector<Index> subsample_targets(std::span<const Index> full, std::size_t m, Rng& rng) {
  if (m == 0) throw InputError("subsample_targets: m must be at least 1");
  if (m > full.size()) {
    throw InputError("subsample_targets: m = " + std::to_string(m) + " exceeds |A| = " + std::to_string(full.size()));
  }
  std::vector<Index> out;
  out.reserve(m);
  std::sample(full.begin(), full.end(), std::back_inserter(out), m, rng);
  return out;
}

}  // namespace transduct
