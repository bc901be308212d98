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

// Joint Gaussian posterior over a finite domain, and the information
// quantities computed from it.
//
// The posterior keeps the full conditional covariance over the domain and
// folds in each noisy observation with a rank-one update, so conditioning
// costs O(N^2) regardless of how many observations came before.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "transduct/error.hpp"
#include "transduct/kernel.hpp"
#include "transduct/linalg.hpp"

namespace transduct {

/// A noisy measurement y = f(x) + eps with Var(eps) = noise_var.
/// The same index may be observed any number of times.
struct Observation {
  Index index = 0;
  double value = 0.0;
  double noise_var = 1.0;
};

class PosteriorState {
 public:
  PosteriorState(Matrix prior_cov, NoiseModel noise, std::optional<Vector> prior_mean = std::nullopt)
      : noise_(std::move(noise)) {
    if (prior_cov.rows() != prior_cov.cols() || prior_cov.rows() == 0) {
      throw InputError("prior covariance must be a nonempty square matrix");
    }
    if (!prior_cov.allFinite()) throw NumericError("prior covariance has non-finite entries");
    if ((prior_cov - prior_cov.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
      throw InputError("prior covariance must be symmetric");
    }
    const Eigen::Index n = prior_cov.rows();
    Vector mean = prior_mean.value_or(Vector::Zero(n));
    if (mean.size() != n) throw InputError("prior mean size does not match covariance");
    if (!mean.allFinite()) throw NumericError("prior mean has non-finite entries");
    cov_ = prior_cov;
    mean_ = mean;
    prior_cov_ = std::make_shared<const Matrix>(std::move(prior_cov));
    prior_mean_ = std::make_shared<const Vector>(std::move(mean));
  }

  static PosteriorState from_gram(const KernelMatrix& k, NoiseModel noise,
                                  std::optional<Vector> prior_mean = std::nullopt) {
    return PosteriorState(k.entries, std::move(noise), std::move(prior_mean));
  }

  std::size_t size() const { return static_cast<std::size_t>(cov_.rows()); }
  std::size_t round() const { return history_.size(); }

  const Matrix& covariance() const { return cov_; }
  const Vector& mean() const { return mean_; }
  const Matrix& prior_covariance() const { return *prior_cov_; }
  const Vector& prior_mean() const { return *prior_mean_; }
  const NoiseModel& noise() const { return noise_; }
  const std::vector<Observation>& history() const { return history_; }

  double noise_variance(Index index) const { return noise_.variance(index); }

  /// Folds one observation into the posterior in place.
  void condition(const Observation& obs) {
    check_index(obs.index);
    if (!std::isfinite(obs.value)) throw NumericError("observation value is not finite");
    const double expected = noise_.variance(obs.index);
    if (!(obs.noise_var > 0.0) || std::abs(obs.noise_var - expected) > 1e-12 * std::max(1.0, expected)) {
      throw InputError("observation noise variance does not match the noise model at index " +
                       std::to_string(obs.index));
    }
    const auto j = static_cast<Eigen::Index>(obs.index);
    const Vector column = cov_.col(j);
    const double s = std::max(column(j), 0.0) + obs.noise_var;
    const double residual = obs.value - mean_(j);
    mean_ += column * (residual / s);
    linalg::symmetric_downdate(cov_, column, s);
    if (!mean_.allFinite() || !cov_.allFinite()) throw NumericError("conditioning produced non-finite values");
    history_.push_back(obs);
  }

  /// Conditions on a measurement with the noise model's variance.
  void observe(Index index, double value) { condition(Observation{index, value, noise_.variance(index)}); }

  void check_index(Index index) const {
    if (index >= size()) {
      throw InputError("index " + std::to_string(index) + " outside domain of size " + std::to_string(size()));
    }
  }

 private:
  Matrix cov_;
  Vector mean_;
  std::shared_ptr<const Matrix> prior_cov_;
  std::shared_ptr<const Vector> prior_mean_;
  NoiseModel noise_;
  std::vector<Observation> history_;
};

/// Value-returning form of PosteriorState::condition.
inline PosteriorState condition(PosteriorState state, const Observation& obs) {
  state.condition(obs);
  return state;
}

/// sigma_n^2(x), clamped at zero.
inline double marginal_variance(const PosteriorState& state, Index index) {
  state.check_index(index);
  const auto i = static_cast<Eigen::Index>(index);
  return std::max(0.0, state.covariance()(i, i));
}

enum class IGMethod { Forward, Backward };

struct IGQuery {
  std::vector<Index> targets;
  Index candidate = 0;
  IGMethod method = IGMethod::Backward;
};

/// Scores I(f_A; y_x) for many candidates against one target set using the
/// backward form 1/2 log(Var(y_x) / Var(y_x | f_A)). Var(f_A) is factored
/// once, so each score costs O(|A|^2).
///
/// With `target_noise` set, the targets are treated as noisy observations
/// y_A instead of f_A (rho^2 added to the target block before inversion).
class InformationScorer {
 public:
  InformationScorer(const Matrix& cov, std::vector<Index> targets, const std::vector<double>* target_noise = nullptr)
      : cov_(&cov), targets_(std::move(targets)), noisy_targets_(target_noise != nullptr) {
    if (targets_.empty()) throw InputError("target set must be nonempty");
    for (Index a : targets_) {
      if (a >= static_cast<Index>(cov.rows())) throw InputError("target index outside domain");
    }
    Matrix block = linalg::principal(cov, targets_);
    if (noisy_targets_) {
      if (target_noise->size() != targets_.size()) throw InputError("target noise size mismatch");
      for (std::size_t i = 0; i < targets_.size(); ++i) block(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += (*target_noise)[i];
    }
    llt_ = linalg::cholesky(block);
    if (!noisy_targets_) {
      for (std::size_t i = 0; i < targets_.size(); ++i) target_position_.emplace_back(targets_[i], i);
      std::sort(target_position_.begin(), target_position_.end());
    }
  }

  /// I(f_A; y_x) for a candidate observed with noise variance `noise_var`.
  double score(Index x, double noise_var) const {
    const auto xi = static_cast<Eigen::Index>(x);
    const double var_y = std::max(0.0, (*cov_)(xi, xi)) + noise_var;
    double var_given = 0.0;
    if (!noisy_targets_ && is_target(x)) {
      // f_x is one of the targets, so only the measurement noise remains.
      var_given = noise_var;
    } else {
      Vector cross(static_cast<Eigen::Index>(targets_.size()));
      for (std::size_t i = 0; i < targets_.size(); ++i) {
        cross(static_cast<Eigen::Index>(i)) = (*cov_)(static_cast<Eigen::Index>(targets_[i]), xi);
      }
      const Vector half = llt_.matrixL().solve(cross);
      var_given = std::max(var_y - half.squaredNorm(), noise_var);
    }
    return std::max(0.0, 0.5 * std::log(var_y / var_given));
  }

  const std::vector<Index>& targets() const { return targets_; }

 private:
  bool is_target(Index x) const {
    auto it = std::lower_bound(target_position_.begin(), target_position_.end(), std::pair<Index, std::size_t>{x, 0});
    return it != target_position_.end() && it->first == x;
  }

  const Matrix* cov_;
  std::vector<Index> targets_;
  bool noisy_targets_;
  Eigen::LLT<Matrix> llt_;
  std::vector<std::pair<Index, std::size_t>> target_position_;
};

namespace detail {

// Forward form: 1/2 (log det Var(f_A) - log det Var(f_A | y_x)). Both
// determinants use the same diagonal shift so that the two forms agree
// algebraically, not just in the limit.
inline double forward_information_gain(const Matrix& cov, std::span<const Index> targets, Index x, double noise_var) {
  const Matrix block = linalg::principal(cov, targets);
  const auto xi = static_cast<Eigen::Index>(x);
  const double s = std::max(0.0, cov(xi, xi)) + noise_var;
  Vector cross(static_cast<Eigen::Index>(targets.size()));
  for (std::size_t i = 0; i < targets.size(); ++i) cross(static_cast<Eigen::Index>(i)) = cov(static_cast<Eigen::Index>(targets[i]), xi);
  Matrix after = block;
  linalg::symmetric_downdate(after, cross, s);
  double jitter = linalg::jitter_for(block);
  if (jitter == 0.0) jitter = kJitterScale;
  for (int attempt = 0; attempt < 4; ++attempt, jitter *= 100.0) {
    Eigen::LLT<Matrix> before_llt, after_llt;
    if (!linalg::cholesky_with(block, jitter, before_llt) || !linalg::cholesky_with(after, jitter, after_llt)) continue;
    return std::max(0.0, 0.5 * (linalg::log_det(before_llt) - linalg::log_det(after_llt)));
  }
  throw NumericError("forward information gain: target covariance not positive semidefinite");
}

}  // namespace detail

/// I(f_A; y_x | D_n) by the forward or backward method.
inline double information_gain(const PosteriorState& state, const IGQuery& q) {
  if (q.targets.empty()) throw InputError("information gain needs a nonempty target set");
  state.check_index(q.candidate);
  for (Index a : q.targets) state.check_index(a);
  const double noise_var = state.noise_variance(q.candidate);
  if (q.method == IGMethod::Forward) {
    return detail::forward_information_gain(state.covariance(), q.targets, q.candidate, noise_var);
  }
  return InformationScorer(state.covariance(), q.targets).score(q.candidate, noise_var);
}

/// I(f_A; y_B) for a (multi)set B of observations with noise variances
/// `noise` under covariance `cov`:
/// 1/2 (log det Var(y_B) - log det Var(y_B | f_A)).
inline double batch_information_gain(const Matrix& cov, std::span<const Index> targets, std::span<const Index> batch,
                                     std::span<const double> noise) {
  if (batch.empty()) return 0.0;
  if (noise.size() != batch.size()) throw InputError("batch noise size mismatch");
  Matrix var_y = linalg::principal(cov, batch);
  Matrix var_y_given = linalg::schur_complement(cov, batch, targets);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    var_y(ii, ii) += noise[i];
    var_y_given(ii, ii) += noise[i];
  }
  return std::max(0.0, 0.5 * (linalg::log_det(var_y) - linalg::log_det(var_y_given)));
}

inline double batch_information_gain(const PosteriorState& state, std::span<const Index> targets,
                                     std::span<const Index> batch) {
  std::vector<double> noise;
  noise.reserve(batch.size());
  for (Index b : batch) {
    state.check_index(b);
    noise.push_back(state.noise_variance(b));
  }
  for (Index a : targets) state.check_index(a);
  return batch_information_gain(state.covariance(), targets, batch, noise);
}

/// I(f_X; y_X) = 1/2 log det(I + P^{-1/2} K_XX P^{-1/2}). X may repeat.
inline double self_information(const Matrix& cov, std::span<const Index> x, std::span<const double> noise) {
  if (x.empty()) return 0.0;
  Matrix k = linalg::principal(cov, x);
  const auto n = static_cast<Eigen::Index>(x.size());
  Vector scale(n);
  for (Eigen::Index i = 0; i < n; ++i) scale(i) = 1.0 / std::sqrt(noise[static_cast<std::size_t>(i)]);
  Matrix m = scale.asDiagonal() * k * scale.asDiagonal();
  m = 0.5 * (m + m.transpose());
  m.diagonal().array() += 1.0;
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) throw NumericError("self information: I + P^-1 K not positive definite");
  return 0.5 * linalg::log_det(llt);
}

/// Differential entropy of f at `indices`:
/// (n/2) log(2 pi e) + 1/2 log det Var(f).
inline double entropy(const PosteriorState& state, std::span<const Index> indices) {
  for (Index i : indices) state.check_index(i);
  const double n = static_cast<double>(indices.size());
  const double log_2pie = std::log(2.0 * std::numbers::pi * std::numbers::e);
  return 0.5 * n * log_2pie + 0.5 * linalg::log_det(linalg::principal(state.covariance(), indices));
}

enum class CapacityMode { Greedy, BruteForce };

/// Running totals of greedy maximization of I(f_X; y_X) over X within
/// `candidates`: element k-1 holds the value after k picks. With
/// `allow_repeats` a point may be picked again (repeated measurement).
inline std::vector<double> greedy_capacity_trace(const Matrix& cov, std::span<const Index> candidates,
                                                 const NoiseModel& noise, std::size_t budget,
                                                 bool allow_repeats = true) {
  if (candidates.empty()) throw InputError("capacity: empty candidate set");
  if (!allow_repeats && budget > candidates.size()) {
    throw InputError("capacity: budget exceeds candidate set without repeats");
  }
  Matrix local = linalg::principal(cov, candidates);
  std::vector<double> noise_var(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) noise_var[i] = noise.variance(candidates[i]);
  std::vector<bool> used(candidates.size(), false);
  std::vector<double> trace;
  trace.reserve(budget);
  double total = 0.0;
  for (std::size_t step = 0; step < budget; ++step) {
    double best = -1.0;
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (!allow_repeats && used[i]) continue;
      const auto ii = static_cast<Eigen::Index>(i);
      const double gain = 0.5 * std::log1p(std::max(0.0, local(ii, ii)) / noise_var[i]);
      if (gain > best) {
        best = gain;
        best_i = i;
      }
    }
    used[best_i] = true;
    total += best;
    trace.push_back(total);
    const auto bi = static_cast<Eigen::Index>(best_i);
    const Vector column = local.col(bi);
    linalg::symmetric_downdate(local, column, std::max(0.0, column(bi)) + noise_var[best_i]);
  }
  return trace;
}

namespace detail {

// Visits every size-`k` multiset (repeats) or subset (no repeats) of
// {0..n-1} as a non-decreasing / increasing index sequence.
template <typename Visit>
void for_each_selection(std::size_t n, std::size_t k, bool repeats, Visit&& visit) {
  std::vector<std::size_t> pick(k);
  auto rec = [&](auto&& self, std::size_t pos, std::size_t start) -> void {
    if (pos == k) {
      visit(std::span<const std::size_t>(pick));
      return;
    }
    for (std::size_t i = start; i < n; ++i) {
      pick[pos] = i;
      self(self, pos + 1, repeats ? i : i + 1);
    }
  };
  rec(rec, 0, 0);
}

}  // namespace detail

/// Exact max over size-`budget` (multi)sets of I(f_X; y_X). The objective is
/// monotone, so this equals the max over all sizes up to `budget`.
inline double brute_force_capacity(const Matrix& cov, std::span<const Index> candidates, const NoiseModel& noise,
                                   std::size_t budget, bool allow_repeats = true) {
  if (candidates.size() > 12 || budget > 6) {
    throw InputError("brute-force capacity is limited to |S| <= 12 and n <= 6");
  }
  if (!allow_repeats && budget > candidates.size()) {
    throw InputError("capacity: budget exceeds candidate set without repeats");
  }
  if (budget == 0) return 0.0;
  double best = 0.0;
  std::vector<Index> chosen(budget);
  std::vector<double> noise_var(budget);
  detail::for_each_selection(candidates.size(), budget, allow_repeats, [&](std::span<const std::size_t> pick) {
    for (std::size_t i = 0; i < pick.size(); ++i) {
      chosen[i] = candidates[pick[i]];
      noise_var[i] = noise.variance(chosen[i]);
    }
    best = std::max(best, self_information(cov, chosen, noise_var));
  });
  return best;
}

/// gamma_n: the largest information obtainable from `budget` noisy
/// observations within `candidates`, at the current posterior.
inline double information_capacity(const PosteriorState& state, std::span<const Index> candidates, std::size_t budget,
                                   CapacityMode mode, bool allow_repeats = true) {
  for (Index s : candidates) state.check_index(s);
  if (budget == 0) return 0.0;
  if (mode == CapacityMode::BruteForce) {
    return brute_force_capacity(state.covariance(), candidates, state.noise(), budget, allow_repeats);
  }
  return greedy_capacity_trace(state.covariance(), candidates, state.noise(), budget, allow_repeats).back();
}

/// Confidence multiplier B + rho sqrt(2 (gamma_n + 1 + log(1/delta))).
inline double beta_n(double norm_bound, double rho, double gamma_n, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw InputError("beta_n: delta must lie in (0, 1)");
  if (norm_bound < 0.0 || rho < 0.0 || gamma_n < 0.0) {
    throw InputError("beta_n: norm bound, rho and gamma_n must be nonnegative");
  }
  return norm_bound + rho * std::sqrt(2.0 * (gamma_n + 1.0 + std::log(1.0 / delta)));
}

}  // namespace transduct
