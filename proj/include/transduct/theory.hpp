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

// Quantities from the convergence analysis of ITL and empirical checkers for
// the bounds built on them.
//
// gamma_n (information capacity) is only known exactly on small instances.
// Elsewhere every checker carries a lower and an upper bound on gamma_n and
// reports Warn when the verdict depends on the unknown gap.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "transduct/error.hpp"
#include "transduct/kernel.hpp"
#include "transduct/linalg.hpp"
#include "transduct/posterior.hpp"
#include "transduct/selection.hpp"

namespace transduct {

struct TheoryConstants {
  /// max_x sigma_0^2(x) over the domain.
  double sigma2 = 0.0;
  /// max_x sigma_0^2(x) + rho^2(x) over the domain.
  double sigma_tilde2 = 0.0;
  /// Smallest eigenvalue of Var(f_S), no jitter.
  double lambda_min = 0.0;
};

inline TheoryConstants theory_constants(const Matrix& prior, const NoiseModel& noise, std::span<const Index> sample) {
  if (sample.empty()) throw InputError("theory constants: empty sample space");
  TheoryConstants c;
  for (Eigen::Index i = 0; i < prior.rows(); ++i) {
    const double v = std::max(0.0, prior(i, i));
    c.sigma2 = std::max(c.sigma2, v);
    c.sigma_tilde2 = std::max(c.sigma_tilde2, v + noise.variance(static_cast<Index>(i)));
  }
  c.lambda_min = linalg::smallest_eigenvalue(linalg::principal(prior, sample));
  return c;
}

/// eta_S^2(x) = Var(f_x | f_S) under the given covariance.
inline double irreducible_uncertainty(const Matrix& prior, std::span<const Index> sample, Index x) {
  if (x >= static_cast<Index>(prior.rows())) throw InputError("irreducible_uncertainty: index outside domain");
  if (std::find(sample.begin(), sample.end(), x) != sample.end()) return 0.0;
  const auto xi = static_cast<Eigen::Index>(x);
  if (sample.empty()) return std::max(0.0, prior(xi, xi));
  const std::vector<Index> keep{x};
  return std::max(0.0, linalg::schur_complement(prior, keep, sample)(0, 0));
}

/// Gamma_n = max_{x in S} I(f_A; y_x | D_n).
inline double step_uncertainty(const PosteriorState& state, std::span<const Index> targets,
                               std::span<const Index> sample) {
  if (sample.empty()) throw InputError("step_uncertainty: empty sample space");
  InformationScorer scorer(state.covariance(), {targets.begin(), targets.end()});
  double best = 0.0;
  for (Index x : sample) {
    state.check_index(x);
    best = std::max(best, scorer.score(x, state.noise_variance(x)));
  }
  return best;
}

/// Lower and upper bounds on gamma_k for one prior and sample space.
/// Exact by enumeration when |S| <= 12 and k <= 6. Otherwise the greedy
/// value is the lower bound and the upper bound is the smaller of
/// greedy / (1 - 1/e) and 1/2 sum_i log(1 + k lambda_i(K_SS) / rho_min^2).
class CapacityBounds {
 public:
  struct Bounds {
    double lower = 0.0;
    double upper = 0.0;
    bool exact = false;
  };

  CapacityBounds(const Matrix& prior, std::vector<Index> sample, const NoiseModel& noise, std::size_t greedy_budget)
      : prior_(&prior), sample_(std::move(sample)), noise_(&noise) {
    if (sample_.empty()) throw InputError("capacity bounds: empty sample space");
    rho2_min_ = std::numeric_limits<double>::infinity();
    for (Index s : sample_) rho2_min_ = std::min(rho2_min_, noise.variance(s));
    Eigen::SelfAdjointEigenSolver<Matrix> eig(linalg::principal(prior, sample_), Eigen::EigenvaluesOnly);
    eigenvalues_ = eig.eigenvalues().cwiseMax(0.0);
    if (greedy_budget > 0) greedy_ = greedy_capacity_trace(prior, sample_, noise, greedy_budget, true);
  }

  bool exact_feasible(std::size_t k) const { return sample_.size() <= 12 && k <= 6; }

  double spectral_upper(double k) const {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < eigenvalues_.size(); ++i) acc += std::log1p(k * eigenvalues_(i) / rho2_min_);
    return 0.5 * acc;
  }

  Bounds at(std::size_t k) {
    if (k == 0) return {0.0, 0.0, true};
    if (exact_feasible(k)) {
      if (exact_.size() < k) exact_.resize(k, -1.0);
      if (exact_[k - 1] < 0.0) exact_[k - 1] = brute_force_capacity(*prior_, sample_, *noise_, k, true);
      return {exact_[k - 1], exact_[k - 1], true};
    }
    const double spectral = spectral_upper(static_cast<double>(k));
    if (k <= greedy_.size()) {
      const double g = greedy_[k - 1];
      return {g, std::min(spectral, g / (1.0 - std::exp(-1.0))), false};
    }
    return {0.0, spectral, false};
  }

  /// Smallest k whose upper bound satisfies upper_k / k <= threshold, which
  /// is a valid size for the condition on gamma_k itself. Empty when no
  /// k below 2^62 qualifies.
  std::optional<double> smallest_size(double threshold) {
    if (!(threshold > 0.0)) return std::nullopt;
    for (std::size_t k = 1; k <= std::max<std::size_t>(greedy_.size(), 6); ++k) {
      if (at(k).upper / static_cast<double>(k) <= threshold) return static_cast<double>(k);
    }
    // The spectral bound over k is concave with value 0 at k = 0, so its
    // ratio to k is nonincreasing and bisection applies.
    double lo = static_cast<double>(std::max<std::size_t>(greedy_.size(), 6));
    double hi = lo;
    const double limit = std::ldexp(1.0, 62);
    while (spectral_upper(hi) / hi > threshold) {
      lo = hi;
      hi *= 2.0;
      if (hi > limit) return std::nullopt;
    }
    while (hi - lo > 1.0) {
      const double mid = std::floor(0.5 * (lo + hi));
      if (spectral_upper(mid) / mid <= threshold) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    return hi;
  }

 private:
  const Matrix* prior_;
  std::vector<Index> sample_;
  const NoiseModel* noise_;
  double rho2_min_ = 0.0;
  Vector eigenvalues_;
  std::vector<double> greedy_;
  std::vector<double> exact_;
};

/// Right-hand side of the size condition on b_eps:
/// eps lambda_min^2 / (2 |S|^2 sigma^4 sigma_tilde^2).
inline double size_condition_threshold(const TheoryConstants& c, std::size_t sample_size, double eps) {
  const double s = static_cast<double>(sample_size);
  return eps * c.lambda_min * c.lambda_min / (2.0 * s * s * c.sigma2 * c.sigma2 * c.sigma_tilde2);
}

/// ITL run with the exact objective and batch size 1. Only variances are
/// tracked, so observed values are irrelevant and set to zero.
struct Trajectory {
  Matrix prior;
  NoiseModel noise = NoiseModel::homoscedastic(1.0);
  std::vector<Index> targets;
  std::vector<Index> sample;
  /// picks[n] is x_{n+1}.
  std::vector<Index> picks;
  /// gamma_step[n] is Gamma_n, for n = 0..rounds.
  std::vector<double> gamma_step;
  /// variances[n] is the diagonal of the posterior after n observations.
  std::vector<Vector> variances;

  std::size_t rounds() const { return picks.size(); }

  bool sample_within_targets() const {
    for (Index s : sample) {
      if (std::find(targets.begin(), targets.end(), s) == targets.end()) return false;
    }
    return true;
  }
};

inline Trajectory itl_trajectory(const PosteriorState& start, std::span<const Index> targets,
                                 std::span<const Index> sample, std::size_t rounds) {
  if (targets.empty() || sample.empty()) throw InputError("trajectory: target and sample spaces must be nonempty");
  Trajectory t;
  t.prior = start.covariance();
  t.noise = start.noise();
  t.targets.assign(targets.begin(), targets.end());
  t.sample.assign(sample.begin(), sample.end());
  PosteriorState state(start.covariance(), start.noise());
  for (std::size_t n = 0;; ++n) {
    InformationScorer scorer(state.covariance(), t.targets);
    double best = -1.0;
    Index best_x = 0;
    for (Index x : t.sample) {
      const double v = scorer.score(x, state.noise_variance(x));
      if (v > best || (v == best && x < best_x)) {
        best = v;
        best_x = x;
      }
    }
    t.gamma_step.push_back(best);
    t.variances.push_back(state.covariance().diagonal().cwiseMax(0.0));
    if (n == rounds) break;
    t.picks.push_back(best_x);
    state.observe(best_x, 0.0);
  }
  return t;
}

enum class CheckStatus { Pass, Warn, Fail, Skip };

inline std::string status_name(CheckStatus s) {
  switch (s) {
    case CheckStatus::Pass:
      return "pass";
    case CheckStatus::Warn:
      return "warn";
    case CheckStatus::Fail:
      return "fail";
    case CheckStatus::Skip:
      return "skip";
  }
  return "unknown";
}

/// One inequality lhs <= rhs at round n. When rhs is only bounded,
/// rhs_low <= rhs <= rhs_high; `exact` marks rhs_low == rhs_high.
struct BoundRow {
  std::size_t round = 0;
  Index witness = 0;
  double lhs = 0.0;
  double rhs_low = 0.0;
  double rhs_high = 0.0;
  bool exact = true;
  CheckStatus status = CheckStatus::Pass;
};

struct CheckReport {
  std::string name;
  CheckStatus status = CheckStatus::Pass;
  std::string message;
  std::vector<BoundRow> rows;
  /// Reducible gap max_{x in A} (sigma_n^2(x) - eta_S^2(x)) per round, where
  /// the checker computes it.
  std::vector<double> gap;

  bool passed() const { return status == CheckStatus::Pass; }

  void add(BoundRow row) {
    if (row.status == CheckStatus::Fail) {
      status = CheckStatus::Fail;
    } else if (row.status == CheckStatus::Warn && status == CheckStatus::Pass) {
      status = CheckStatus::Warn;
    }
    rows.push_back(row);
  }

  const BoundRow* first_failure() const {
    for (const auto& r : rows) {
      if (r.status == CheckStatus::Fail) return &r;
    }
    return nullptr;
  }
};

inline constexpr double kBoundSlack = 1e-9;

inline CheckStatus classify(double lhs, double rhs_low, double rhs_high, double slack = kBoundSlack) {
  if (lhs <= rhs_low + slack) return CheckStatus::Pass;
  if (lhs > rhs_high + slack) return CheckStatus::Fail;
  return CheckStatus::Warn;
}

/// Gamma_{n-1} <= gamma_n / n for n = 1..rounds.
inline CheckReport check_gamma_bound(const Trajectory& t) {
  if (!t.sample_within_targets()) throw InputError("gamma bound check needs S within A");
  CheckReport report;
  report.name = "gamma_bound";
  CapacityBounds cap(t.prior, t.sample, t.noise, t.rounds());
  for (std::size_t n = 1; n <= t.rounds(); ++n) {
    const auto g = cap.at(n);
    const double denom = static_cast<double>(n);
    BoundRow row{n, t.picks[n - 1], t.gamma_step[n - 1], g.lower / denom, g.upper / denom, g.exact};
    row.status = classify(row.lhs, row.rhs_low, row.rhs_high);
    report.add(row);
  }
  if (report.status == CheckStatus::Warn) report.message = "gamma_n not exact on some rounds";
  return report;
}

/// sigma_n^2(x) <= 2 sigma_tilde^2 Gamma_n for x in A and S, every round.
inline CheckReport check_within_S_bound(const Trajectory& t) {
  CheckReport report;
  report.name = "within_S_bound";
  const auto c = theory_constants(t.prior, t.noise, t.sample);
  std::vector<Index> both;
  for (Index s : t.sample) {
    if (std::find(t.targets.begin(), t.targets.end(), s) != t.targets.end()) both.push_back(s);
  }
  if (both.empty()) {
    report.status = CheckStatus::Skip;
    report.message = "A and S share no points";
    return report;
  }
  for (std::size_t n = 0; n <= t.rounds(); ++n) {
    const double rhs = 2.0 * c.sigma_tilde2 * t.gamma_step[n];
    Index worst = both.front();
    for (Index x : both) {
      if (t.variances[n](static_cast<Eigen::Index>(x)) > t.variances[n](static_cast<Eigen::Index>(worst))) worst = x;
    }
    BoundRow row{n, worst, t.variances[n](static_cast<Eigen::Index>(worst)), rhs, rhs, true};
    row.status = classify(row.lhs, rhs, rhs);
    report.add(row);
  }
  return report;
}

/// Approximate Markov boundary of x in S.
struct MarkovBoundary {
  /// Selected points in order; repeats allowed.
  std::vector<Index> members;
  double epsilon = 0.0;
  /// Var(f_x | D_n, y_B) after the last member.
  double achieved_variance = 0.0;
  double irreducible = 0.0;
  /// Size from the size condition on gamma_k.
  double size_bound = 0.0;
};

inline constexpr std::size_t kMarkovCap = 10000;

/// Greedy undirected ITL over S from the current state, stopped at the first
/// B with Var(f_x | D_n, y_B) <= eta_S^2(x) + eps. Throws BudgetError when
/// more than `cap` members would be needed.
inline MarkovBoundary markov_boundary(const PosteriorState& state, std::span<const Index> sample, Index x, double eps,
                                      std::size_t cap = kMarkovCap) {
  if (!(eps > 0.0)) throw InputError("markov boundary: epsilon must be positive");
  if (sample.empty()) throw InputError("markov boundary: empty sample space");
  state.check_index(x);
  for (Index s : sample) state.check_index(s);

  MarkovBoundary out;
  out.epsilon = eps;
  const Matrix& prior = state.prior_covariance();
  out.irreducible = irreducible_uncertainty(prior, sample, x);

  const auto c = theory_constants(prior, state.noise(), sample);
  if (!(c.lambda_min > 0.0)) throw NumericError("markov boundary: Var(f_S) is singular");
  const double threshold = size_condition_threshold(c, sample.size(), eps);
  const std::size_t greedy_budget = sample.size() <= 64 ? cap : 0;
  CapacityBounds bounds(prior, {sample.begin(), sample.end()}, state.noise(), greedy_budget);
  const auto size = bounds.smallest_size(threshold);
  if (!size) throw BudgetError("markov boundary: no size below 2^62 meets the size condition");
  out.size_bound = *size;

  std::vector<Index> local(sample.begin(), sample.end());
  local.push_back(x);
  Matrix cov = linalg::principal(state.covariance(), local);
  const auto xl = static_cast<Eigen::Index>(sample.size());
  const double goal = out.irreducible + eps;
  while (true) {
    out.achieved_variance = std::max(0.0, cov(xl, xl));
    if (out.achieved_variance <= goal) return out;
    if (out.members.size() >= cap) {
      throw BudgetError("markov boundary: tolerance not reached within " + std::to_string(cap) + " points");
    }
    std::size_t best = 0;
    double best_score = -1.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const double v = 0.5 * std::log1p(std::max(0.0, cov(ii, ii)) / state.noise_variance(sample[i]));
      if (v > best_score || (v == best_score && sample[i] < sample[best])) {
        best_score = v;
        best = i;
      }
    }
    const auto bi = static_cast<Eigen::Index>(best);
    const Vector column = cov.col(bi);
    linalg::symmetric_downdate(cov, column, std::max(0.0, column(bi)) + state.noise_variance(sample[best]));
    out.members.push_back(sample[best]);
  }
}

/// sigma_n^2(x) <= 2 sigma^2 b_eps Gamma_n + eta_S^2(x) + eps for x in A,
/// every round. Also records the reducible gap per round.
inline CheckReport check_variance_bound(const Trajectory& t, double eps) {
  if (!(eps > 0.0)) throw InputError("variance bound check: epsilon must be positive");
  if (!t.sample_within_targets()) throw InputError("variance bound check needs S within A");
  CheckReport report;
  report.name = "variance_bound";
  const auto c = theory_constants(t.prior, t.noise, t.sample);
  std::vector<double> eta(t.targets.size());
  for (std::size_t i = 0; i < t.targets.size(); ++i) eta[i] = irreducible_uncertainty(t.prior, t.sample, t.targets[i]);

  double b_eps = std::numeric_limits<double>::infinity();
  if (c.lambda_min > 0.0) {
    CapacityBounds bounds(t.prior, t.sample, t.noise, t.sample.size() <= 64 ? kMarkovCap : 0);
    if (auto size = bounds.smallest_size(size_condition_threshold(c, t.sample.size(), eps))) b_eps = *size;
  }
  if (!std::isfinite(b_eps)) report.message = "no finite b_eps; bound holds vacuously";

  for (std::size_t n = 0; n <= t.rounds(); ++n) {
    double gap = -std::numeric_limits<double>::infinity();
    BoundRow worst{n};
    double worst_margin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < t.targets.size(); ++i) {
      const Index x = t.targets[i];
      const double var = t.variances[n](static_cast<Eigen::Index>(x));
      gap = std::max(gap, var - eta[i]);
      const double reducible = t.gamma_step[n] > 0.0 ? 2.0 * c.sigma2 * b_eps * t.gamma_step[n] : 0.0;
      const double rhs = reducible + eta[i] + eps;
      if (rhs - var < worst_margin) {
        worst_margin = rhs - var;
        worst = BoundRow{n, x, var, rhs, rhs, true};
      }
    }
    worst.status = classify(worst.lhs, worst.rhs_low, worst.rhs_high);
    report.add(worst);
    report.gap.push_back(gap);
  }
  return report;
}

/// Submodularity ratio of the batch objective up to cardinality k, by
/// enumeration over B within the greedy batch of size k and X within S
/// disjoint from B with |X| <= k. 0/0 counts as 1.
inline double submodularity_ratio(const PosteriorState& state, std::span<const Index> targets,
                                  std::span<const Index> sample, std::size_t k) {
  if (sample.size() > 10 || k > 4) throw InputError("submodularity ratio: enumeration limited to |S| <= 10, k <= 4");
  if (k == 0 || k > sample.size()) throw InputError("submodularity ratio: need 1 <= k <= |S|");
  Policy policy;
  policy.batch_size = k;
  policy.stabilize = false;
  const auto greedy = select_batch(state, targets, sample, policy).indices;

  const Matrix& cov = state.covariance();
  auto value = [&](const std::vector<Index>& set) {
    std::vector<double> noise(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) noise[i] = state.noise_variance(set[i]);
    return batch_information_gain(cov, targets, set, noise);
  };
  constexpr double kZero = 1e-12;

  double ratio = std::numeric_limits<double>::infinity();
  for (unsigned mask = 0; mask < (1u << greedy.size()); ++mask) {
    std::vector<Index> base;
    for (std::size_t i = 0; i < greedy.size(); ++i) {
      if (mask & (1u << i)) base.push_back(greedy[i]);
    }
    std::vector<Index> rest;
    for (Index s : sample) {
      if (std::find(base.begin(), base.end(), s) == base.end()) rest.push_back(s);
    }
    const double f_base = value(base);
    std::vector<double> single(rest.size());
    for (std::size_t i = 0; i < rest.size(); ++i) {
      auto with = base;
      with.push_back(rest[i]);
      single[i] = value(with) - f_base;
    }
    for (std::size_t size = 1; size <= std::min(k, rest.size()); ++size) {
      detail::for_each_selection(rest.size(), size, false, [&](std::span<const std::size_t> pick) {
        auto with = base;
        double numerator = 0.0;
        for (std::size_t i : pick) {
          with.push_back(rest[i]);
          numerator += single[i];
        }
        const double denominator = value(with) - f_base;
        double r = 1.0;
        if (denominator > kZero) {
          r = numerator / denominator;
        } else if (numerator > kZero) {
          return;
        }
        ratio = std::min(ratio, r);
      });
    }
  }
  return std::isfinite(ratio) ? ratio : 1.0;
}

/// Schedule eps = c gamma_{floor(sqrt n)} / sqrt n with
/// c = 2 |S|^2 sigma^4 sigma_tilde^2 / lambda_min^2: checks
/// 2 sigma^2 sqrt(n) Gamma_n + eps <= (2 sigma^2 + c) gamma_n / sqrt(n).
inline CheckReport check_rate_schedule(const Trajectory& t) {
  if (!t.sample_within_targets()) throw InputError("rate schedule check needs S within A");
  CheckReport report;
  report.name = "rate_schedule";
  const auto c = theory_constants(t.prior, t.noise, t.sample);
  if (!(c.lambda_min > 0.0)) {
    report.status = CheckStatus::Skip;
    report.message = "Var(f_S) is singular";
    return report;
  }
  const double s = static_cast<double>(t.sample.size());
  const double cc = 2.0 * s * s * c.sigma2 * c.sigma2 * c.sigma_tilde2 / (c.lambda_min * c.lambda_min);
  const double c_prime = 2.0 * c.sigma2 + cc;
  CapacityBounds cap(t.prior, t.sample, t.noise, t.rounds());
  for (std::size_t n = 1; n <= t.rounds(); ++n) {
    const double root = std::sqrt(static_cast<double>(n));
    const auto small = cap.at(static_cast<std::size_t>(std::floor(root)));
    const auto full = cap.at(n);
    const double lhs_low = 2.0 * c.sigma2 * root * t.gamma_step[n] + cc * small.lower / root;
    const double lhs_high = 2.0 * c.sigma2 * root * t.gamma_step[n] + cc * small.upper / root;
    BoundRow row{n, t.picks[n - 1], lhs_high, c_prime * full.lower / root, c_prime * full.upper / root,
                 small.exact && full.exact};
    if (lhs_high <= row.rhs_low + kBoundSlack) {
      row.status = CheckStatus::Pass;
    } else if (lhs_low > row.rhs_high + kBoundSlack) {
      row.status = CheckStatus::Fail;
    } else {
      row.status = CheckStatus::Warn;
    }
    report.add(row);
  }
  return report;
}

/// A <= n D in the Loewner order, D the diagonal of A.
inline bool loewner_diag_bound(const Matrix& a, double tol = 1e-9) {
  if (a.rows() != a.cols() || a.rows() == 0) throw InputError("loewner_diag_bound: need a nonempty square matrix");
  const double n = static_cast<double>(a.rows());
  Matrix gap = -a;
  gap.diagonal() += n * a.diagonal();
  const double scale = std::max(1.0, a.diagonal().cwiseAbs().maxCoeff());
  return linalg::smallest_eigenvalue(gap) >= -tol * scale * n;
}

/// For 0 < a <= b <= M: b - a <= M log(b/a); if also a >= M',
/// b - a >= M' log(b/a).
inline bool log_difference_bounds(double a, double b, double m, double m_prime, double tol = 1e-12) {
  if (!(a > 0.0 && a <= b && b <= m)) throw InputError("log_difference_bounds: need 0 < a <= b <= M");
  const double diff = b - a;
  const double log_ratio = std::log(b / a);
  const double scale = tol * std::max(1.0, m);
  bool ok = diff <= m * log_ratio + scale;
  if (m_prime > 0.0 && a >= m_prime) ok = ok && diff >= m_prime * log_ratio - scale;
  return ok;
}

}  // namespace transduct
