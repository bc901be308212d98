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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "oracles.hpp"
#include "transduct/kernel.hpp"
#include "transduct/loop.hpp"
#include "transduct/selection.hpp"

namespace transduct {
namespace {

std::vector<Index> iota(std::size_t n, Index from = 0) {
  std::vector<Index> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = from + i;
  return v;
}

Matrix two_point() {
  Matrix k(2, 2);
  k << 1.0, 0.5, 0.5, 1.0;
  return k;
}

Policy exact(Rule rule, std::size_t b = 1) {
  Policy p;
  p.rule = rule;
  p.batch_size = b;
  p.stabilize = false;
  return p;
}

std::vector<Point> unit_embeddings(std::size_t n, std::size_t dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Point> pts;
  for (Index i = 0; i < n; ++i) {
    Vector e(static_cast<Eigen::Index>(dim));
    for (auto& x : e) x = u(rng);
    e.normalize();
    pts.push_back(Point::embedded(i, e));
  }
  return pts;
}

SoftmaxTable table(std::vector<std::vector<double>> rows) {
  SoftmaxTable t;
  t.probs.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    t.ids.push_back(r);
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      t.probs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  t.validate();
  return t;
}

TEST(Rules, NamesRoundTrip) {
  for (const auto& [rule, name] : rule_names()) {
    EXPECT_EQ(parse_rule(name), rule);
    EXPECT_EQ(rule_name(rule), name);
  }
  EXPECT_EQ(rule_names().size(), 12u);
  EXPECT_THROW(parse_rule("itl"), InputError);
  EXPECT_EQ(parse_batch_mode("bace"), BatchMode::BaCE);
  EXPECT_EQ(parse_batch_mode("TopB"), BatchMode::TopB);
  EXPECT_THROW(parse_batch_mode("greedy"), InputError);
}

TEST(PolicyValidate, Errors) {
  Policy p;
  p.batch_size = 0;
  EXPECT_THROW(p.validate(), InputError);
  p = Policy{};
  p.density_beta = 0.0;
  EXPECT_THROW(p.validate(), InputError);
  p = Policy{};
  p.target_subsample = 5;
  EXPECT_NO_THROW(p.validate(5));
  EXPECT_THROW(p.validate(4), InputError);
  p.target_subsample = 0;
  EXPECT_THROW(p.validate(), InputError);
  p = Policy{};
  p.noise_var = -1.0;
  EXPECT_THROW(p.validate(), InputError);
  EXPECT_TRUE(Policy{}.stabilize);
}

TEST(ScoreItl, TwoPointExample) {
  const PosteriorState s(two_point(), NoiseModel::homoscedastic(0.1));
  const std::vector<Index> a{1};
  EXPECT_NEAR(score_itl(s, a, 0), 0.5 * std::log(1.1 / 0.85), 1e-10);
}

TEST(ScoreItl, IndependentCandidateIsZero) {
  Matrix k = Matrix::Identity(3, 3);
  k(0, 1) = k(1, 0) = 0.4;
  const PosteriorState s(k, NoiseModel::homoscedastic(0.1));
  const std::vector<Index> a{0, 1};
  EXPECT_EQ(score_itl(s, a, 2), 0.0);
}

TEST(ScoreItl, ArgmaxIsLargestVarianceWhenSampleInTargets) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<Index> idx(0, 14);
  for (int trial = 0; trial < 20; ++trial) {
    PosteriorState s(oracle::random_gram(15, rng, 0.3), NoiseModel::homoscedastic(0.05));
    for (int j = 0; j < trial % 5; ++j) s.observe(idx(rng), 0.0);
    const auto all = iota(15);
    const std::vector<Index> sample(all.begin(), all.begin() + 8);
    Index by_itl = 0, by_var = 0;
    double best_itl = -1.0, best_var = -1.0;
    for (Index x : sample) {
      const double i = score_itl(s, all, x);
      const double v = marginal_variance(s, x);
      if (i > best_itl) best_itl = i, by_itl = x;
      if (v > best_var) best_var = v, by_var = x;
    }
    EXPECT_EQ(by_itl, by_var);
  }
}

TEST(ScoreItl, LowerBoundedByMeanSingleTargetGain) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const PosteriorState s(oracle::random_gram(12, rng, 0.4), NoiseModel::homoscedastic(0.1));
    const std::vector<Index> targets{0, 1, 2, 3, 4};
    for (Index x = 5; x < 12; ++x) {
      double mean = 0.0;
      for (Index a : targets) mean += score_itl(s, std::vector<Index>{a}, x);
      mean /= static_cast<double>(targets.size());
      EXPECT_GE(score_itl(s, targets, x), mean - 1e-8);
    }
  }
}

TEST(ScoreCtl, MatchesCosineForIdentityEmbeddingKernel) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<Point> pts;
  for (Index i = 0; i < 6; ++i) {
    Vector e(3);
    for (auto& x : e) x = z(rng);
    pts.push_back(Point::embedded(i, e));
  }
  const PosteriorState s(gram(KernelSpec::embedding(), pts).entries, NoiseModel::homoscedastic(0.1));
  for (Index x = 1; x < 6; ++x) {
    EXPECT_NEAR(score_ctl(s, std::vector<Index>{0}, x), cosine_similarity(pts[x], pts[0]), 1e-12);
  }
}

TEST(ScoreCtl, SelfAndBlockDiagonal) {
  Matrix k = Matrix::Identity(4, 4);
  k(0, 1) = k(1, 0) = 0.5;
  k(2, 3) = k(3, 2) = 0.5;
  const PosteriorState s(k, NoiseModel::homoscedastic(0.1));
  EXPECT_NEAR(score_ctl(s, std::vector<Index>{2}, 2), 1.0, 1e-15);
  EXPECT_EQ(score_ctl(s, std::vector<Index>{0, 1}, 2), 0.0);
  EXPECT_NEAR(score_ctl(s, std::vector<Index>{0, 1}, 0), 1.5, 1e-15);
  EXPECT_NEAR(score_baseline(Rule::CTL, s, std::vector<Index>{0, 1}, 0), 1.5, 1e-15);
}

TEST(ScoreCtl, ZeroVarianceContributesNothing) {
  Matrix k = Matrix::Identity(2, 2);
  k(0, 0) = 0.0;
  const PosteriorState s(k, NoiseModel::homoscedastic(0.1));
  EXPECT_EQ(score_ctl(s, std::vector<Index>{1}, 0), 0.0);
}

TEST(ScoreBaseline, SoftmaxRules) {
  const SoftmaxTable t = table({std::vector<double>(10, 0.1),
                                {0.5, 0.5, 0, 0, 0, 0, 0, 0, 0, 0},
                                {0.9, 0.05, 0.05, 0, 0, 0, 0, 0, 0, 0}});
  const PosteriorState s(Matrix::Identity(3, 3), NoiseModel::homoscedastic(0.1));
  const SelectionInputs in{nullptr, &t};
  const std::vector<Index> a{0};
  EXPECT_NEAR(score_baseline(Rule::MaxEntropy, s, a, 0, in), std::log(10.0), 1e-12);
  EXPECT_NEAR(score_baseline(Rule::MaxEntropy, s, a, 0, in), 2.3026, 1e-4);
  EXPECT_LT(score_baseline(Rule::MaxEntropy, s, a, 1, in), std::log(10.0));
  EXPECT_EQ(score_baseline(Rule::MaxMargin, s, a, 1, in), 0.0);
  EXPECT_LT(score_baseline(Rule::MaxMargin, s, a, 2, in), 0.0);
  EXPECT_NEAR(score_baseline(Rule::LeastConfidence, s, a, 2, in), -0.9, 1e-15);
  EXPECT_GT(score_baseline(Rule::LeastConfidence, s, a, 0, in), score_baseline(Rule::LeastConfidence, s, a, 2, in));
  EXPECT_THROW(score_baseline(Rule::MaxEntropy, s, a, 0), InputError);
  EXPECT_THROW(score_baseline(Rule::InformationDensity, s, a, 0), InputError);
}

TEST(ScoreBaseline, InformationDensity) {
  std::vector<Point> pts = {Point::embedded(0, Vector::Unit(2, 0)), Point::embedded(1, Vector::Ones(2)),
                            Point::embedded(2, Vector::Unit(2, 1))};
  const SoftmaxTable t = table({{0.5, 0.5}, {0.25, 0.75}, {0.5, 0.5}});
  const PosteriorState s(gram(KernelSpec::embedding(), pts).entries, NoiseModel::homoscedastic(0.1));
  SelectionInputs in{&pts, &t};
  const std::vector<Index> a{0};
  const double h = -(0.25 * std::log(0.25) + 0.75 * std::log(0.75));
  EXPECT_NEAR(score_baseline(Rule::InformationDensity, s, a, 1, in), h / std::sqrt(2.0), 1e-12);
  EXPECT_EQ(score_baseline(Rule::InformationDensity, s, a, 2, in), 0.0);
  Policy p;
  p.rule = Rule::InformationDensity;
  p.density_beta = 2.0;
  Rng rng(0);
  const std::vector<Index> cand{1};
  EXPECT_NEAR(select_batch(s, a, cand, p, in, rng).objectives[0], h * 0.5, 1e-12);
}

TEST(ScoreBaseline, CosineSimilarityUsesEmbeddingsOrPriorCorrelation) {
  std::vector<Point> pts = {Point::embedded(0, Vector::Unit(2, 0)), Point::embedded(1, Vector::Unit(2, 1)),
                            Point::embedded(2, Vector::Ones(2))};
  Matrix k = Matrix::Identity(3, 3);
  k(0, 2) = k(2, 0) = 0.3;
  const PosteriorState s(k, NoiseModel::homoscedastic(0.1));
  const SelectionInputs in{&pts, nullptr};
  const std::vector<Index> a{0, 1};
  EXPECT_NEAR(score_baseline(Rule::CosineSimilarity, s, a, 2, in), 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(score_baseline(Rule::CosineSimilarity, s, a, 2), 0.15, 1e-12);
}

TEST(ScoreBaseline, UncertaintyAndUndirected) {
  Matrix k = Matrix::Identity(2, 2) * 2.0;
  const PosteriorState s(k, NoiseModel::homoscedastic(0.5));
  const std::vector<Index> a{0};
  EXPECT_DOUBLE_EQ(score_baseline(Rule::UncertaintySampling, s, a, 1), 2.0);
  EXPECT_NEAR(score_baseline(Rule::UndirectedITL, s, a, 1), 0.5 * std::log(5.0), 1e-15);
  EXPECT_EQ(score_baseline(Rule::Random, s, a, 1), 0.0);
}

TEST(ScoreBaseline, MaxDistIdentityGram) {
  const PosteriorState s(Matrix::Identity(5, 5), NoiseModel::homoscedastic(0.1));
  const auto all = iota(5);
  const BatchResult r = select_batch(s, all, all, exact(Rule::MaxDist, 4));
  EXPECT_EQ(r.indices, (std::vector<Index>{0, 1, 2, 3}));
  EXPECT_DOUBLE_EQ(r.objectives[0], 1.0);
  for (std::size_t i = 1; i < 4; ++i) EXPECT_NEAR(std::sqrt(r.objectives[i]), std::sqrt(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(scores::kernel_distance_sq(Matrix::Identity(3, 3), 0, 2), 2.0);
}

TEST(ScoreBaseline, MaxDistMeasuresAgainstHistory) {
  Matrix k = Matrix::Identity(3, 3);
  PosteriorState s(k, NoiseModel::homoscedastic(1e-6));
  s.observe(0, 0.0);
  const std::vector<Index> a{0};
  const double var0 = marginal_variance(s, 0);
  EXPECT_NEAR(score_baseline(Rule::MaxDist, s, a, 1), 1.0 + var0, 1e-15);
  EXPECT_NEAR(score_baseline(Rule::MaxDist, s, a, 0), 0.0, 1e-15);
}

TEST(SelectBatch, SizeOneModesAgree) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const PosteriorState s(oracle::random_gram(12, rng, 0.3), NoiseModel::homoscedastic(0.1));
    const auto cand = iota(8);
    const std::vector<Index> targets{8, 9, 10, 11};
    for (Rule rule : {Rule::ITL, Rule::CTL, Rule::UncertaintySampling, Rule::UndirectedITL, Rule::MaxDist,
                      Rule::CosineSimilarity}) {
      Policy bace;
      bace.rule = rule;
      Policy topb = bace;
      topb.batch_mode = BatchMode::TopB;
      const BatchResult x = select_batch(s, targets, cand, bace);
      const BatchResult y = select_batch(s, targets, cand, topb);
      EXPECT_EQ(x.indices, y.indices);
      EXPECT_EQ(x.objectives, y.objectives);
    }
  }
}

TEST(SelectBatch, IdentityGramTiesGoToLowestIndex) {
  const PosteriorState s(Matrix::Identity(6, 6), NoiseModel::homoscedastic(0.1));
  const std::vector<Index> cand{5, 3, 1, 0, 2, 4};
  for (bool stabilize : {true, false}) {
    for (BatchMode mode : {BatchMode::BaCE, BatchMode::TopB}) {
      Policy p;
      p.batch_size = 3;
      p.batch_mode = mode;
      p.stabilize = stabilize;
      EXPECT_EQ(select_batch(s, iota(6), cand, p).indices, (std::vector<Index>{0, 1, 2}));
    }
  }
}

TEST(SelectBatch, BaceWithinFactorOfOptimum) {
  std::mt19937_64 rng(10);
  const double factor = 1.0 - std::exp(-1.0);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix k = (trial % 2 == 0) ? oracle::random_gram(12, rng, 0.3) : oracle::random_wishart(12, 4, rng);
    const PosteriorState s(k, NoiseModel::homoscedastic(0.1));
    const auto targets = iota(12);
    const auto cand = iota(8, 2);
    const BatchResult greedy = select_batch(s, targets, cand, exact(Rule::ITL, 3));
    const BatchResult best = brute_force_batch(s, targets, cand, 3);
    const double value = batch_information_gain(s, targets, greedy.indices);
    EXPECT_GE(value, factor * best.objectives[0] - 1e-9);
    EXPECT_LE(value, best.objectives[0] + 1e-9);
    std::vector<std::size_t> b(best.indices.begin(), best.indices.end()), t(targets.begin(), targets.end());
    EXPECT_NEAR(best.objectives[0], oracle::mutual_information(k, t, b, {0.1, 0.1, 0.1}), 1e-8);
  }
}

TEST(SelectBatch, BaceObjectivesNonIncreasingWhenSampleInTargets) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    PosteriorState s(oracle::random_gram(20, rng, 0.25), NoiseModel::homoscedastic(0.05));
    s.observe(3, 0.1);
    const auto targets = iota(20);
    const auto cand = iota(10, 5);
    const BatchResult r = select_batch(s, targets, cand, exact(Rule::ITL, 6));
    for (std::size_t i = 1; i < r.objectives.size(); ++i) EXPECT_LE(r.objectives[i], r.objectives[i - 1] + 1e-12);
    // Step objectives are the chain-rule increments of the batch value.
    double sum = 0.0;
    for (double v : r.objectives) sum += v;
    EXPECT_NEAR(sum, batch_information_gain(s, targets, r.indices), 1e-8);
  }
}

TEST(SelectBatch, StabilizedScoresMatchNoisyTargetInformation) {
  std::mt19937_64 rng(14);
  const Matrix k = oracle::random_gram(6, rng);
  const PosteriorState s(k, NoiseModel::homoscedastic(0.2));
  const std::vector<Index> targets{0, 1};
  const std::vector<Index> cand{4};
  Policy p;
  const double got = select_batch(s, targets, cand, p).objectives[0];
  Matrix aug = Matrix::Zero(8, 8);
  aug.topLeftCorner(6, 6) = k;
  for (Eigen::Index i = 0; i < 2; ++i) {
    aug.row(6 + i).head(6) = k.row(i);
    aug.col(6 + i).head(6) = k.col(i);
    for (Eigen::Index j = 0; j < 2; ++j) aug(6 + i, 6 + j) = k(i, j);
    aug(6 + i, 6 + i) += 0.2;
  }
  EXPECT_NEAR(got, oracle::mutual_information(aug, {6, 7}, {4}, {0.2}), 1e-8);
  EXPECT_LT(got, score_itl(s, targets, 4));
}

TEST(SelectBatch, ItlEqualsUncertaintySamplingWhenSampleIsTargets) {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix k = (trial % 2 == 0) ? oracle::random_gram(25, rng, 0.2) : oracle::random_wishart(25, 6, rng);
    PosteriorState a(k, NoiseModel::homoscedastic(0.1));
    PosteriorState b = a;
    const auto all = iota(25);
    for (int n = 0; n < 30; ++n) {
      const Index x = select_batch(a, all, all, exact(Rule::ITL)).indices[0];
      const Index y = select_batch(b, all, all, exact(Rule::UncertaintySampling)).indices[0];
      ASSERT_EQ(x, y) << "round " << n;
      a.observe(x, 0.0);
      b.observe(y, 0.0);
    }
  }
}

TEST(SelectBatch, ItlCtlCosineShareArgmax) {
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 30; ++trial) {
    const auto pts = unit_embeddings(12, 4, rng);
    const PosteriorState s(gram(KernelSpec::embedding(), pts).entries, NoiseModel::homoscedastic(0.1));
    const std::vector<Index> target{0};
    const auto cand = iota(11, 1);
    const SelectionInputs in{&pts, nullptr};
    Rng r1(0), r2(0), r3(0);
    const Index itl = select_batch(s, target, cand, exact(Rule::ITL), in, r1).indices[0];
    const Index ctl = select_batch(s, target, cand, exact(Rule::CTL), in, r2).indices[0];
    const Index cos = select_batch(s, target, cand, exact(Rule::CosineSimilarity), in, r3).indices[0];
    EXPECT_EQ(itl, ctl);
    EXPECT_EQ(itl, cos);
  }
}

TEST(SelectBatch, DeterministicForSeed) {
  std::mt19937_64 rng(20);
  const PosteriorState s(oracle::random_gram(30, rng), NoiseModel::homoscedastic(0.1));
  const auto cand = iota(25);
  const std::vector<Index> targets{25, 26, 27, 28, 29};
  for (Rule rule : {Rule::ITL, Rule::KMeansPP, Rule::Random, Rule::MaxDist}) {
    Policy p;
    p.rule = rule;
    p.batch_size = 5;
    p.seed = 99;
    EXPECT_EQ(select_batch(s, targets, cand, p).indices, select_batch(s, targets, cand, p).indices);
    EXPECT_EQ(select_batch(s, targets, cand, p).objectives, select_batch(s, targets, cand, p).objectives);
  }
}

TEST(SelectBatch, NoDuplicatesUnlessMultiset) {
  std::mt19937_64 rng(22);
  Matrix k = oracle::random_gram(6, rng);
  const PosteriorState s(k, NoiseModel::homoscedastic(1.0));
  const std::vector<Index> targets{0};
  const std::vector<Index> cand{0, 1, 2};
  for (Rule rule : {Rule::ITL, Rule::UncertaintySampling, Rule::Random, Rule::KMeansPP, Rule::MaxDist}) {
    for (BatchMode mode : {BatchMode::BaCE, BatchMode::TopB}) {
      Policy p;
      p.rule = rule;
      p.batch_mode = mode;
      p.batch_size = 3;
      const auto r = select_batch(s, targets, cand, p);
      EXPECT_EQ(std::set<Index>(r.indices.begin(), r.indices.end()).size(), 3u);
      p.batch_size = 4;
      EXPECT_THROW(select_batch(s, targets, cand, p), InputError);
      p.multiset = true;
      EXPECT_EQ(select_batch(s, targets, cand, p).indices.size(), 4u);
    }
  }
}

TEST(SelectBatch, MultisetRepeatsTheBestPointInBace) {
  // With A = {0} and only point 0 informative, repeated measurements of 0
  // beat any other point.
  Matrix k = Matrix::Identity(3, 3);
  const PosteriorState s(k, NoiseModel::homoscedastic(1.0));
  Policy p = exact(Rule::ITL, 3);
  p.multiset = true;
  const auto r = select_batch(s, std::vector<Index>{0}, iota(3), p);
  EXPECT_EQ(r.indices, (std::vector<Index>{0, 0, 0}));
  EXPECT_NEAR(r.objectives[1], 0.5 * std::log1p(0.5), 1e-12);
}

TEST(SelectBatch, Errors) {
  const PosteriorState s(Matrix::Identity(3, 3), NoiseModel::homoscedastic(1.0));
  const std::vector<Index> a{0};
  EXPECT_THROW(select_batch(s, a, std::vector<Index>{}, Policy{}), InputError);
  EXPECT_THROW(select_batch(s, std::vector<Index>{}, a, Policy{}), InputError);
  EXPECT_THROW(select_batch(s, a, std::vector<Index>{7}, Policy{}), InputError);
  EXPECT_THROW(select_batch(s, std::vector<Index>{7}, a, Policy{}), InputError);
  Policy p;
  p.rule = Rule::MaxMargin;
  EXPECT_THROW(select_batch(s, a, a, p), InputError);
}

TEST(SelectBatch, RandomIsUniform) {
  const PosteriorState s(Matrix::Identity(10, 10), NoiseModel::homoscedastic(1.0));
  const auto all = iota(10);
  Policy p;
  p.rule = Rule::Random;
  p.batch_size = 2;
  Rng rng(5);
  std::vector<int> counts(10, 0);
  for (int t = 0; t < 5000; ++t) {
    for (Index i : select_batch(s, all, all, p, {}, rng).indices) ++counts[i];
  }
  for (int c : counts) EXPECT_NEAR(c, 1000, 150);
}

TEST(SelectBatch, KMeansPlusPlusAvoidsObservedPoints) {
  Matrix k = Matrix::Identity(6, 6);
  k(0, 1) = k(1, 0) = 1.0;
  PosteriorState s(k, NoiseModel::homoscedastic(1e-9));
  s.observe(0, 0.0);
  Policy p;
  p.rule = Rule::KMeansPP;
  p.batch_size = 2;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    p.seed = seed;
    for (Index x : select_batch(s, iota(6), iota(6), p).indices) {
      EXPECT_NE(x, 0u);
      EXPECT_NE(x, 1u);
    }
  }
}

TEST(SelectBatch, KMeansPlusPlusFirstPickUniformWithoutHistory) {
  const PosteriorState s(Matrix::Identity(4, 4), NoiseModel::homoscedastic(1.0));
  Policy p;
  p.rule = Rule::KMeansPP;
  std::set<Index> seen;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    p.seed = seed;
    seen.insert(select_batch(s, iota(4), iota(4), p).indices[0]);
  }
  EXPECT_EQ(seen.size(), 4u);
}

TEST(BruteForceBatch, Basics) {
  std::mt19937_64 rng(24);
  const PosteriorState s(oracle::random_gram(10, rng, 0.3), NoiseModel::homoscedastic(0.1));
  const std::vector<Index> targets{8, 9};
  const auto cand = iota(8);
  const auto one = brute_force_batch(s, targets, cand, 1);
  Index best = 0;
  for (Index x : cand) {
    if (score_itl(s, targets, x) > score_itl(s, targets, best)) best = x;
  }
  EXPECT_EQ(one.indices, std::vector<Index>{best});
  EXPECT_NEAR(one.objectives[0], score_itl(s, targets, best), 1e-9);
  EXPECT_EQ(brute_force_batch(s, targets, cand, 8).indices, cand);
  EXPECT_THROW(brute_force_batch(s, targets, cand, 9), InputError);
  EXPECT_THROW(brute_force_batch(s, targets, cand, 0), InputError);
}

TEST(BruteForceBatch, CombinatorialLimit) {
  const PosteriorState s(Matrix::Identity(40, 40), NoiseModel::homoscedastic(1.0));
  EXPECT_EQ(binomial(40, 4), 91390u);
  EXPECT_NO_THROW(brute_force_batch(s, std::vector<Index>{0}, iota(40), 1));
  EXPECT_THROW(brute_force_batch(s, std::vector<Index>{0}, iota(40), 5), InputError);
}

TEST(SubsampleTargets, Basics) {
  Rng rng(1);
  const std::vector<Index> full{4, 8, 15, 16};
  auto all = subsample_targets(full, 4, rng);
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, full);
  EXPECT_EQ(subsample_targets(std::vector<Index>{7}, 1, rng), std::vector<Index>{7});
  EXPECT_THROW(subsample_targets(full, 5, rng), InputError);
  EXPECT_THROW(subsample_targets(full, 0, rng), InputError);
  const auto some = subsample_targets(full, 3, rng);
  EXPECT_EQ(std::set<Index>(some.begin(), some.end()).size(), 3u);
}

TEST(SubsampleTargets, EveryTargetDrawnOftenEnough) {
  const std::size_t size = 20, m = 3, n = 2000;
  const double nu = 1.0 - std::pow(1.0 - 1.0 / static_cast<double>(size), static_cast<double>(m));
  Rng rng(3);
  const auto full = iota(size);
  std::vector<int> counts(size, 0);
  for (std::size_t t = 0; t < n; ++t) {
    for (Index a : subsample_targets(full, m, rng)) ++counts[a];
  }
  for (int c : counts) EXPECT_GE(c, static_cast<double>(n) * nu / 2.0);
}

class ZeroOracle : public LabelOracle {
 public:
  double label(Index) override { return 0.0; }
};

class MissingOracle : public LabelOracle {
 public:
  double label(Index i) override { throw DataError("no label for " + std::to_string(i)); }
};

TEST(RunLoop, ZeroRoundsReportsPriorOnly) {
  const PosteriorState s(Matrix::Identity(4, 4) * 2.0, NoiseModel::homoscedastic(1.0));
  LoopSetup setup;
  setup.targets = {0, 1};
  setup.sample = {2, 3};
  setup.truth = Vector::Ones(4);
  ZeroOracle o;
  const RunRecord r = run_loop(s, setup, Policy{}, o, 0);
  EXPECT_TRUE(r.rounds.empty());
  EXPECT_EQ(r.initial.round, 0u);
  EXPECT_DOUBLE_EQ(r.initial.mean_variance, 2.0);
  EXPECT_DOUBLE_EQ(r.initial.max_variance, 2.0);
  EXPECT_DOUBLE_EQ(*r.initial.rmse, 1.0);
  EXPECT_EQ(r.version, "v1");
}

TEST(RunLoop, RetrievalCountsDistinctRelevantPoints) {
  Matrix k = Matrix::Identity(3, 3);
  const PosteriorState s(k, NoiseModel::homoscedastic(1.0));
  LoopSetup setup;
  setup.targets = {0};
  setup.sample = {0, 1, 2};
  setup.relevant = {0};
  ZeroOracle o;
  const RunRecord r = run_loop(s, setup, exact(Rule::ITL), o, 3);
  ASSERT_EQ(r.rounds.size(), 3u);
  for (const auto& e : r.rounds) {
    EXPECT_EQ(e.chosen, std::vector<Index>{0});
    EXPECT_EQ(e.relevant, std::vector<bool>{true});
    EXPECT_EQ(e.retrieved, 1u);
    EXPECT_FALSE(e.wall_time.has_value());
  }
  EXPECT_NEAR(r.rounds[2].mean_variance, 0.25, 1e-12);
  EXPECT_EQ(r.rounds[2].round, 3u);
}

TEST(RunLoop, DeterministicAndBatchCapped) {
  std::mt19937_64 rng(26);
  const PosteriorState s(oracle::random_gram(30, rng, 0.3), NoiseModel::homoscedastic(0.1));
  LoopSetup setup;
  setup.targets = iota(10);
  setup.sample = iota(20, 10);
  setup.candidate_count = 4;
  Policy p;
  p.batch_size = 6;
  p.target_subsample = 3;
  p.seed = 8;
  ZeroOracle o;
  const RunRecord a = run_loop(s, setup, p, o, 5);
  const RunRecord b = run_loop(s, setup, p, o, 5);
  EXPECT_EQ(a, b);
  for (const auto& e : a.rounds) {
    EXPECT_EQ(e.chosen.size(), 4u);
    for (Index x : e.chosen) EXPECT_GE(x, 10u);
  }
  for (std::size_t i = 1; i < a.rounds.size(); ++i) {
    EXPECT_LE(a.rounds[i].max_variance, a.rounds[i - 1].max_variance + 1e-12);
  }
}

TEST(RunLoop, ItlReducesTargetVarianceFasterThanRandom) {
  std::mt19937_64 rng(28);
  int wins = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const PosteriorState s(oracle::random_gram(60, rng, 0.15), NoiseModel::homoscedastic(0.1));
    LoopSetup setup;
    setup.targets = iota(5);
    setup.sample = iota(55, 5);
    ZeroOracle o;
    Policy itl;
    Policy rnd;
    rnd.rule = Rule::Random;
    rnd.seed = static_cast<std::uint64_t>(trial);
    const double a = run_loop(s, setup, itl, o, 10).rounds.back().mean_variance;
    const double b = run_loop(s, setup, rnd, o, 10).rounds.back().mean_variance;
    if (a < b) ++wins;
  }
  EXPECT_GE(wins, 9);
}

TEST(RunLoop, MissingLabelAborts) {
  const PosteriorState s(Matrix::Identity(3, 3), NoiseModel::homoscedastic(1.0));
  LoopSetup setup;
  setup.targets = {0};
  setup.sample = {1, 2};
  MissingOracle o;
  EXPECT_THROW(run_loop(s, setup, Policy{}, o, 1), DataError);
  setup.sample = {};
  EXPECT_THROW(run_loop(s, setup, Policy{}, o, 1), InputError);
}

TEST(RunLoop, WallTimeOptional) {
  const PosteriorState s(Matrix::Identity(3, 3), NoiseModel::homoscedastic(1.0));
  LoopSetup setup;
  setup.targets = {0};
  setup.sample = {1, 2};
  setup.record_wall_time = true;
  ZeroOracle o;
  const RunRecord r = run_loop(s, setup, Policy{}, o, 2);
  for (const auto& e : r.rounds) {
    ASSERT_TRUE(e.wall_time.has_value());
    EXPECT_GE(*e.wall_time, 0.0);
  }
}

}  // namespace
}  // namespace transduct
