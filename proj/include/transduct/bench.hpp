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

// Experiment harness: run configuration, domain construction, the run /
// theory / markov / ablate commands and metric aggregation.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "transduct/error.hpp"
#include "transduct/io.hpp"
#include "transduct/kernel.hpp"
#include "transduct/loop.hpp"
#include "transduct/posterior.hpp"
#include "transduct/selection.hpp"
#include "transduct/theory.hpp"

namespace transduct::bench {

using json = nlohmann::json;

/// Round-loop hyperparameters: candidates per round k, targets per round m,
/// size M of the target sample, batch size b and noise standard deviation.
struct Hyper {
  std::optional<std::size_t> k;
  std::optional<std::size_t> m;
  std::optional<std::size_t> M;
  std::size_t b = 1;
  double rho = 1.0;
};

inline const std::map<std::string, Hyper>& presets() {
  static const std::map<std::string, Hyper> table = {
      {"mnist-like", Hyper{1000, 3, 30, 1, 0.01}},
      {"cifar-like", Hyper{1000, 10, 100, 10, 1.0}},
  };
  return table;
}

struct PolicySpec {
  std::string label;
  Policy policy;
};

struct RunConfig {
  /// Config after preset and command-line overrides.
  json snapshot;
  std::filesystem::path base_dir;
  std::string name = "run";
  std::optional<std::string> preset;
  Hyper hyper;
  std::vector<PolicySpec> policies;
  std::size_t rounds = 0;
  std::vector<std::uint64_t> seeds;
  bool record_wall_time = false;
};

/// A finite domain: points, kernel, and the index sets over positions.
struct Domain {
  std::vector<Point> points;
  KernelSpec kernel;
  std::vector<Index> sample;
  std::vector<Index> targets;
  std::vector<Index> relevant;
  std::optional<Vector> truth;
  std::optional<std::unordered_map<Index, double>> labels;
  std::optional<SoftmaxTable> softmax;
};

using Logger = std::function<void(const std::string&)>;

namespace detail {

enum class Purpose : std::uint64_t { Domain = 1, Truth = 2, Oracle = 3, Policy = 4, Targets = 5 };

/// Independent seed per (run seed, purpose).
inline std::uint64_t derive_seed(std::uint64_t seed, Purpose purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline const json& require(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) throw ConfigError(path + key, "missing required field");
  return obj.at(key);
}

template <typename T>
T get_as(const json& v, const std::string& field) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(field, "has the wrong type");
  }
}

inline double get_positive(const json& v, const std::string& field) {
  const double d = get_as<double>(v, field);
  if (!(d > 0.0) || !std::isfinite(d)) throw ConfigError(field, "must be a positive number");
  return d;
}

inline std::size_t get_count(const json& v, const std::string& field, std::size_t min = 1) {
  if (!v.is_number_integer() || v.get<long long>() < static_cast<long long>(min)) {
    throw ConfigError(field, "must be an integer >= " + std::to_string(min));
  }
  return v.get<std::size_t>();
}

inline void apply_hyper(Hyper& h, const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "must be an object");
  for (const auto& [key, value] : j.items()) {
    const std::string field = path + "." + key;
    if (key == "k") {
      h.k = get_count(value, field);
    } else if (key == "m") {
      h.m = get_count(value, field);
    } else if (key == "M") {
      h.M = get_count(value, field);
    } else if (key == "b") {
      h.b = get_count(value, field);
    } else if (key == "rho") {
      h.rho = get_positive(value, field);
    } else {
      throw ConfigError(field, "unknown hyperparameter");
    }
  }
}

inline std::vector<double> vector_or_scalar(const json& v, std::size_t dim, const std::string& field) {
  if (v.is_number()) return std::vector<double>(dim, get_as<double>(v, field));
  auto out = get_as<std::vector<double>>(v, field);
  if (out.size() != dim) throw ConfigError(field, "must have " + std::to_string(dim) + " entries");
  return out;
}

// Generates points from {"generator": uniform|grid|points, ...}.
inline std::vector<Vector> generate_points(const json& spec, const std::string& path, std::mt19937_64& rng) {
  const std::string gen = get_as<std::string>(require(spec, "generator", path + "."), path + ".generator");
  if (gen == "points") {
    const auto rows = get_as<std::vector<std::vector<double>>>(require(spec, "points", path + "."), path + ".points");
    if (rows.empty()) throw ConfigError(path + ".points", "must be nonempty");
    std::vector<Vector> out;
    for (const auto& r : rows) {
      if (r.size() != rows.front().size() || r.empty()) throw ConfigError(path + ".points", "rows must share one dimension");
      out.push_back(Eigen::Map<const Vector>(r.data(), static_cast<Eigen::Index>(r.size())));
    }
    return out;
  }
  const std::size_t dim = spec.contains("dim") ? get_count(spec.at("dim"), path + ".dim") : 1;
  const std::size_t count = get_count(require(spec, "count", path + "."), path + ".count");
  const auto low = spec.contains("low") ? vector_or_scalar(spec.at("low"), dim, path + ".low") : std::vector<double>(dim, 0.0);
  const auto high = spec.contains("high") ? vector_or_scalar(spec.at("high"), dim, path + ".high") : std::vector<double>(dim, 1.0);
  for (std::size_t d = 0; d < dim; ++d) {
    if (!(low[d] < high[d])) throw ConfigError(path + ".low", "must be below high in every coordinate");
  }
  std::vector<Vector> out;
  if (gen == "uniform") {
    for (std::size_t i = 0; i < count; ++i) {
      Vector v(static_cast<Eigen::Index>(dim));
      for (std::size_t d = 0; d < dim; ++d) v(static_cast<Eigen::Index>(d)) = std::uniform_real_distribution<double>(low[d], high[d])(rng);
      out.push_back(v);
    }
  } else if (gen == "grid") {
    // `count` points per axis, endpoints included.
    std::size_t total = 1;
    for (std::size_t d = 0; d < dim; ++d) total *= count;
    if (total > 100000) throw ConfigError(path + ".count", "grid has more than 1e5 points");
    for (std::size_t flat = 0; flat < total; ++flat) {
      Vector v(static_cast<Eigen::Index>(dim));
      std::size_t rest = flat;
      for (std::size_t d = 0; d < dim; ++d) {
        const std::size_t i = rest % count;
        rest /= count;
        const double t = count == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(count - 1);
        v(static_cast<Eigen::Index>(d)) = low[d] + t * (high[d] - low[d]);
      }
      out.push_back(v);
    }
  } else {
    throw ConfigError(path + ".generator", "unknown generator '" + gen + "'");
  }
  return out;
}

inline KernelSpec parse_kernel(const json& j, const std::string& path) {
  const std::string family = get_as<std::string>(require(j, "family", path + "."), path + ".family");
  const double h = j.contains("lengthscale") ? get_positive(j.at("lengthscale"), path + ".lengthscale") : 1.0;
  try {
    KernelSpec spec;
    if (family == "linear") {
      spec = KernelSpec::linear();
    } else if (family == "gaussian") {
      spec = KernelSpec::gaussian(h);
    } else if (family == "laplace") {
      spec = KernelSpec::laplace(h);
    } else if (family == "matern") {
      const double nu = j.contains("nu") ? get_as<double>(j.at("nu"), path + ".nu") : 1.5;
      spec = KernelSpec::matern(nu, h);
    } else if (family == "embedding") {
      std::optional<Matrix> sigma;
      if (j.contains("sigma")) {
        const auto rows = get_as<std::vector<std::vector<double>>>(j.at("sigma"), path + ".sigma");
        Matrix s(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
          if (rows[r].size() != rows.size()) throw ConfigError(path + ".sigma", "must be square");
          for (std::size_t c = 0; c < rows.size(); ++c) s(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
        sigma = s;
      }
      spec = KernelSpec::embedding(sigma);
    } else {
      throw ConfigError(path + ".family", "unknown kernel family '" + family + "'");
    }
    spec.validate();
    return spec;
  } catch (const ConfigError&) {
    throw;
  } catch (const InputError& e) {
    throw ConfigError(path, e.what());
  }
}

inline bool in_box(const Vector& x, const std::vector<double>& low, const std::vector<double>& high) {
  for (Eigen::Index d = 0; d < x.size(); ++d) {
    if (x(d) < low[static_cast<std::size_t>(d)] || x(d) > high[static_cast<std::size_t>(d)]) return false;
  }
  return true;
}

inline Domain synthetic_domain(const json& dj, std::uint64_t seed) {
  Domain dom;
  dom.kernel = parse_kernel(require(dj, "kernel", "domain."), "domain.kernel");
  std::mt19937_64 rng(derive_seed(seed, Purpose::Domain));
  const auto sample_points = generate_points(require(dj, "sample", "domain."), "domain.sample", rng);
  const std::size_t dim = static_cast<std::size_t>(sample_points.front().size());
  for (const auto& v : sample_points) {
    dom.sample.push_back(dom.points.size());
    dom.points.push_back(Point{dom.points.size(), v, std::nullopt});
  }
  const json& tj = require(dj, "targets", "domain.");
  const std::string mode = tj.contains("mode") ? get_as<std::string>(tj.at("mode"), "domain.targets.mode") : "disjoint";
  if (mode == "same_as_sample") {
    dom.targets = dom.sample;
  } else if (mode == "disjoint" || mode == "sample_plus") {
    const auto extra = generate_points(tj, "domain.targets", rng);
    if (mode == "sample_plus") dom.targets = dom.sample;
    for (const auto& v : extra) {
      if (static_cast<std::size_t>(v.size()) != dim) throw ConfigError("domain.targets", "dimension differs from the sample space");
      dom.targets.push_back(dom.points.size());
      dom.points.push_back(Point{dom.points.size(), v, std::nullopt});
    }
  } else {
    throw ConfigError("domain.targets.mode", "must be disjoint, same_as_sample or sample_plus");
  }
  if (dj.contains("relevant")) {
    const json& rj = dj.at("relevant");
    const auto low = vector_or_scalar(require(rj, "low", "domain.relevant."), dim, "domain.relevant.low");
    const auto high = vector_or_scalar(require(rj, "high", "domain.relevant."), dim, "domain.relevant.high");
    for (Index s : dom.sample) {
      if (in_box(*dom.points[s].coords, low, high)) dom.relevant.push_back(s);
    }
  }
  return dom;
}

inline std::vector<Index> ids_to_positions(const json& v, const std::unordered_map<Index, Index>& position,
                                           const std::string& field) {
  std::vector<Index> out;
  for (const auto id : get_as<std::vector<Index>>(v, field)) {
    auto it = position.find(id);
    if (it == position.end()) throw ConfigError(field, "id " + std::to_string(id) + " is not in the embedding file");
    out.push_back(it->second);
  }
  return out;
}

inline Domain embedding_domain(const json& dj, const std::filesystem::path& base) {
  Domain dom;
  dom.kernel = dj.contains("kernel") ? parse_kernel(dj.at("kernel"), "domain.kernel") : KernelSpec::embedding();
  const auto path = base / get_as<std::string>(require(dj, "embeddings", "domain."), "domain.embeddings");
  if (!std::filesystem::exists(path)) throw ConfigError("domain.embeddings", "file not found: " + path.string());
  std::vector<Point> file_points = load_embeddings(path);
  std::unordered_map<Index, Index> position;
  for (std::size_t i = 0; i < file_points.size(); ++i) {
    position.emplace(file_points[i].index, i);
    file_points[i].index = i;
  }
  dom.points = std::move(file_points);
  dom.targets = ids_to_positions(require(dj, "target_ids", "domain."), position, "domain.target_ids");
  if (dj.contains("sample_ids")) {
    dom.sample = ids_to_positions(dj.at("sample_ids"), position, "domain.sample_ids");
  } else {
    for (Index i = 0; i < dom.points.size(); ++i) {
      if (std::find(dom.targets.begin(), dom.targets.end(), i) == dom.targets.end()) dom.sample.push_back(i);
    }
  }
  if (dj.contains("relevant_ids")) dom.relevant = ids_to_positions(dj.at("relevant_ids"), position, "domain.relevant_ids");
  if (dj.contains("labels")) {
    const auto lp = base / get_as<std::string>(dj.at("labels"), "domain.labels");
    if (!std::filesystem::exists(lp)) throw ConfigError("domain.labels", "file not found: " + lp.string());
    std::unordered_map<Index, double> by_position;
    for (const auto& [id, y] : load_labels(lp)) {
      auto it = position.find(id);
      if (it != position.end()) by_position.emplace(it->second, y);
    }
    dom.labels = std::move(by_position);
  }
  if (dj.contains("softmax")) {
    const auto sp = base / get_as<std::string>(dj.at("softmax"), "domain.softmax");
    if (!std::filesystem::exists(sp)) throw ConfigError("domain.softmax", "file not found: " + sp.string());
    SoftmaxTable table = load_softmax(sp);
    SoftmaxTable aligned;
    aligned.probs = table.probs;
    for (Index id : table.ids) {
      auto it = position.find(id);
      if (it == position.end()) throw ConfigError("domain.softmax", "id " + std::to_string(id) + " is not in the embedding file");
      aligned.ids.push_back(it->second);
    }
    aligned.validate();
    dom.softmax = std::move(aligned);
  }
  return dom;
}

}  // namespace detail

/// Builds the domain for one run seed; synthetic domains also get a sampled
/// ground truth.
inline Domain build_domain(const RunConfig& cfg, std::uint64_t seed) {
  const json& dj = detail::require(cfg.snapshot, "domain", "");
  const std::string type = detail::get_as<std::string>(detail::require(dj, "type", "domain."), "domain.type");
  Domain dom;
  if (type == "synthetic") {
    dom = detail::synthetic_domain(dj, seed);
    dom.truth = sample_gp_truth(dom.kernel, dom.points, detail::derive_seed(seed, detail::Purpose::Truth)).values;
  } else if (type == "embeddings") {
    dom = detail::embedding_domain(dj, cfg.base_dir);
  } else {
    throw ConfigError("domain.type", "must be synthetic or embeddings");
  }
  if (dom.sample.empty()) throw ConfigError("domain.sample", "sample space is empty");
  if (dom.targets.empty()) throw ConfigError("domain.targets", "target space is empty");
  if (cfg.hyper.M && *cfg.hyper.M < dom.targets.size()) {
    std::mt19937_64 rng(detail::derive_seed(seed, detail::Purpose::Targets));
    std::vector<Index> kept;
    std::sample(dom.targets.begin(), dom.targets.end(), std::back_inserter(kept), *cfg.hyper.M, rng);
    dom.targets = std::move(kept);
  }
  return dom;
}

/// Parses a config object. `base_dir` resolves relative file paths.
/// Precedence: built-in defaults, then the preset, then explicit fields.
inline RunConfig parse_config(json j, const std::filesystem::path& base_dir = {},
                              std::optional<std::string> preset_override = std::nullopt,
                              std::optional<std::vector<std::uint64_t>> seeds_override = std::nullopt) {
  if (!j.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  RunConfig cfg;
  cfg.base_dir = base_dir;
  if (preset_override) j["preset"] = *preset_override;
  if (seeds_override) j["seeds"] = *seeds_override;

  static const std::vector<std::string> known = {"name",   "preset",    "domain", "hyper",  "policies",
                                                 "rounds", "seeds",     "stabilize", "multiset", "density_beta",
                                                 "record_wall_time", "theory", "markov", "ablate"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError(key, "unknown field");
  }
  if (j.contains("name")) cfg.name = detail::get_as<std::string>(j.at("name"), "name");
  if (j.contains("preset")) {
    cfg.preset = detail::get_as<std::string>(j.at("preset"), "preset");
    auto it = presets().find(*cfg.preset);
    if (it == presets().end()) throw ConfigError("preset", "unknown preset '" + *cfg.preset + "'");
    cfg.hyper = it->second;
  }
  if (j.contains("hyper")) detail::apply_hyper(cfg.hyper, j.at("hyper"), "hyper");

  cfg.rounds = j.contains("rounds") ? detail::get_count(j.at("rounds"), "rounds", 0) : 0;
  cfg.seeds = j.contains("seeds") ? detail::get_as<std::vector<std::uint64_t>>(j.at("seeds"), "seeds")
                                  : std::vector<std::uint64_t>{0};
  if (cfg.seeds.empty()) throw ConfigError("seeds", "must be nonempty");
  cfg.record_wall_time = j.contains("record_wall_time") && detail::get_as<bool>(j.at("record_wall_time"), "record_wall_time");

  const bool stabilize = j.contains("stabilize") ? detail::get_as<bool>(j.at("stabilize"), "stabilize") : true;
  const bool multiset = j.contains("multiset") && detail::get_as<bool>(j.at("multiset"), "multiset");
  const double beta = j.contains("density_beta") ? detail::get_positive(j.at("density_beta"), "density_beta") : 1.0;

  const json policies = j.contains("policies") ? j.at("policies") : json::array({"ITL"});
  if (!policies.is_array() || policies.empty()) throw ConfigError("policies", "must be a nonempty array");
  for (std::size_t i = 0; i < policies.size(); ++i) {
    const std::string field = "policies[" + std::to_string(i) + "]";
    const json& p = policies[i];
    PolicySpec spec;
    spec.policy.batch_size = cfg.hyper.b;
    spec.policy.target_subsample = cfg.hyper.m;
    spec.policy.noise_var = cfg.hyper.rho * cfg.hyper.rho;
    spec.policy.stabilize = stabilize;
    spec.policy.multiset = multiset;
    spec.policy.density_beta = beta;
    try {
      if (p.is_string()) {
        spec.policy.rule = parse_rule(p.get<std::string>());
        spec.label = p.get<std::string>();
      } else if (p.is_object()) {
        spec.policy.rule = parse_rule(detail::get_as<std::string>(detail::require(p, "rule", field + "."), field + ".rule"));
        spec.label = p.contains("label") ? detail::get_as<std::string>(p.at("label"), field + ".label") : rule_name(spec.policy.rule);
        if (p.contains("batch_mode")) spec.policy.batch_mode = parse_batch_mode(detail::get_as<std::string>(p.at("batch_mode"), field + ".batch_mode"));
        if (p.contains("stabilize")) spec.policy.stabilize = detail::get_as<bool>(p.at("stabilize"), field + ".stabilize");
        if (p.contains("multiset")) spec.policy.multiset = detail::get_as<bool>(p.at("multiset"), field + ".multiset");
        if (p.contains("density_beta")) spec.policy.density_beta = detail::get_positive(p.at("density_beta"), field + ".density_beta");
      } else {
        throw ConfigError(field, "must be a rule name or an object");
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const InputError& e) {
      throw ConfigError(field, e.what());
    }
    if (spec.label.empty() || spec.label.find(',') != std::string::npos || spec.label.find('/') != std::string::npos) {
      throw ConfigError(field + ".label", "must be nonempty without ',' or '/'");
    }
    for (const auto& other : cfg.policies) {
      if (other.label == spec.label) throw ConfigError(field + ".label", "duplicate policy label '" + spec.label + "'");
    }
    cfg.policies.push_back(std::move(spec));
  }
  detail::require(j, "domain", "");
  cfg.snapshot = std::move(j);
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path, std::optional<std::string> preset = std::nullopt,
                             std::optional<std::vector<std::uint64_t>> seeds = std::nullopt) {
  if (!std::filesystem::exists(path)) throw ConfigError("--config", "file not found: " + path.string());
  json j;
  try {
    j = json::parse(io_detail::read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("--config", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(std::move(j), path.parent_path(), std::move(preset), std::move(seeds));
}

/// Runs `count` tasks on up to `jobs` threads; the first exception is
/// rethrown after all threads finish.
inline void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& task) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          task(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (error) std::rethrow_exception(error);
}

/// One (policy, seed) run of the round loop.
inline RunRecord execute_run(const RunConfig& cfg, const PolicySpec& spec, std::uint64_t seed) {
  Domain dom = build_domain(cfg, seed);
  const KernelMatrix k = gram(dom.kernel, dom.points);
  const NoiseModel noise = NoiseModel::homoscedastic(cfg.hyper.rho * cfg.hyper.rho);
  PosteriorState state(k.entries, noise);

  LoopSetup setup;
  setup.targets = dom.targets;
  setup.sample = dom.sample;
  setup.candidate_count = cfg.hyper.k;
  setup.relevant = dom.relevant;
  setup.truth = dom.truth;
  setup.record_wall_time = cfg.record_wall_time;
  setup.inputs.points = &dom.points;
  if (dom.softmax) setup.inputs.softmax = &*dom.softmax;

  Policy policy = spec.policy;
  policy.seed = detail::derive_seed(seed, detail::Purpose::Policy);
  if (policy.target_subsample && *policy.target_subsample > dom.targets.size()) {
    policy.target_subsample = dom.targets.size();
  }
  if (!policy.multiset && policy.batch_size > dom.sample.size()) {
    throw ConfigError("hyper.b", "batch size exceeds the sample space");
  }

  json config = cfg.snapshot;
  config["policy"] = spec.label;
  config["seed"] = seed;

  std::unique_ptr<LabelOracle> oracle;
  if (dom.truth) {
    oracle = std::make_unique<GaussianOracle>(*dom.truth, noise, detail::derive_seed(seed, detail::Purpose::Oracle));
  } else if (dom.labels) {
    oracle = std::make_unique<RecordedOracle>(*dom.labels);
  } else {
    throw ConfigError("domain.labels", "embedding domains need a labels file to run");
  }
  return run_loop(std::move(state), setup, policy, *oracle, cfg.rounds, std::move(config));
}

/// Mean and standard error (sample sd / sqrt(count); 0 for one value).
inline std::pair<double, double> mean_stderr(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return {mean, sd / std::sqrt(static_cast<double>(v.size()))};
}

inline constexpr const char* kSummaryHeader =
    "policy,round,seeds,mean_variance,mean_variance_se,max_variance,max_variance_se,retrieved,retrieved_se,"
    "objective,objective_se,rmse,rmse_se";

/// Aggregates raw rows across seeds per (policy, round), in first-seen
/// policy order.
inline std::string format_summary(std::span<const MetricsRow> rows) {
  std::vector<std::string> order;
  std::map<std::pair<std::string, std::size_t>, std::vector<const MetricsRow*>> cells;
  for (const auto& r : rows) {
    if (std::find(order.begin(), order.end(), r.policy) == order.end()) order.push_back(r.policy);
    cells[{r.policy, r.round}].push_back(&r);
  }
  std::string out = std::string(kSummaryHeader) + "\n";
  auto fmt = io_detail::format_double;
  for (const auto& policy : order) {
    for (const auto& [key, group] : cells) {
      if (key.first != policy) continue;
      std::vector<double> mv, xv, rt, ob, rm;
      for (const auto* r : group) {
        mv.push_back(r->mean_variance);
        xv.push_back(r->max_variance);
        rt.push_back(static_cast<double>(r->retrieved));
        ob.push_back(r->objective);
        if (r->rmse) rm.push_back(*r->rmse);
      }
      const auto [m1, s1] = mean_stderr(mv);
      const auto [m2, s2] = mean_stderr(xv);
      const auto [m3, s3] = mean_stderr(rt);
      const auto [m4, s4] = mean_stderr(ob);
      out += policy + "," + std::to_string(key.second) + "," + std::to_string(group.size()) + "," + fmt(m1) + "," +
             fmt(s1) + "," + fmt(m2) + "," + fmt(s2) + "," + fmt(m3) + "," + fmt(s3) + "," + fmt(m4) + "," + fmt(s4);
      if (rm.size() == group.size()) {
        const auto [m5, s5] = mean_stderr(rm);
        out += "," + fmt(m5) + "," + fmt(s5);
      } else {
        out += ",,";
      }
      out += "\n";
    }
  }
  return out;
}

struct RunOutput {
  std::vector<std::filesystem::path> records;
  std::filesystem::path metrics;
  std::filesystem::path summary;
  std::vector<MetricsRow> rows;
};

/// Executes every (policy, seed) pair and writes records/<policy>_seed<s>.jsonl,
/// metrics.csv and summary.csv under `out_dir`.
inline RunOutput cmd_run(const RunConfig& cfg, const std::filesystem::path& out_dir, std::size_t jobs = 1,
                         const Logger& log = {}) {
  const std::size_t total = cfg.policies.size() * cfg.seeds.size();
  std::vector<RunRecord> records(total);
  parallel_for(total, jobs, [&](std::size_t i) {
    const auto& spec = cfg.policies[i / cfg.seeds.size()];
    const auto seed = cfg.seeds[i % cfg.seeds.size()];
    if (log) log("run " + spec.label + " seed " + std::to_string(seed));
    records[i] = execute_run(cfg, spec, seed);
  });

  RunOutput out;
  std::filesystem::create_directories(out_dir / "records");
  for (std::size_t i = 0; i < total; ++i) {
    const auto& spec = cfg.policies[i / cfg.seeds.size()];
    const auto seed = cfg.seeds[i % cfg.seeds.size()];
    const auto path = out_dir / "records" / (spec.label + "_seed" + std::to_string(seed) + ".jsonl");
    persist_run(records[i], path);
    out.records.push_back(path);
    auto rows = metrics_rows(records[i], spec.label, seed);
    out.rows.insert(out.rows.end(), rows.begin(), rows.end());
  }
  out.metrics = out_dir / "metrics.csv";
  out.summary = out_dir / "summary.csv";
  write_metrics(out.metrics, out.rows);
  io_detail::write_atomic(out.summary, format_summary(out.rows));
  return out;
}

namespace detail {

inline json report_json(const CheckReport& r) {
  json j;
  j["name"] = r.name;
  j["status"] = status_name(r.status);
  if (!r.message.empty()) j["message"] = r.message;
  json rows = json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"round", row.round},
                    {"witness", row.witness},
                    {"lhs", row.lhs},
                    {"rhs_low", std::isfinite(row.rhs_low) ? json(row.rhs_low) : json("inf")},
                    {"rhs_high", std::isfinite(row.rhs_high) ? json(row.rhs_high) : json("inf")},
                    {"exact", row.exact},
                    {"status", status_name(row.status)}});
  }
  j["rows"] = rows;
  if (!r.gap.empty()) j["gap"] = r.gap;
  if (const auto* f = r.first_failure()) j["first_failure_round"] = f->round;
  return j;
}

inline PosteriorState prior_state(const Domain& dom, double rho) {
  return PosteriorState(gram(dom.kernel, dom.points).entries, NoiseModel::homoscedastic(rho * rho));
}

}  // namespace detail

struct TheoryOutput {
  json diagnostics;
  std::filesystem::path path;
  bool any_failure = false;
};

/// Runs the bound checkers on one ITL trajectory (first seed) and writes
/// theory.json. Settings under "theory": rounds, epsilon, ratio_k.
inline TheoryOutput cmd_theory(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  const json tj = cfg.snapshot.contains("theory") ? cfg.snapshot.at("theory") : json::object();
  const std::size_t rounds = tj.contains("rounds") ? detail::get_count(tj.at("rounds"), "theory.rounds", 0) : 6;
  const std::size_t ratio_k = tj.contains("ratio_k") ? detail::get_count(tj.at("ratio_k"), "theory.ratio_k") : 3;

  Domain dom = build_domain(cfg, cfg.seeds.front());
  for (Index s : dom.sample) {
    if (std::find(dom.targets.begin(), dom.targets.end(), s) == dom.targets.end()) {
      throw ConfigError("domain.targets.mode", "theory checks need the sample space inside the target space");
    }
  }
  PosteriorState prior = detail::prior_state(dom, cfg.hyper.rho);
  const auto constants = theory_constants(prior.covariance(), prior.noise(), dom.sample);
  const double eps = tj.contains("epsilon") ? detail::get_positive(tj.at("epsilon"), "theory.epsilon")
                                            : 0.05 * constants.sigma2;

  const Trajectory traj = itl_trajectory(prior, dom.targets, dom.sample, rounds);
  TheoryOutput out;
  json checks = json::array();
  auto add = [&](const CheckReport& r) {
    if (r.status == CheckStatus::Fail) out.any_failure = true;
    checks.push_back(detail::report_json(r));
  };
  add(check_gamma_bound(traj));
  add(check_within_S_bound(traj));
  add(check_variance_bound(traj, eps));
  add(check_rate_schedule(traj));

  json ratio;
  ratio["name"] = "submodularity_ratio";
  if (dom.sample.size() <= 10 && ratio_k <= 4 && ratio_k <= dom.sample.size()) {
    const double kappa = submodularity_ratio(prior, dom.targets, dom.sample, ratio_k);
    ratio["value"] = kappa;
    ratio["k"] = ratio_k;
    const bool ok = kappa >= 1.0 - 1e-9;
    ratio["status"] = ok ? "pass" : "fail";
    if (!ok) out.any_failure = true;
  } else {
    ratio["status"] = "skip";
    ratio["message"] = "enumeration needs |S| <= 10 and k <= 4";
  }
  checks.push_back(ratio);

  out.diagnostics["epsilon"] = eps;
  out.diagnostics["rounds"] = rounds;
  out.diagnostics["constants"] = {{"sigma2", constants.sigma2},
                                  {"sigma_tilde2", constants.sigma_tilde2},
                                  {"lambda_min", constants.lambda_min}};
  out.diagnostics["picks"] = traj.picks;
  out.diagnostics["gamma_step"] = traj.gamma_step;
  out.diagnostics["checks"] = checks;
  out.path = out_dir / "theory.json";
  io_detail::write_atomic(out.path, out.diagnostics.dump(2) + "\n");
  return out;
}

struct MarkovOutput {
  MarkovBoundary boundary;
  std::filesystem::path path;
};

/// Approximate Markov boundary of domain position `x` in S at the prior;
/// writes markov.json.
inline MarkovOutput cmd_markov(const RunConfig& cfg, Index x, double eps, const std::filesystem::path& out_dir) {
  if (!(eps > 0.0)) throw ConfigError("markov.epsilon", "must be positive");
  Domain dom = build_domain(cfg, cfg.seeds.front());
  if (x >= dom.points.size()) throw ConfigError("markov.x", "index outside the domain");
  PosteriorState prior = detail::prior_state(dom, cfg.hyper.rho);
  MarkovOutput out;
  out.boundary = markov_boundary(prior, dom.sample, x, eps);
  json j;
  j["x"] = x;
  j["epsilon"] = eps;
  j["members"] = out.boundary.members;
  j["size"] = out.boundary.members.size();
  j["achieved_variance"] = out.boundary.achieved_variance;
  j["irreducible"] = out.boundary.irreducible;
  j["size_bound"] = out.boundary.size_bound;
  out.path = out_dir / "markov.json";
  io_detail::write_atomic(out.path, j.dump(2) + "\n");
  return out;
}

inline constexpr std::size_t kAblateRunCap = 1000;

struct AblateOutput {
  std::filesystem::path path;
  std::size_t settings = 0;
  std::size_t runs = 0;
};

/// Cross product over "ablate" axes {rho, k, m, M, batch_mode}; one table
/// row per (setting, policy) with final-round mean +- standard error.
inline AblateOutput cmd_ablate(const RunConfig& cfg, const std::filesystem::path& out_dir, std::size_t jobs = 1,
                               const Logger& log = {}) {
  const json grid = cfg.snapshot.contains("ablate") ? cfg.snapshot.at("ablate") : json::object();
  if (!grid.is_object()) throw ConfigError("ablate", "must be an object");
  struct Setting {
    Hyper hyper;
    std::optional<BatchMode> mode;
  };
  std::vector<Setting> settings{{cfg.hyper, std::nullopt}};
  for (const auto& [axis, values] : grid.items()) {
    const std::string field = "ablate." + axis;
    if (!values.is_array() || values.empty()) throw ConfigError(field, "must be a nonempty array");
    std::vector<Setting> next;
    for (const auto& s : settings) {
      for (const auto& v : values) {
        Setting t = s;
        if (axis == "rho") {
          t.hyper.rho = detail::get_positive(v, field);
        } else if (axis == "k") {
          t.hyper.k = detail::get_count(v, field);
        } else if (axis == "m") {
          t.hyper.m = detail::get_count(v, field);
        } else if (axis == "M") {
          t.hyper.M = detail::get_count(v, field);
        } else if (axis == "batch_mode") {
          try {
            t.mode = parse_batch_mode(detail::get_as<std::string>(v, field));
          } catch (const InputError& e) {
            throw ConfigError(field, e.what());
          }
        } else {
          throw ConfigError(field, "unknown ablation axis");
        }
        next.push_back(t);
      }
    }
    settings = std::move(next);
  }
  const std::size_t per_setting = cfg.policies.size() * cfg.seeds.size();
  const std::size_t total = settings.size() * per_setting;
  if (total > kAblateRunCap) {
    throw BudgetError("ablation grid needs " + std::to_string(total) + " runs (limit " +
                      std::to_string(kAblateRunCap) + ")");
  }

  std::vector<RunRecord> records(total);
  parallel_for(total, jobs, [&](std::size_t i) {
    const auto& setting = settings[i / per_setting];
    const std::size_t rest = i % per_setting;
    RunConfig local = cfg;
    local.hyper = setting.hyper;
    PolicySpec spec = cfg.policies[rest / cfg.seeds.size()];
    spec.policy.batch_size = setting.hyper.b;
    spec.policy.target_subsample = setting.hyper.m;
    spec.policy.noise_var = setting.hyper.rho * setting.hyper.rho;
    if (setting.mode) spec.policy.batch_mode = *setting.mode;
    const auto seed = cfg.seeds[rest % cfg.seeds.size()];
    if (log) log("ablate setting " + std::to_string(i / per_setting) + " " + spec.label + " seed " + std::to_string(seed));
    records[i] = execute_run(local, spec, seed);
  });

  auto fmt = io_detail::format_double;
  auto opt = [](const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : std::string("all"); };
  std::string table =
      "rho,k,m,M,b,batch_mode,policy,seeds,mean_variance,mean_variance_se,retrieved,retrieved_se\n";
  for (std::size_t s = 0; s < settings.size(); ++s) {
    for (std::size_t p = 0; p < cfg.policies.size(); ++p) {
      std::vector<double> mv, rt;
      for (std::size_t k = 0; k < cfg.seeds.size(); ++k) {
        const auto& rec = records[s * per_setting + p * cfg.seeds.size() + k];
        const RoundEntry& last = rec.rounds.empty() ? rec.initial : rec.rounds.back();
        mv.push_back(last.mean_variance);
        rt.push_back(static_cast<double>(last.retrieved));
      }
      const auto [m1, s1] = mean_stderr(mv);
      const auto [m2, s2] = mean_stderr(rt);
      const auto& h = settings[s].hyper;
      const BatchMode mode = settings[s].mode.value_or(cfg.policies[p].policy.batch_mode);
      table += fmt(h.rho) + "," + opt(h.k) + "," + opt(h.m) + "," + opt(h.M) + "," + std::to_string(h.b) + "," +
               batch_mode_name(mode) + "," + cfg.policies[p].label + "," + std::to_string(cfg.seeds.size()) + "," +
               fmt(m1) + "," + fmt(s1) + "," + fmt(m2) + "," + fmt(s2) + "\n";
    }
  }
  AblateOutput out;
  out.path = out_dir / "ablation.csv";
  out.settings = settings.size();
  out.runs = total;
  io_detail::write_atomic(out.path, table);
  return out;
}

}  // namespace transduct::bench
