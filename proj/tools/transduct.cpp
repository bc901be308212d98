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

// Command-line front end.
//
//   transduct run    --config <path> [--out <dir>] [--seeds 0,1,2] [--preset <name>] [--jobs <n>]
//   transduct theory --config <path> [--out <dir>]
//   transduct markov --config <path> [--x <index>] [--epsilon <eps>]
//   transduct ablate --config <path> [--out <dir>] [--jobs <n>]
//
// Exit codes: 0 success, 2 config error, 3 numeric error, 4 budget error.
// TRANSDUCT_LOG sets verbosity: error, warn (default), info or debug.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "transduct/transduct.hpp"

namespace {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kNumeric = 3, kBudget = 4 };

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("transduct");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("TRANSDUCT_LOG");
  const std::string level = env ? env : "warn";
  spdlog::set_level(spdlog::level::from_str(level));
}

struct CommonArgs {
  std::string config;
  std::string out = "out";
  std::vector<std::uint64_t> seeds;
  std::string preset;
  std::size_t jobs = 1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_jobs) {
  cmd->add_option("--config", args.config, "Run configuration (JSON)")->required();
  cmd->add_option("--out", args.out, "Output directory");
  cmd->add_option("--seeds", args.seeds, "Seeds, overriding the config")->delimiter(',');
  cmd->add_option("--preset", args.preset, "Hyperparameter preset: mnist-like or cifar-like");
  if (with_jobs) cmd->add_option("--jobs", args.jobs, "Parallel runs")->check(CLI::PositiveNumber);
}

transduct::bench::RunConfig load(const CommonArgs& args) {
  std::optional<std::string> preset;
  if (!args.preset.empty()) preset = args.preset;
  std::optional<std::vector<std::uint64_t>> seeds;
  if (!args.seeds.empty()) seeds = args.seeds;
  return transduct::bench::load_config(args.config, preset, seeds);
}

void info(const std::string& message) { spdlog::info("{}", message); }

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Transductive active learning with Gaussian process surrogates"};
  app.require_subcommand(1);

  CommonArgs run_args, theory_args, markov_args, ablate_args;
  auto* run = app.add_subcommand("run", "Run selection experiments and write records and metrics");
  add_common(run, run_args, true);
  auto* theory = app.add_subcommand("theory", "Check the convergence bounds on an ITL trajectory");
  add_common(theory, theory_args, false);
  auto* markov = app.add_subcommand("markov", "Compute an approximate Markov boundary");
  add_common(markov, markov_args, false);
  std::optional<std::size_t> markov_x;
  std::optional<double> markov_eps;
  markov->add_option("--x", markov_x, "Domain index of the query point");
  markov->add_option("--epsilon", markov_eps, "Tolerance above the irreducible variance");
  auto* ablate = app.add_subcommand("ablate", "Run a grid of hyperparameter settings");
  add_common(ablate, ablate_args, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (run->parsed()) {
      const auto cfg = load(run_args);
      const auto out = transduct::bench::cmd_run(cfg, run_args.out, run_args.jobs, info);
      spdlog::info("wrote {} records, {} and {}", out.records.size(), out.metrics.string(), out.summary.string());
    } else if (theory->parsed()) {
      const auto cfg = load(theory_args);
      const auto out = transduct::bench::cmd_theory(cfg, theory_args.out);
      spdlog::info("wrote {}", out.path.string());
      for (const auto& check : out.diagnostics.at("checks")) {
        std::printf("%s: %s\n", check.at("name").get<std::string>().c_str(),
                    check.at("status").get<std::string>().c_str());
      }
      if (out.any_failure) return kFailure;
    } else if (markov->parsed()) {
      const auto cfg = load(markov_args);
      const nlohmann::json mj = cfg.snapshot.value("markov", nlohmann::json::object());
      std::size_t x = markov_x.value_or(mj.value("x", std::size_t{0}));
      double eps = markov_eps.value_or(mj.value("epsilon", 0.1));
      const auto out = transduct::bench::cmd_markov(cfg, x, eps, markov_args.out);
      std::printf("boundary size %zu (bound %.17g), variance %.17g, irreducible %.17g\n",
                  out.boundary.members.size(), out.boundary.size_bound, out.boundary.achieved_variance,
                  out.boundary.irreducible);
    } else if (ablate->parsed()) {
      const auto cfg = load(ablate_args);
      const auto out = transduct::bench::cmd_ablate(cfg, ablate_args.out, ablate_args.jobs, info);
      spdlog::info("wrote {} ({} settings, {} runs)", out.path.string(), out.settings, out.runs);
    }
  } catch (const transduct::ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfig;
  } catch (const transduct::BudgetError& e) {
    spdlog::error("budget error: {}", e.what());
    return kBudget;
  } catch (const transduct::NumericError& e) {
    spdlog::error("numeric error: {}", e.what());
    return kNumeric;
  } catch (const transduct::InputError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfig;
  } catch (const transduct::ParseError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfig;
  } catch (const transduct::DataError& e) {
    spdlog::error("data error: {}", e.what());
    return kConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
  return kOk;
}
