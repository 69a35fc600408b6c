// SPDX-License-Identifier: Apache-2.0
//
// Experiment orchestration behind the command-line tool: JSON configs,
// method x seed sweeps, report and plot-data emission, and embedding export.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cmcl/features.hpp"
#include "cmcl/report.hpp"
#include "cmcl/trainer.hpp"

namespace cmcl {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitNumerical = 3,
  kExitVerify = 4,
};

/// Embedding files backing one step, paths relative to the config file.
struct StepSource {
  std::string a;
  std::string b;
  std::optional<std::string> labels;
  std::optional<std::string> prototypes;
  std::string prototype_modality = "text";
};

struct StepEntry {
  StepSpec spec;
  std::optional<StepSource> source;
};

struct ExperimentConfig {
  std::vector<std::uint64_t> seeds;
  std::optional<WorldParams> world;
  std::vector<StepEntry> steps;
  TrainConfig train;
  std::vector<Method> methods;
  Json document;
  std::string base_dir = ".";
};

/// Throws ConfigError whose message starts with "<origin>:<line>: ".
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "config",
                              const std::string& base_dir = ".");
ExperimentConfig load_config(const std::string& path);

struct RunOverrides {
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<std::vector<Method>> methods;
  /// verify also switches to sgd, zero decay, lambda_min 0, raw inner
  /// products and probes on.
  std::optional<Mode> mode;
};

/// Throws ConfigError when the result no longer validates.
void apply_overrides(ExperimentConfig& cfg, const RunOverrides& o);

/// Materializes the step datasets for one seed. The world is built from the
/// seed itself and step t draws from derive_seed(seed, 100 + t).
std::vector<StepDataset> build_steps(const ExperimentConfig& cfg, std::uint64_t seed);

TrainConfig train_config_for(const ExperimentConfig& cfg, Method method, std::uint64_t seed);

Json train_config_json(const TrainConfig& t);

/// Report document. With inline_timings false, wall-clock values live in a
/// sibling timings.json and the report stays byte-stable.
Json report_json(const ExperimentConfig& cfg, const RunLog& log, Method method,
                 std::uint64_t seed, bool inline_timings);
Json timings_json(const RunLog& log);

struct RunSummary {
  Method method = Method::kDns;
  std::uint64_t seed = 0;
  std::optional<double> bwt_acc;
  std::optional<double> bwt_recall10;
  std::optional<double> final_acc;
  double final_recall1 = 0.0;
  double final_recall5 = 0.0;
  double final_recall10 = 0.0;
  double mean_step_s = 0.0;
  double mean_projection_s = 0.0;
};

RunSummary summarize(const RunLog& log, Method method, std::uint64_t seed);

/// Mean and sample standard deviation over seeds, per method.
Json aggregate_json(const std::vector<RunSummary>& runs);
Json aggregate_timings_json(const std::vector<RunSummary>& runs);

struct RunOptions {
  bool inline_timings = false;
  bool quiet = false;
};

struct ExperimentResult {
  int exit_code = kExitOk;
  std::string message;
  std::vector<RunSummary> runs;
};

/// Writes <out>/<method>/seed_<s>/{report.json, timings.json, loss_step<t>.csv,
/// stability.csv, plasticity.csv} and <out>/aggregate.json. A numerical
/// abort flushes the partial run and returns kExitNumerical.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                                const RunOptions& opts = {});

/// Exports every synthetic step of every seed as CMCL-EMB files under
/// <out>/seed_<s>/ together with a config.json that reads them back.
void gen_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

}  // namespace cmcl
