// SPDX-License-Identifier: Apache-2.0
//
// cmcl: run, verify and export continual contrastive experiments.
#include <cstdio>
#include <exception>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cmcl/errors.hpp"
#include "cmcl/experiment.hpp"
#include "cmcl/verify.hpp"

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const std::string& item : split_list(s)) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || item.front() == '-') {
      throw cmcl::ConfigError("--seeds: '" + item + "' is not a non-negative integer");
    }
    out.push_back(v);
  }
  return out;
}

int cmd_run(const std::string& config, const std::string& out, const std::string& seeds,
            const std::string& methods, const std::string& mode, bool inline_timings) {
  cmcl::ExperimentConfig cfg = cmcl::load_config(config);
  cmcl::RunOverrides o;
  if (!seeds.empty()) o.seeds = parse_seeds(seeds);
  if (!methods.empty()) {
    std::vector<cmcl::Method> ms;
    for (const std::string& m : split_list(methods)) ms.push_back(cmcl::parse_method(m));
    o.methods = ms;
  }
  if (!mode.empty()) o.mode = cmcl::parse_mode(mode);
  cmcl::apply_overrides(cfg, o);
  cmcl::RunOptions ro;
  ro.inline_timings = inline_timings;
  const cmcl::ExperimentResult res = cmcl::run_experiment(cfg, out, ro);
  if (res.exit_code != cmcl::kExitOk) std::fprintf(stderr, "cmcl: %s\n", res.message.c_str());
  return res.exit_code;
}

int cmd_verify(const std::string& out, double lambda_override, bool sign_fault) {
  cmcl::VerifyOptions opts;
  if (lambda_override >= 0.0) opts.lambda_override = lambda_override;
  opts.sign_fault = sign_fault;
  const cmcl::VerifyReport r = cmcl::run_verify(opts);
  for (const cmcl::CheckResult& c : r.checks) std::printf("%s\n", cmcl::format_check(c).c_str());
  std::printf("%s in %.1fs\n", r.all_passed() ? "all checks passed" : "verification FAILED",
              r.runtime_s);
  if (!out.empty()) cmcl::write_text_file(out + "/verify.json", cmcl::dump_json(cmcl::verify_json(r)));
  return r.all_passed() ? cmcl::kExitOk : cmcl::kExitVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual multimodal contrastive learning with dual-sided null-space projection"};
  app.require_subcommand(1);

  std::string config, out, seeds, methods, mode, timings = "separate";
  auto* run = app.add_subcommand("run", "Train every method x seed of a config and write reports");
  run->add_option("--config", config, "Experiment config (JSON)")->required();
  run->add_option("--out", out, "Output directory")->required();
  run->add_option("--seeds", seeds, "Comma-separated seeds, overriding the config");
  run->add_option("--methods", methods, "Comma-separated subset of vanilla,dns");
  run->add_option("--mode", mode, "verify or benchmark");
  run->add_option("--timings", timings, "separate (byte-stable report.json) or inline")
      ->check(CLI::IsMember({"separate", "inline"}));

  std::string verify_out;
  double lambda_override = -1.0;
  bool sign_fault = false;
  auto* verify = app.add_subcommand("verify", "Run the numerical property suite");
  verify->add_option("--out", verify_out, "Directory for verify.json");
  verify->add_option("--lambda-min-override", lambda_override,
                     "Debug: threshold for the null-space check's projectors");
  verify->add_flag("--inject-sign-fault", sign_fault,
                   "Debug: flip the sign of the projection term");

  std::string gen_config, gen_out;
  auto* gen = app.add_subcommand("gen", "Export synthetic steps as CMCL-EMB files");
  gen->add_option("--config", gen_config, "Experiment config (JSON)")->required();
  gen->add_option("--out", gen_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : cmcl::kExitConfig;
  }

  try {
    if (*run) return cmd_run(config, out, seeds, methods, mode, timings == "inline");
    if (*verify) return cmd_verify(verify_out, lambda_override, sign_fault);
    if (*gen) {
      cmcl::gen_experiment(cmcl::load_config(gen_config), gen_out);
      return cmcl::kExitOk;
    }
  } catch (const cmcl::NumericalError& e) {
    std::fprintf(stderr, "cmcl: numerical abort: %s\n", e.what());
    return cmcl::kExitNumerical;
  } catch (const cmcl::ConfigError& e) {
    std::fprintf(stderr, "cmcl: %s\n", e.what());
    return cmcl::kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "cmcl: %s\n", e.what());
    return cmcl::kExitConfig;
  }
  return cmcl::kExitConfig;
}
