// SPDX-License-Identifier: Apache-2.0
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

#include "cmcl/errors.hpp"
#include "cmcl/experiment.hpp"

using namespace cmcl;
namespace fs = std::filesystem;

namespace {

const char* kSmall = R"({
  "seeds": [3, 4],
  "world": {
    "latent_dim": 6,
    "feature_dim": 12,
    "modalities": ["vision", "audio", "text"],
    "noise_scale": 0.1,
    "n_classes": 4
  },
  "steps": [
    {"pair": ["vision", "text"], "n_train": 24, "n_test": 12},
    {"pair": ["audio", "text"], "n_train": 24, "n_test": 12},
    {"pair": ["vision", "audio"], "n_train": 24, "n_test": 12, "misalign_fraction": 0.25}
  ],
  "train": {"eta": 0.01, "epochs": 2, "batch_size": 8}
}
)";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cmcl_test_experiment_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  f << s;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(CMCL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::string config_error(const std::string& text) {
  try {
    parse_config(text, "cfg.json");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("parse_config fills mode-dependent defaults") {
  const ExperimentConfig c = parse_config(kSmall);
  CHECK(c.seeds == std::vector<std::uint64_t>{3, 4});
  CHECK(c.steps.size() == 3);
  CHECK(c.methods == std::vector<Method>{Method::kVanilla, Method::kDns});
  CHECK(c.train.optimizer == Optimizer::kAdaptive);
  CHECK(c.train.lambda_min == 0.01);
  CHECK(c.train.weight_decay == 0.001);
  CHECK(c.train.loss.tau == 0.07);
  CHECK(c.train.loss.symmetric);
  const ExperimentConfig v = parse_config(R"({"world": {"feature_dim": 4, "modalities": ["a", "b"]},
    "steps": [{"pair": ["a", "b"], "n_train": 4, "n_test": 2}], "train": {"mode": "verify"}})");
  CHECK(v.train.optimizer == Optimizer::kSgd);
  CHECK(v.train.eta == 1e-3);
  CHECK(v.train.batch_size == 0);
  CHECK(v.train.lambda_min == 0.0);
  CHECK(v.train.probes);
  CHECK(v.seeds == std::vector<std::uint64_t>{0});
}

TEST_CASE("config errors name the offending line") {
  std::string bad = kSmall;
  bad.replace(bad.find("\"eta\": 0.01"), 11, "\"eta\": -1");
  CHECK(config_error(bad).rfind("cfg.json:15: ", 0) == 0);

  bad = kSmall;
  bad.replace(bad.find("\"noise_scale\": 0.1"), 18, "\"noise_sclae\": 0.1");
  const std::string unknown = config_error(bad);
  CHECK(unknown.rfind("cfg.json:7: ", 0) == 0);
  CHECK(unknown.find("noise_sclae") != std::string::npos);

  bad = kSmall;
  bad.replace(bad.find("[\"audio\", \"text\"]"), 17, "[\"audio\", \"depth\"]");
  CHECK(config_error(bad).rfind("cfg.json:12: ", 0) == 0);

  CHECK(config_error("{\n  \"steps\": [\n  }").rfind("cfg.json:3: ", 0) == 0);
  CHECK(config_error("{\"steps\": []}").rfind("cfg.json:1: ", 0) == 0);

  std::string verify_adam = kSmall;
  verify_adam.replace(verify_adam.find("\"eta\": 0.01"), 11, "\"mode\": \"verify\", \"optimizer\": \"adaptive\"");
  CHECK(config_error(verify_adam).find("verify mode requires optimizer sgd") != std::string::npos);
}

TEST_CASE("verify override forces the exact configuration") {
  ExperimentConfig c = parse_config(kSmall);
  RunOverrides o;
  o.mode = Mode::kVerify;
  o.seeds = std::vector<std::uint64_t>{9};
  o.methods = std::vector<Method>{Method::kDns};
  apply_overrides(c, o);
  CHECK(c.train.optimizer == Optimizer::kSgd);
  CHECK(c.train.weight_decay == 0.0);
  CHECK(c.train.lambda_min == 0.0);
  CHECK(c.train.probes);
  CHECK(c.seeds == std::vector<std::uint64_t>{9});
  RunOverrides empty;
  empty.seeds = std::vector<std::uint64_t>{};
  CHECK_THROWS_AS(apply_overrides(c, empty), ConfigError);
}

TEST_CASE("repeated runs write byte-identical reports") {
  const ExperimentConfig c = parse_config(kSmall);
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  RunOptions quiet;
  quiet.quiet = true;
  REQUIRE(run_experiment(c, a.string(), quiet).exit_code == kExitOk);
  REQUIRE(run_experiment(c, b.string(), quiet).exit_code == kExitOk);
  int compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (name.find("timings") != std::string::npos) continue;
    const fs::path other = b / fs::relative(e.path(), a);
    REQUIRE(fs::exists(other));
    CHECK_MESSAGE(slurp(e.path()) == slurp(other), e.path().string());
    ++compared;
  }
  CHECK(compared >= 2 * 2 * 5 + 1);
  const std::string report = slurp(a / "dns" / "seed_3" / "report.json");
  for (const char* key : {"\"config_echo\"", "\"per_step\"", "\"R_matrix\"", "\"bwt\"", "\"final\"",
                          "\"stability_probes\"", "\"plasticity_probes\"", "\"timings\""}) {
    CHECK_MESSAGE(report.find(key) != std::string::npos, key);
  }
  CHECK(fs::exists(a / "aggregate.json"));
  CHECK(slurp(a / "dns" / "seed_3" / "loss_step0.csv").rfind("batch,loss\n", 0) == 0);
}

TEST_CASE("single-step sequence reports an empty backward transfer") {
  const ExperimentConfig c = parse_config(R"({"world": {"feature_dim": 6, "modalities": ["a", "b"], "n_classes": 3},
    "steps": [{"pair": ["a", "b"], "n_train": 8, "n_test": 4}], "train": {"epochs": 1, "batch_size": 4}})");
  const RunLog log = run_sequence(build_steps(c, 0), train_config_for(c, Method::kDns, 0));
  const Json r = report_json(c, log, Method::kDns, 0, false);
  CHECK(r.at("bwt").at("acc").is_null());
  CHECK(r.at("bwt").at("recall10").is_null());
  CHECK(r.at("final").at("recall1").is_number());
}

TEST_CASE("exported embeddings reproduce the synthetic run") {
  const ExperimentConfig c = parse_config(kSmall);
  const fs::path g = scratch("gen");
  gen_experiment(c, g.string());
  const ExperimentConfig from_files = load_config((g / "seed_3" / "config.json").string());
  CHECK_FALSE(from_files.world.has_value());
  REQUIRE(from_files.steps.at(0).source.has_value());
  const auto syn = build_steps(c, 3), fil = build_steps(from_files, 3);
  REQUIRE(syn.size() == fil.size());
  for (std::size_t t = 0; t < syn.size(); ++t) {
    CHECK(syn[t].z_a == fil[t].z_a);
    CHECK(syn[t].z_b == fil[t].z_b);
    CHECK(syn[t].labels == fil[t].labels);
    CHECK(syn[t].class_prototypes == fil[t].class_prototypes);
    CHECK(syn[t].n_train == fil[t].n_train);
  }
  const RunLog a = run_sequence(syn, train_config_for(c, Method::kDns, 3));
  const RunLog b = run_sequence(fil, train_config_for(from_files, Method::kDns, 3));
  const Json ra = report_json(c, a, Method::kDns, 3, false), rb = report_json(from_files, b, Method::kDns, 3, false);
  CHECK(ra.at("R_matrix") == rb.at("R_matrix"));
  CHECK(ra.at("bwt") == rb.at("bwt"));
  CHECK(ra.at("final") == rb.at("final"));
}

TEST_CASE("aggregate statistics") {
  RunSummary a, b;
  a.method = b.method = Method::kDns;
  a.bwt_acc = -0.1;
  b.bwt_acc = -0.3;
  a.final_acc = 0.5;
  const Json j = aggregate_json({a, b});
  const Json& s = j.at("methods").at("dns").at("bwt_acc");
  CHECK(s.at("mean").get<double>() == doctest::Approx(-0.2));
  CHECK(s.at("std").get<double>() == doctest::Approx(0.1414213562373095));
  CHECK(j.at("methods").at("dns").at("final_acc").at("std").is_null());
}

TEST_CASE("json emission is sorted and round-trips doubles") {
  CHECK(format_double(1.0) == "1.0");
  CHECK(format_double(0.1) == "0.10000000000000001");
  CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "null");
  Json j;
  j["b"] = 1;
  j["a"] = 0.5;
  j["c"] = Json::array({1.5, 2});
  CHECK(dump_json(j) == "{\n  \"a\": 0.5,\n  \"b\": 1,\n  \"c\": [1.5, 2]\n}\n");
}

TEST_CASE("command-line exit codes") {
  const fs::path d = scratch("cli");
  spit(d / "ok.json", kSmall);
  CHECK(cli("run --config " + (d / "ok.json").string() + " --out " + (d / "out").string() +
            " --seeds 5 --methods dns") == kExitOk);
  CHECK(fs::exists(d / "out" / "dns" / "seed_5" / "report.json"));
  CHECK_FALSE(fs::exists(d / "out" / "vanilla"));

  CHECK(cli("run --config " + (d / "ok.json").string() + " --out " + (d / "inline").string() +
            " --seeds 5 --methods dns --timings inline") == kExitOk);
  CHECK(slurp(d / "inline" / "dns" / "seed_5" / "report.json").find("\"duration_s\": null") == std::string::npos);
  CHECK(slurp(d / "out" / "dns" / "seed_5" / "report.json").find("\"duration_s\": null") != std::string::npos);

  std::string bad = kSmall;
  bad.replace(bad.find("\"epochs\": 2"), 11, "\"epochs\": 0");
  spit(d / "bad.json", bad);
  CHECK(cli("run --config " + (d / "bad.json").string() + " --out " + (d / "x").string()) == kExitConfig);
  CHECK(cli("run --config " + (d / "missing.json").string() + " --out " + (d / "x").string()) == kExitConfig);
  CHECK(cli("run --config " + (d / "ok.json").string() + " --out " + (d / "x").string() + " --methods ewc") ==
        kExitConfig);
  CHECK(cli("run --config " + (d / "ok.json").string()) == kExitConfig);
  CHECK(cli("frobnicate") == kExitConfig);

  std::string explode = kSmall;
  explode.replace(explode.find("\"eta\": 0.01, \"epochs\": 2"), 24,
                  "\"mode\": \"verify\", \"eta\": 1000000.0, \"epochs\": 50");
  spit(d / "explode.json", explode);
  CHECK(cli("run --config " + (d / "explode.json").string() + " --out " + (d / "boom").string() +
            " --methods vanilla --seeds 3") == kExitNumerical);
  const std::string partial = slurp(d / "boom" / "vanilla" / "seed_3" / "report.json");
  CHECK(partial.find("\"aborted\"") != std::string::npos);

  CHECK(cli("verify --inject-sign-fault") == kExitVerify);
  CHECK(cli("gen --config " + (d / "ok.json").string() + " --out " + (d / "gen").string()) == kExitOk);
  CHECK(fs::exists(d / "gen" / "seed_3" / "config.json"));
}
