// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "doctest.h"

#include "cmcl/errors.hpp"
#include "cmcl/trainer.hpp"

using namespace cmcl;

namespace {

const ModalityId kV("vision"), kA("audio"), kT("text");

std::vector<StepDataset> sequence(std::uint64_t seed, std::vector<ModalityPair> pairs, std::size_t n_train = 24) {
  WorldParams wp;
  wp.seed = seed;
  wp.latent_dim = 6;
  wp.feature_dim = 16;
  wp.modalities = {"vision", "audio", "text"};
  wp.noise_scale = 0.1;
  wp.n_classes = 4;
  const SyntheticWorld w = build_world(wp);
  std::vector<StepDataset> out;
  for (std::size_t t = 0; t < pairs.size(); ++t) {
    StepSpec s;
    s.pair = pairs[t];
    s.n_train = n_train;
    s.n_test = 16;
    out.push_back(gen_step(w, s, derive_seed(seed, 100 + t)));
  }
  return out;
}

TrainConfig verify_cfg(Method m, double eta = 1e-3, std::size_t epochs = 2) {
  TrainConfig c;
  c.mode = Mode::kVerify;
  c.method = m;
  c.optimizer = Optimizer::kSgd;
  c.weight_decay = 0.0;
  c.lambda_min = 0.0;
  c.batch_size = 0;
  c.eta = eta;
  c.epochs = epochs;
  c.probes = true;
  return c;
}

}  // namespace

TEST_CASE("learners start at the identity") {
  const LearnerState s = LearnerState::identity(4, {kV, kT});
  CHECK(s.w(kV) == Matrix::Identity(4, 4));
  CHECK(s.last_trained.at(kT) == -1);
  CHECK_THROWS_AS(s.w(kA), DomainError);
  CHECK(weight_hash(s.w(kV)) == weight_hash(Matrix::Identity(4, 4)));
  CHECK(weight_hash(s.w(kV)) != weight_hash(Matrix::Identity(2, 2)));
}

TEST_CASE("sgd applies decay then the update") {
  LearnerState s = LearnerState::identity(2, {kV});
  TrainConfig c = verify_cfg(Method::kVanilla);
  c.mode = Mode::kBenchmark;
  c.eta = 0.1;
  c.weight_decay = 0.5;
  const Matrix dw = Matrix::Constant(2, 2, 1.0);
  optimizer_step(s, kV, dw, c);
  const Matrix expect = Matrix::Identity(2, 2) * (1.0 - 0.05) - 0.1 * dw;
  CHECK((s.w(kV) - expect).norm() <= 1e-15);
}

TEST_CASE("adaptive first step moves each entry by about eta against its sign") {
  LearnerState s = LearnerState::identity(2, {kV});
  TrainConfig c;
  c.optimizer = Optimizer::kAdaptive;
  c.eta = 0.01;
  c.weight_decay = 0.0;
  Matrix dw(2, 2);
  dw << 3.0, -0.5, 1e-3, -2.0;
  optimizer_step(s, kV, dw, c);
  const Matrix step = Matrix::Identity(2, 2) - s.w(kV);
  for (Eigen::Index i = 0; i < 4; ++i) {
    CHECK(step.data()[i] == doctest::Approx(0.01 * (dw.data()[i] > 0 ? 1.0 : -1.0)).epsilon(1e-4));
  }
  CHECK(s.moments.at(kV).steps == 1);
  optimizer_step(s, kV, dw, c);
  CHECK(s.moments.at(kV).steps == 2);
}

TEST_CASE("first step of dns is bitwise identical to vanilla") {
  const auto steps = sequence(1, {{kV, kT}});
  for (Optimizer opt : {Optimizer::kSgd, Optimizer::kAdaptive}) {
    TrainConfig c;
    c.optimizer = opt;
    c.eta = 1e-2;
    c.epochs = 3;
    c.batch_size = 8;
    c.method = Method::kVanilla;
    const RunLog v = run_sequence(steps, c);
    c.method = Method::kDns;
    const RunLog d = run_sequence(steps, c);
    CHECK(v.final_state.w(kV) == d.final_state.w(kV));
    CHECK(v.final_state.w(kT) == d.final_state.w(kT));
    CHECK(v.steps[0].batch_loss == d.steps[0].batch_loss);
  }
}

TEST_CASE("modalities absent from a step keep their exact weights") {
  const auto steps = sequence(2, {{kV, kT}, {kA, kT}, {kV, kA}, {kA, kT}});
  for (Method m : {Method::kVanilla, Method::kDns}) {
    TrainConfig c = verify_cfg(m);
    const RunLog log = run_sequence(steps, c);
    for (const StepResult& r : log.steps) {
      for (const auto& [mod, h] : r.hash_before) {
        if (!r.pair.contains(mod)) CHECK(r.hash_after.at(mod) == h);
      }
    }
    CHECK(log.steps[1].hash_after.at(kV) == log.steps[0].hash_after.at(kV));
    CHECK(log.final_state.last_trained.at(kV) == 2);
    CHECK(log.final_state.last_trained.at(kT) == 3);
  }
}

TEST_CASE("dns preserves the old alignment far better than vanilla") {
  const auto steps = sequence(3, {{kV, kT}, {kV, kT}}, 8);
  const TrainConfig dc = verify_cfg(Method::kDns, 1e-2, 1);
  const TrainConfig vc = verify_cfg(Method::kVanilla, 1e-2, 1);
  const RunLog d = run_sequence(steps, dc), v = run_sequence(steps, vc);
  REQUIRE(d.stability.size() == 1);
  CHECK(d.stability[0].deviation <= d.stability[0].bound_rhs);
  CHECK(d.stability[0].deviation < 1e-2 * v.stability[0].deviation);
}

TEST_CASE("projected updates reduce the loss within a step") {
  const auto steps = sequence(4, {{kV, kT}, {kA, kT}, {kV, kA}});
  const RunLog log = run_sequence(steps, verify_cfg(Method::kDns, 1e-3, 5));
  for (const StepResult& r : log.steps) {
    for (std::size_t e = 1; e < r.epoch_mean_loss.size(); ++e) {
      CHECK(r.epoch_mean_loss[e] <= r.epoch_mean_loss[e - 1] + 1e-8);
    }
    for (const UpdateRecord& u : r.updates) {
      CHECK(u.plasticity.inner_a >= -1e-12 * u.plasticity.grad_sq_a);
      CHECK(u.plasticity.inner_b >= -1e-12 * u.plasticity.grad_sq_b);
    }
  }
  CHECK(log.plasticity.size() == 3);
}

TEST_CASE("runs are bitwise reproducible and seeds matter") {
  const auto steps = sequence(5, {{kV, kT}, {kA, kT}});
  TrainConfig c;
  c.eta = 1e-2;
  c.epochs = 2;
  c.batch_size = 8;
  c.seed = 11;
  const RunLog a = run_sequence(steps, c), b = run_sequence(steps, c);
  CHECK(a.final_state.w(kA) == b.final_state.w(kA));
  CHECK(a.steps[1].batch_loss == b.steps[1].batch_loss);
  c.seed = 12;
  const RunLog other = run_sequence(steps, c);
  CHECK(other.steps[0].batch_loss != a.steps[0].batch_loss);
}

TEST_CASE("batching drops a trailing singleton batch") {
  const auto steps = sequence(6, {{kV, kT}}, 17);
  TrainConfig c;
  c.eta = 1e-3;
  c.epochs = 1;
  c.batch_size = 8;
  c.probes = true;
  const RunLog log = run_sequence(steps, c);
  REQUIRE(log.steps[0].updates.size() == 2);
  CHECK(log.steps[0].updates[0].batch_size == 8);
  CHECK(log.steps[0].updates[1].batch_size == 8);
}

TEST_CASE("evaluation fills the lower triangle of the score tables") {
  const auto steps = sequence(7, {{kV, kT}, {kA, kT}, {kV, kA}});
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 8;
  const RunLog log = run_sequence(steps, c);
  const ScoreTable r10 = log.table(&StepScores::recall10);
  REQUIRE(r10.size() == 3);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(r10[t].size() == t + 1);
    for (const auto& v : r10[t]) CHECK((v && *v >= 0.0 && *v <= 1.0));
  }
  // vision-audio has no text member: acc queries vision against text prototypes.
  const ScoreTable acc = log.acc_table();
  CHECK(acc[2][2].has_value());
  const auto mods = sequence_modalities(steps);
  CHECK(mods.size() == 3);
}

TEST_CASE("numerical blow-up aborts with NumericalError") {
  const auto steps = sequence(8, {{kV, kT}});
  TrainConfig c = verify_cfg(Method::kVanilla, 1e6, 50);
  CHECK_THROWS_AS(run_sequence(steps, c), NumericalError);
}

TEST_CASE("config validation and names") {
  TrainConfig c = verify_cfg(Method::kDns);
  c.optimizer = Optimizer::kAdaptive;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = verify_cfg(Method::kDns);
  c.lambda_min = 0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = verify_cfg(Method::kDns);
  c.loss.normalize_in_loss = true;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = verify_cfg(Method::kDns);
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_method("dns") == Method::kDns);
  CHECK(parse_optimizer("adamw") == Optimizer::kAdaptive);
  CHECK(to_string(parse_mode("verify")) == "verify");
  CHECK_THROWS_AS(parse_method("ewc"), ConfigError);
}
