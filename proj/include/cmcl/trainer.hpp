// SPDX-License-Identifier: Apache-2.0
//
// Sequential training over modality-pair steps with plain or projected
// updates.
//
// Each step: for every epoch, a seeded permutation of the train columns is
// cut into batches; each batch yields raw gradients, which DNS projects
// against the covariance history before the optimizer is applied. At step
// end the covariances absorb the step's prior inputs and the outputs of the
// just-trained learners.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cmcl/contrastive.hpp"
#include "cmcl/dns.hpp"
#include "cmcl/features.hpp"
#include "cmcl/learner.hpp"
#include "cmcl/metrics.hpp"

namespace cmcl {

enum class Optimizer { kSgd, kAdaptive };
enum class Mode { kVerify, kBenchmark };
enum class Method { kVanilla, kDns };

std::string to_string(Optimizer o);
std::string to_string(Mode m);
std::string to_string(Method m);
/// Throw ConfigError on an unknown name.
Optimizer parse_optimizer(const std::string& s);
Mode parse_mode(const std::string& s);
Method parse_method(const std::string& s);

struct TrainConfig {
  double eta = 1e-4;
  std::size_t epochs = 5;
  /// 0 trains on the whole train split as one batch.
  std::size_t batch_size = 64;
  double lambda_min = 0.01;
  double weight_decay = 0.001;
  Optimizer optimizer = Optimizer::kAdaptive;
  Mode mode = Mode::kBenchmark;
  Method method = Method::kDns;
  std::uint64_t seed = 0;
  ContrastiveConfig loss;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Record per-update gradient norms and re-evaluate each batch after its
  /// update. Costs one extra forward pass per batch.
  bool probes = false;

  /// Throws ConfigError. Verify mode demands sgd, zero decay, lambda_min 0
  /// and raw inner products.
  void validate() const;
};

/// Per-update diagnostics, filled only when TrainConfig::probes is set.
struct UpdateRecord {
  std::size_t epoch = 0;
  std::size_t batch_size = 0;
  double grad_norm_a = 0.0;  // spectral norms of the raw gradients
  double grad_norm_b = 0.0;
  PlasticityProbe plasticity;
};

struct StepResult {
  std::size_t index = 0;
  ModalityPair pair;
  std::vector<double> epoch_mean_loss;
  std::vector<double> batch_loss;
  std::vector<UpdateRecord> updates;
  double duration_s = 0.0;
  /// Projector construction, gradient projection and covariance update.
  double projection_s = 0.0;
  std::map<ModalityId, std::uint64_t> hash_before;
  std::map<ModalityId, std::uint64_t> hash_after;
  std::size_t rank_right_a = 0;
  std::size_t rank_left_a = 0;
  std::size_t rank_right_b = 0;
  std::size_t rank_left_b = 0;
};

/// sgd: W -= eta * dW + eta * decay * W. adaptive: bias-corrected moment
/// estimates with decoupled decay; moments live in `state`.
void optimizer_step(LearnerState& state, const ModalityId& m, const Matrix& dw,
                    const TrainConfig& cfg);

/// Trains the dataset's pair in place. Throws NumericalError on a non-finite
/// loss, DimensionError on shape mismatch.
StepResult run_step(LearnerState& state, CovarianceStore& store, const StepDataset& data,
                    const TrainConfig& cfg, std::size_t step_index = 0);

/// Per-step summary of the plasticity probes.
struct PlasticitySummary {
  std::size_t step = 0;
  std::size_t updates = 0;
  double mean_high_order = 0.0;
  double mean_high_order_over_eta = 0.0;
  /// min over updates of <G, dW> / ||G||_F^2, either modality; +inf if none.
  double min_inner_ratio = 0.0;
};

struct RunLog {
  std::vector<StepResult> steps;
  /// scores[t][i]: dataset i evaluated after step t.
  std::vector<std::vector<StepScores>> scores;
  std::vector<StabilityProbe> stability;
  std::vector<PlasticitySummary> plasticity;
  LearnerState final_state;

  ScoreTable table(double StepScores::*field) const;
  ScoreTable acc_table() const;
};

/// Scores the test split of `data` under `state`. Recall@k uses
/// min(k, n_test). Acc queries the pair member other than the prototype
/// modality against W_proto * prototypes.
StepScores evaluate_step(const LearnerState& state, const StepDataset& data);

/// Modalities the sequence touches, including prototype modalities.
std::vector<ModalityId> sequence_modalities(const std::vector<StepDataset>& steps);

/// `on_step` sees the log after every completed step, which lets callers
/// keep partial results when a later step aborts.
RunLog run_sequence(const std::vector<StepDataset>& steps, const TrainConfig& cfg,
                    const std::function<void(const RunLog&)>& on_step = {});

}  // namespace cmcl
