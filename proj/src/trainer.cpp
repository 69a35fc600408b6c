// SPDX-License-Identifier: Apache-2.0
#include "cmcl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "cmcl/errors.hpp"

namespace cmcl {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Matrix gather_columns(const Matrix& z, const std::vector<std::size_t>& idx, std::size_t begin,
                      std::size_t end) {
  Matrix out(z.rows(), static_cast<Eigen::Index>(end - begin));
  for (std::size_t k = begin; k < end; ++k) {
    out.col(static_cast<Eigen::Index>(k - begin)) = z.col(static_cast<Eigen::Index>(idx[k]));
  }
  return out;
}

// Batch boundaries over n columns. A trailing batch of one column carries no
// contrastive signal and is dropped.
std::vector<std::pair<std::size_t, std::size_t>> batch_bounds(std::size_t n, std::size_t b) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (b == 0 || b >= n) {
    out.emplace_back(0, n);
    return out;
  }
  for (std::size_t s = 0; s < n; s += b) out.emplace_back(s, std::min(n, s + b));
  if (out.size() > 1 && out.back().second - out.back().first == 1) out.pop_back();
  return out;
}

}  // namespace

std::string to_string(Optimizer o) { return o == Optimizer::kSgd ? "sgd" : "adaptive"; }
std::string to_string(Mode m) { return m == Mode::kVerify ? "verify" : "benchmark"; }
std::string to_string(Method m) { return m == Method::kVanilla ? "vanilla" : "dns"; }

Optimizer parse_optimizer(const std::string& s) {
  if (s == "sgd") return Optimizer::kSgd;
  if (s == "adaptive" || s == "adamw") return Optimizer::kAdaptive;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adaptive)");
}

Mode parse_mode(const std::string& s) {
  if (s == "verify") return Mode::kVerify;
  if (s == "benchmark") return Mode::kBenchmark;
  throw ConfigError("unknown mode '" + s + "' (expected verify or benchmark)");
}

Method parse_method(const std::string& s) {
  if (s == "vanilla") return Method::kVanilla;
  if (s == "dns") return Method::kDns;
  throw ConfigError("unknown method '" + s + "' (expected vanilla or dns)");
}

void TrainConfig::validate() const {
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("train.eta must be >= 0");
  if (epochs == 0) throw ConfigError("train.epochs must be >= 1");
  if (!(lambda_min >= 0.0)) throw ConfigError("train.lambda_min must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (!(loss.tau > 0.0)) throw ConfigError("train.tau must be > 0");
  if (mode == Mode::kVerify) {
    if (optimizer != Optimizer::kSgd) throw ConfigError("verify mode requires optimizer sgd");
    if (weight_decay != 0.0) throw ConfigError("verify mode requires weight_decay 0");
    if (lambda_min != 0.0) throw ConfigError("verify mode requires lambda_min 0");
    if (loss.normalize_in_loss) throw ConfigError("verify mode requires raw inner products");
  } else if (batch_size == 1) {
    throw ConfigError("benchmark mode requires batch_size >= 2");
  }
}

void optimizer_step(LearnerState& state, const ModalityId& m, const Matrix& dw,
                    const TrainConfig& cfg) {
  Matrix& w = state.w(m);
  require_shape(dw, w.rows(), w.cols(), "optimizer_step: update");
  if (cfg.optimizer == Optimizer::kSgd) {
    if (cfg.weight_decay != 0.0) w -= cfg.eta * cfg.weight_decay * w;
    w -= cfg.eta * dw;
    return;
  }
  AdamMoments& mo = state.moments[m];
  if (mo.first.size() == 0) {
    mo.first = Matrix::Zero(w.rows(), w.cols());
    mo.second = Matrix::Zero(w.rows(), w.cols());
  }
  ++mo.steps;
  mo.first = cfg.adam_beta1 * mo.first + (1.0 - cfg.adam_beta1) * dw;
  mo.second = cfg.adam_beta2 * mo.second + (1.0 - cfg.adam_beta2) * dw.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(mo.steps));
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(mo.steps));
  if (cfg.weight_decay != 0.0) w *= 1.0 - cfg.eta * cfg.weight_decay;
  w.array() -= cfg.eta * (mo.first.array() / c1) /
               ((mo.second.array() / c2).sqrt() + cfg.adam_eps);
}

StepResult run_step(LearnerState& state, CovarianceStore& store, const StepDataset& data,
                    const TrainConfig& cfg, std::size_t step_index) {
  cfg.validate();
  const ModalityPair& pair = data.pair;
  if (pair.first == pair.second) throw DomainError("run_step: pair members must differ");
  const Matrix& w_a0 = state.w(pair.first);
  state.w(pair.second);
  const auto d = static_cast<Eigen::Index>(state.dim);
  if (static_cast<std::size_t>(w_a0.rows()) != store.dim() || data.z_a.rows() != d ||
      data.z_b.rows() != d) {
    throw DimensionError("run_step: feature, learner and covariance dimensions disagree");
  }

  StepResult r;
  r.index = step_index;
  r.pair = pair;
  for (const auto& [m, w] : state.weights) r.hash_before[m] = weight_hash(w);
  const auto t0 = Clock::now();
  const bool dns = cfg.method == Method::kDns;

  ProjectorSet projs;
  if (dns) {
    const auto tp = Clock::now();
    projs = build_projectors(store, pair, cfg.lambda_min);
    r.projection_s += seconds_since(tp);
    r.rank_right_a = projs.at(pair.first).right_input.retained_rank;
    r.rank_left_a = projs.at(pair.first).left_partner_output.retained_rank;
    r.rank_right_b = projs.at(pair.second).right_input.retained_rank;
    r.rank_left_b = projs.at(pair.second).left_partner_output.retained_rank;
  }

  const Matrix train_a = data.train_a();
  const Matrix train_b = data.train_b();
  const std::size_t n = data.n_train;
  std::vector<std::size_t> order(n);
  const auto bounds = batch_bounds(n, cfg.batch_size);
  const bool shuffle = bounds.size() > 1;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle) {
      std::mt19937_64 rng(derive_seed(cfg.seed, ((step_index + 1) << 20) + epoch));
      std::shuffle(order.begin(), order.end(), rng);
    }
    double epoch_sum = 0.0;
    for (const auto& [begin, end] : bounds) {
      const Matrix xa = gather_columns(train_a, order, begin, end);
      const Matrix xb = gather_columns(train_b, order, begin, end);
      const LossAndGrads lg =
          loss_and_grads(state.w(pair.first), state.w(pair.second), xa, xb, cfg.loss);
      if (!std::isfinite(lg.loss)) {
        throw NumericalError("non-finite loss at step " + std::to_string(step_index) +
                             ", epoch " + std::to_string(epoch));
      }
      r.batch_loss.push_back(lg.loss);
      epoch_sum += lg.loss;

      GradPair applied;
      if (dns) {
        const auto tp = Clock::now();
        applied.grad_a = project_gradient(lg.grads.grad_a, projs.at(pair.first));
        applied.grad_b = project_gradient(lg.grads.grad_b, projs.at(pair.second));
        r.projection_s += seconds_since(tp);
      } else {
        applied = lg.grads;
      }
      optimizer_step(state, pair.first, applied.grad_a, cfg);
      optimizer_step(state, pair.second, applied.grad_b, cfg);

      if (cfg.probes) {
        UpdateRecord u;
        u.epoch = epoch;
        u.batch_size = end - begin;
        u.grad_norm_a = spectral_norm(lg.grads.grad_a);
        u.grad_norm_b = spectral_norm(lg.grads.grad_b);
        const double after = info_nce_loss(project_features(state.w(pair.first), xa),
                                           project_features(state.w(pair.second), xb),
                                           cfg.loss);
        u.plasticity = plasticity_probe(lg.loss, after, lg.grads, applied, cfg.eta);
        r.updates.push_back(u);
      }
    }
    r.epoch_mean_loss.push_back(epoch_sum / static_cast<double>(bounds.size()));
  }

  for (const ModalityId& m : {pair.first, pair.second}) {
    require_finite(state.w(m), "learner weights for '" + m.name + "'");
    state.last_trained[m] = static_cast<long>(step_index);
  }

  if (dns) {
    const auto tp = Clock::now();
    update_covariances(store, pair, train_a, train_b,
                       project_features(state.w(pair.first), train_a),
                       project_features(state.w(pair.second), train_b));
    r.projection_s += seconds_since(tp);
  }
  r.duration_s = seconds_since(t0);
  for (const auto& [m, w] : state.weights) r.hash_after[m] = weight_hash(w);
  return r;
}

StepScores evaluate_step(const LearnerState& state, const StepDataset& data) {
  StepScores s;
  const Matrix za = encode(state, data.pair.first, data.test_a());
  const Matrix zb = encode(state, data.pair.second, data.test_b());
  const std::size_t n = data.n_test();
  if (n == 0) throw DomainError("evaluate_step: empty test split");
  const Matrix a = alignment(za, zb);
  s.recall1 = recall_at_k(a, std::min<std::size_t>(1, n));
  s.recall5 = recall_at_k(a, std::min<std::size_t>(5, n));
  s.recall10 = recall_at_k(a, std::min<std::size_t>(10, n));
  if (data.has_labels() && state.has(data.prototype_modality)) {
    const bool first_is_proto = data.pair.first == data.prototype_modality;
    const Matrix& queries = first_is_proto ? zb : za;
    const Matrix protos = encode(state, data.prototype_modality, data.class_prototypes);
    s.acc = accuracy(queries, protos, data.test_labels());
  }
  return s;
}

std::vector<ModalityId> sequence_modalities(const std::vector<StepDataset>& steps) {
  std::set<ModalityId> seen;
  for (const StepDataset& s : steps) {
    seen.insert(s.pair.first);
    seen.insert(s.pair.second);
    if (s.has_labels()) seen.insert(s.prototype_modality);
  }
  return {seen.begin(), seen.end()};
}

ScoreTable RunLog::table(double StepScores::*field) const {
  ScoreTable out;
  for (const auto& row : scores) {
    std::vector<std::optional<double>> r;
    for (const StepScores& s : row) r.emplace_back(s.*field);
    out.push_back(std::move(r));
  }
  return out;
}

ScoreTable RunLog::acc_table() const {
  ScoreTable out;
  for (const auto& row : scores) {
    std::vector<std::optional<double>> r;
    for (const StepScores& s : row) r.push_back(s.acc);
    out.push_back(std::move(r));
  }
  return out;
}

RunLog run_sequence(const std::vector<StepDataset>& steps, const TrainConfig& cfg,
                    const std::function<void(const RunLog&)>& on_step) {
  if (steps.empty()) throw DomainError("run_sequence: empty sequence");
  const auto dim = static_cast<std::size_t>(steps.front().z_a.rows());
  RunLog log;
  log.final_state = LearnerState::identity(dim, sequence_modalities(steps));
  LearnerState& state = log.final_state;
  CovarianceStore store(dim);

  for (std::size_t t = 0; t < steps.size(); ++t) {
    const LearnerState before = state;
    log.steps.push_back(run_step(state, store, steps[t], cfg, t));
    const StepResult& r = log.steps.back();

    std::vector<StepScores> row;
    for (std::size_t i = 0; i <= t; ++i) row.push_back(evaluate_step(state, steps[i]));
    log.scores.push_back(std::move(row));

    if (t > 0) {
      const StepDataset& prev = steps[t - 1];
      std::vector<std::pair<double, double>> norms;
      for (const UpdateRecord& u : r.updates) {
        auto norm_of = [&](const ModalityId& m) {
          if (m == r.pair.first) return u.grad_norm_a;
          if (m == r.pair.second) return u.grad_norm_b;
          return 0.0;
        };
        norms.emplace_back(norm_of(prev.pair.first), norm_of(prev.pair.second));
      }
      StabilityProbe p = stability_probe(
          prev.train_a(), prev.train_b(), before.w(prev.pair.first), before.w(prev.pair.second),
          state.w(prev.pair.first), state.w(prev.pair.second), cfg.eta, norms);
      p.step = t;
      log.stability.push_back(p);
    }

    if (cfg.probes) {
      PlasticitySummary ps;
      ps.step = t;
      ps.updates = r.updates.size();
      ps.min_inner_ratio = std::numeric_limits<double>::infinity();
      for (const UpdateRecord& u : r.updates) {
        ps.mean_high_order += u.plasticity.high_order;
        const PlasticityProbe& p = u.plasticity;
        if (p.grad_sq_a > 0.0) ps.min_inner_ratio = std::min(ps.min_inner_ratio, p.inner_a / p.grad_sq_a);
        if (p.grad_sq_b > 0.0) ps.min_inner_ratio = std::min(ps.min_inner_ratio, p.inner_b / p.grad_sq_b);
      }
      if (ps.updates > 0) ps.mean_high_order /= static_cast<double>(ps.updates);
      ps.mean_high_order_over_eta = cfg.eta > 0.0 ? ps.mean_high_order / cfg.eta : 0.0;
      log.plasticity.push_back(ps);
    }
    if (on_step) on_step(log);
  }
  return log;
}

}  // namespace cmcl
