// SPDX-License-Identifier: Apache-2.0
#include "cmcl/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

#include "cmcl/contrastive.hpp"
#include "cmcl/dns.hpp"
#include "cmcl/errors.hpp"
#include "cmcl/trainer.hpp"

namespace cmcl {

namespace {

Matrix randn(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = n(rng);
  return m;
}

std::size_t uniform(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

CheckResult upper(std::string name, double worst, double limit, std::string detail = {}) {
  return CheckResult{std::move(name), worst <= limit, worst, limit, std::move(detail)};
}

CheckResult check_projectors(std::mt19937_64& rng) {
  double worst = 0.0;
  std::size_t bad = 0;
  const double thresholds[] = {0.0, 0.01, 0.1};
  for (int k = 0; k < 100; ++k) {
    const std::size_t d = uniform(rng, 2, 32);
    const std::size_t r = uniform(rng, 0, d);
    const Matrix g = randn(rng, static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(std::max<std::size_t>(r, 1)));
    const Matrix c = r == 0 ? Matrix::Zero(g.rows(), g.rows()) : Matrix(g * g.transpose() / static_cast<double>(r));
    const Projector p = range_projector(c, thresholds[k % 3]);
    const auto dd = static_cast<double>(d);
    const double idem = frobenius_norm(p.matrix * p.matrix - p.matrix) / (1e-8 * dd);
    const double sym = frobenius_norm(p.matrix.transpose() - p.matrix) / (1e-12 * dd);
    const SpectralDecomposition sd = spectral_decompose(p.matrix);
    double eig = 0.0;
    std::size_t ones = 0;
    for (Eigen::Index i = 0; i < sd.eigenvalues.size(); ++i) {
      const double v = sd.eigenvalues(i);
      eig = std::max(eig, std::min(std::abs(v), std::abs(v - 1.0)) / 1e-8);
      ones += std::abs(v - 1.0) < 1e-8;
    }
    const double sn = spectral_norm(p.matrix);
    const double norm_dev = std::min(std::abs(sn), std::abs(sn - 1.0)) / 1e-8;
    worst = std::max({worst, idem, sym, eig, norm_dev});
    bad += ones != p.retained_rank;
  }
  CheckResult res = upper("projector_properties", worst, 1.0, "normalized by each tolerance");
  if (bad) {
    res.passed = false;
    res.detail = std::to_string(bad) + " projectors with rank/eigenvalue mismatch";
  }
  return res;
}

CheckResult check_penrose(std::mt19937_64& rng) {
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const auto m = static_cast<Eigen::Index>(uniform(rng, 1, 32));
    const auto n = static_cast<Eigen::Index>(uniform(rng, 1, 32));
    Matrix a;
    if (k % 2 == 0) {
      a = randn(rng, m, n);
    } else {
      const auto r = static_cast<Eigen::Index>(uniform(rng, 1, static_cast<std::size_t>(std::min(m, n))));
      a = randn(rng, m, r) * randn(rng, r, n);
    }
    const Matrix x = pseudo_inverse(a);
    const double scale = std::max(1.0, frobenius_norm(a));
    worst = std::max({worst, frobenius_norm(a * x * a - a) / scale,
                      frobenius_norm(x * a * x - x) / scale,
                      frobenius_norm((a * x).transpose() - a * x) / scale,
                      frobenius_norm((x * a).transpose() - x * a) / scale});
  }
  return upper("penrose_identities", worst, 1e-8);
}

CheckResult check_null_space(std::mt19937_64& rng, const VerifyOptions& opts) {
  double worst = 0.0;
  const double lambda = opts.lambda_override.value_or(0.0);
  for (int k = 0; k < 100; ++k) {
    const Matrix zp = randn(rng, 32, 8);
    const Matrix z = randn(rng, 32, 8);
    const Matrix wt = randn(rng, 32, 32);
    const Projector pl = range_projector(zp * zp.transpose() / 8.0, lambda);
    const Projector pr = range_projector(z * z.transpose() / 8.0, lambda);
    const Matrix wbar = opts.sign_fault ? Matrix(wt + pl.matrix * wt * pr.matrix)
                                        : project_global(wt, pl.matrix, pr.matrix);
    const double denom = frobenius_norm(zp.transpose() * wt * z);
    const double num = frobenius_norm((pl.matrix * zp).transpose() * wbar * (pr.matrix * z));
    worst = std::max(worst, denom > 1e-10 ? num / denom : num);
  }
  return upper("null_space_identity", worst, 1e-6,
               opts.lambda_override ? "lambda_min override " + std::to_string(lambda) : "exact projectors");
}

// Share of the raw gradient that survives projection, averaged over random
// histories; larger means more freedom to learn.
double retained_gradient_share(std::mt19937_64& rng, double lambda) {
  double total = 0.0;
  for (int k = 0; k < 20; ++k) {
    const Matrix zin = randn(rng, 32, 12);
    const Matrix zout = randn(rng, 32, 12);
    const ModalityProjectors p{range_projector(zin * zin.transpose() / 12.0, lambda),
                               range_projector(zout * zout.transpose() / 12.0, lambda)};
    const Matrix g = randn(rng, 32, 32);
    total += frobenius_norm(project_gradient(g, p)) / frobenius_norm(g);
  }
  return total / 20.0;
}

TrainConfig verify_train(double eta, std::size_t epochs, std::uint64_t seed) {
  TrainConfig c;
  c.eta = eta;
  c.epochs = epochs;
  c.batch_size = 0;
  c.lambda_min = 0.0;
  c.weight_decay = 0.0;
  c.optimizer = Optimizer::kSgd;
  c.mode = Mode::kVerify;
  c.method = Method::kDns;
  c.probes = true;
  c.seed = seed;
  return c;
}

std::vector<StepDataset> two_step_world(std::uint64_t seed) {
  WorldParams wp;
  wp.seed = seed;
  wp.latent_dim = 8;
  wp.feature_dim = 16;
  wp.modalities = {"vision", "text"};
  wp.noise_scale = 0.1;
  const SyntheticWorld w = build_world(wp);
  const StepSpec spec{ModalityPair{ModalityId("vision"), ModalityId("text")}, 8, 8, 0.0, 0.0};
  return {gen_step(w, spec, derive_seed(seed, 100)), gen_step(w, spec, derive_seed(seed, 101))};
}

std::vector<CheckResult> check_stability(std::uint64_t base) {
  const double etas[] = {1e-2, 1e-3, 1e-4};
  double worst_ratio = 0.0;
  double worst_slope_dev = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto steps = two_step_world(derive_seed(base, s));
    double dev[3];
    for (int e = 0; e < 3; ++e) {
      const RunLog log = run_sequence(steps, verify_train(etas[e], 1, s));
      const StabilityProbe& p = log.stability.at(0);
      worst_ratio = std::max(worst_ratio, p.bound_rhs > 0.0 ? p.deviation / p.bound_rhs
                                                            : (p.deviation > 0.0 ? 1e300 : 0.0));
      dev[e] = p.deviation;
    }
    // Least-squares slope of log deviation against log eta.
    double mx = 0.0, my = 0.0;
    for (int e = 0; e < 3; ++e) {
      mx += std::log(etas[e]) / 3.0;
      my += std::log(std::max(dev[e], 1e-300)) / 3.0;
    }
    double sxy = 0.0, sxx = 0.0;
    for (int e = 0; e < 3; ++e) {
      sxy += (std::log(etas[e]) - mx) * (std::log(std::max(dev[e], 1e-300)) - my);
      sxx += (std::log(etas[e]) - mx) * (std::log(etas[e]) - mx);
    }
    worst_slope_dev = std::max(worst_slope_dev, std::abs(sxy / sxx - 2.0));
  }
  return {upper("stability_bound", worst_ratio, 1.0, "max deviation / bound over 300 runs"),
          upper("stability_second_order", worst_slope_dev, 0.2, "|log-log slope - 2|, worst seed")};
}

std::vector<StepDataset> three_step_world(std::uint64_t seed) {
  WorldParams wp;
  wp.seed = seed;
  wp.latent_dim = 8;
  wp.feature_dim = 32;
  wp.modalities = {"vision", "audio", "text"};
  wp.noise_scale = 0.05;
  const SyntheticWorld w = build_world(wp);
  const char* pairs[3][2] = {{"vision", "text"}, {"audio", "text"}, {"vision", "audio"}};
  std::vector<StepDataset> out;
  for (std::size_t t = 0; t < 3; ++t) {
    const StepSpec spec{ModalityPair{ModalityId(pairs[t][0]), ModalityId(pairs[t][1])}, 12, 8,
                        0.0, 0.0};
    out.push_back(gen_step(w, spec, derive_seed(seed, 100 + t)));
  }
  return out;
}

std::vector<CheckResult> check_plasticity(std::uint64_t base) {
  double worst_inner = 0.0;     // most negative <G, dW> / ||G||^2, negated
  double worst_increase = 0.0;  // largest epoch-mean loss increase
  double worst_high = -std::numeric_limits<double>::infinity();
  for (std::uint64_t s = 0; s < 10; ++s) {
    const RunLog log = run_sequence(three_step_world(derive_seed(base, 500 + s)),
                                    verify_train(1e-3, 5, s));
    for (const StepResult& r : log.steps) {
      for (const UpdateRecord& u : r.updates) {
        const PlasticityProbe& p = u.plasticity;
        if (p.grad_sq_a > 0.0) worst_inner = std::max(worst_inner, -p.inner_a / p.grad_sq_a);
        if (p.grad_sq_b > 0.0) worst_inner = std::max(worst_inner, -p.inner_b / p.grad_sq_b);
      }
      for (std::size_t e = 1; e < r.epoch_mean_loss.size(); ++e) {
        worst_increase = std::max(worst_increase, r.epoch_mean_loss[e] - r.epoch_mean_loss[e - 1]);
      }
    }
    for (const PlasticitySummary& ps : log.plasticity) {
      if (ps.step > 0) worst_high = std::max(worst_high, ps.mean_high_order_over_eta);
    }
  }
  return {upper("plasticity_inner_product", worst_inner, 1e-12, "-<G,dW>/||G||^2, worst update"),
          upper("plasticity_loss_monotone", worst_increase, 1e-8, "epoch-mean loss rise, eta 1e-3"),
          upper("plasticity_high_order", worst_high, 1e-6, "step-mean o(eta)/eta at steps after the first")};
}

CheckResult check_gradients(std::mt19937_64& rng) {
  double worst = 0.0;
  for (int sym = 0; sym < 2; ++sym) {
    for (int norm = 0; norm < 2; ++norm) {
      ContrastiveConfig cfg;
      cfg.symmetric = sym == 1;
      cfg.normalize_in_loss = norm == 1;
      for (int k = 0; k < 20; ++k) {
        const Matrix wa = Matrix::Identity(8, 8) + 0.3 * randn(rng, 8, 8);
        const Matrix wb = Matrix::Identity(8, 8) + 0.3 * randn(rng, 8, 8);
        const Matrix za = l2_normalize_columns(randn(rng, 8, 6));
        const Matrix zb = l2_normalize_columns(randn(rng, 8, 6));
        const LossAndGrads lg = loss_and_grads(wa, wb, za, zb, cfg);
        const GradPair fd = finite_diff_grad(wa, wb, za, zb, cfg, 1e-6);
        const double scale = std::max({fd.grad_a.cwiseAbs().maxCoeff(),
                                       fd.grad_b.cwiseAbs().maxCoeff(), 1e-12});
        const double err = std::max((lg.grads.grad_a - fd.grad_a).cwiseAbs().maxCoeff(),
                                    (lg.grads.grad_b - fd.grad_b).cwiseAbs().maxCoeff());
        worst = std::max(worst, err / scale);
      }
    }
  }
  return upper("gradient_finite_difference", worst, 1e-6, "4 loss configurations x 20");
}

CheckResult check_covariance(std::mt19937_64& rng) {
  double worst = 0.0;
  std::size_t rank_mismatch = 0;
  for (int k = 0; k < 20; ++k) {
    const auto d = static_cast<Eigen::Index>(uniform(rng, 4, 12));
    const auto r = static_cast<Eigen::Index>(uniform(rng, 1, static_cast<std::size_t>(d)));
    const Matrix basis = randn(rng, d, r);
    const Eigen::Index counts[3] = {4, 8, 4};
    CovarianceStore store(static_cast<std::size_t>(d));
    Matrix all(d, 16);
    Eigen::Index col = 0;
    const ModalityPair pair{ModalityId("a"), ModalityId("b")};
    for (Eigen::Index n : counts) {
      const Matrix z = basis * randn(rng, r, n);
      update_covariances(store, pair, z, z, z, z);
      all.middleCols(col, n) = z;
      col += n;
    }
    const Matrix direct = all * all.transpose() / 16.0;
    const Matrix& run = store.entry(ModalityId("a")).input_cov;
    worst = std::max(worst, frobenius_norm(run - direct) / std::max(frobenius_norm(direct), 1e-300));
    Eigen::JacobiSVD<Matrix> svd(all);
    svd.setThreshold(static_cast<double>(std::max(all.rows(), all.cols())) *
                     std::numeric_limits<double>::epsilon());
    if (numerical_rank_psd(run) != static_cast<std::size_t>(svd.rank())) ++rank_mismatch;
  }
  CheckResult res = upper("covariance_recursion", worst, 1e-10, "three steps of 4, 8, 4 columns");
  if (rank_mismatch) {
    res.passed = false;
    res.detail = std::to_string(rank_mismatch) + " rank mismatches";
  }
  return res;
}

CheckResult check_transparency(std::uint64_t base) {
  WorldParams wp;
  wp.seed = base;
  wp.feature_dim = 16;
  wp.modalities = {"vision", "text"};
  wp.noise_scale = 0.1;
  const SyntheticWorld w = build_world(wp);
  const std::vector<StepDataset> steps{gen_step(
      w, StepSpec{ModalityPair{ModalityId("vision"), ModalityId("text")}, 40, 8, 0.0, 0.0},
      derive_seed(base, 1))};
  TrainConfig c;
  c.batch_size = 16;
  c.eta = 1e-2;
  c.method = Method::kVanilla;
  const RunLog a = run_sequence(steps, c);
  c.method = Method::kDns;
  const RunLog b = run_sequence(steps, c);
  const bool same = a.steps[0].batch_loss == b.steps[0].batch_loss &&
                    a.steps[0].hash_after == b.steps[0].hash_after;
  return CheckResult{"zero_history_transparency", same, same ? 0.0 : 1.0, 0.0,
                     "first step, dns vs vanilla, bitwise"};
}

CheckResult check_frozen(std::uint64_t base) {
  WorldParams wp;
  wp.seed = base;
  wp.feature_dim = 16;
  wp.modalities = {"vision", "audio", "text", "depth"};
  wp.noise_scale = 0.1;
  const SyntheticWorld w = build_world(wp);
  const char* pairs[11][2] = {{"vision", "text"}, {"audio", "text"}, {"depth", "text"},
                              {"vision", "audio"}, {"audio", "depth"}, {"vision", "text"},
                              {"depth", "vision"}, {"audio", "text"}, {"text", "depth"},
                              {"vision", "audio"}, {"audio", "text"}};
  std::vector<StepDataset> steps;
  for (std::size_t t = 0; t < 11; ++t) {
    steps.push_back(gen_step(
        w, StepSpec{ModalityPair{ModalityId(pairs[t][0]), ModalityId(pairs[t][1])}, 16, 8, 0.0, 0.0},
        derive_seed(base, 100 + t)));
  }
  TrainConfig c;
  c.eta = 1e-2;
  c.epochs = 2;
  c.batch_size = 8;
  const RunLog log = run_sequence(steps, c);
  std::size_t violations = 0;
  for (const StepResult& r : log.steps) {
    for (const auto& [m, h] : r.hash_before) {
      const bool in_pair = r.pair.contains(m);
      if (!in_pair && r.hash_after.at(m) != h) ++violations;
      if (in_pair && r.hash_after.at(m) == h) ++violations;
    }
  }
  return CheckResult{"frozen_absent_modality", violations == 0, static_cast<double>(violations),
                     0.0, "11-step mixed schedule, weight hashes"};
}

}  // namespace

bool VerifyReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

VerifyReport run_verify(const VerifyOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(opts.seed);
  VerifyReport r;
  r.checks.push_back(check_projectors(rng));
  r.checks.push_back(check_penrose(rng));
  r.checks.push_back(check_null_space(rng, opts));
  if (opts.lambda_override) {
    std::mt19937_64 a(opts.seed), b(opts.seed);
    const double exact = retained_gradient_share(a, 0.0);
    const double loose = retained_gradient_share(b, *opts.lambda_override);
    r.checks.push_back(CheckResult{"override_plasticity_gain", loose >= exact, loose, exact,
                                   "retained gradient share vs exact projectors"});
  }
  for (auto& c : check_stability(opts.seed)) r.checks.push_back(c);
  for (auto& c : check_plasticity(opts.seed)) r.checks.push_back(c);
  r.checks.push_back(check_gradients(rng));
  r.checks.push_back(check_covariance(rng));
  r.checks.push_back(check_transparency(opts.seed));
  r.checks.push_back(check_frozen(opts.seed));
  r.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

Json verify_json(const VerifyReport& r) {
  Json out;
  Json checks = Json::array();
  for (const CheckResult& c : r.checks) {
    Json j;
    j["name"] = c.name;
    j["passed"] = c.passed;
    j["worst"] = c.worst;
    j["limit"] = c.limit;
    j["detail"] = c.detail;
    checks.push_back(j);
  }
  out["checks"] = checks;
  out["all_passed"] = r.all_passed();
  return out;
}

std::string format_check(const CheckResult& c) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s %-28s worst %.3e  limit %.3e  %s", c.passed ? "PASS" : "FAIL",
                c.name.c_str(), c.worst, c.limit, c.detail.c_str());
  return buf;
}

}  // namespace cmcl
