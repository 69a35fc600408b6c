// SPDX-License-Identifier: Apache-2.0
#include <random>

#include "doctest.h"

#include "cmcl/errors.hpp"
#include "cmcl/metrics.hpp"
#include "support.hpp"

using namespace cmcl;
using testing_support::from_eigen;
using testing_support::randn;

namespace {

// Small-integer entries so ties actually occur.
Matrix tie_heavy(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::uniform_int_distribution<int> u(-2, 2);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace

TEST_CASE("recall_at_k matches the rank oracle including ties") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index n = 1 + trial % 32;
    const Matrix a = trial % 2 ? tie_heavy(rng, n, n) : randn(rng, n, n);
    for (std::size_t k = 1; k <= static_cast<std::size_t>(n); ++k) {
      CHECK(recall_at_k(a, k) == oracle::recall(from_eigen(a), k));
    }
  }
  CHECK(recall_at_k(Matrix::Zero(3, 3), 1) == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(recall_at_k(Matrix::Zero(3, 3), 0), DomainError);
  CHECK_THROWS_AS(recall_at_k(Matrix::Zero(3, 3), 4), DomainError);
}

TEST_CASE("accuracy matches the nearest-prototype oracle") {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index d = 3, n = 1 + trial % 32, c = 2 + trial % 5;
    const Matrix q = trial % 2 ? tie_heavy(rng, d, n) : randn(rng, d, n);
    const Matrix p = trial % 2 ? tie_heavy(rng, d, c) : randn(rng, d, c);
    std::vector<std::uint32_t> y(static_cast<std::size_t>(n));
    std::uniform_int_distribution<std::uint32_t> u(0, static_cast<std::uint32_t>(c - 1));
    for (auto& v : y) v = u(rng);
    CHECK(accuracy(q, p, y) ==
          oracle::accuracy(from_eigen(q.transpose()), from_eigen(p.transpose()), y));
  }
  CHECK_THROWS_AS(accuracy(Matrix::Zero(2, 1), Matrix::Zero(2, 2), {2}), DomainError);
  CHECK_THROWS_AS(accuracy(Matrix::Zero(2, 1), Matrix::Zero(2, 1), {0}), DomainError);
}

TEST_CASE("bwt hand example") {
  // Three steps; dataset 0 drops 10 -> 8 and dataset 1 drops 20 -> 19.
  const ScoreTable r = {{10.0}, {9.0, 20.0}, {8.0, 19.0, 5.0}};
  REQUIRE(bwt(r).has_value());
  CHECK(*bwt(r) == doctest::Approx(-1.5));
}

TEST_CASE("bwt matches the oracle and handles missing cells") {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T = 1 + static_cast<std::size_t>(trial) % 8;
    ScoreTable r(T);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i <= t; ++i) {
        if (u(rng) < 0.15) r[t].push_back(std::nullopt);
        else r[t].push_back(u(rng));
      }
    }
    const auto got = bwt(r), ref = oracle::bwt(r);
    REQUIRE(got.has_value() == ref.has_value());
    if (got) CHECK(*got == doctest::Approx(*ref).epsilon(1e-14));
  }
  CHECK_FALSE(bwt(ScoreTable{{0.5}}).has_value());
  CHECK_FALSE(bwt(ScoreTable{}).has_value());
  // Appending a perfectly retained step averages the old value with a zero.
  const ScoreTable two = {{0.8}, {0.6, 0.9}};
  const ScoreTable three = {{0.8}, {0.6, 0.9}, {0.6, 0.9, 0.7}};
  CHECK(*bwt(two) == doctest::Approx(-0.2));
  CHECK(*bwt(three) == doctest::Approx(-0.1));
}

TEST_CASE("stability bound formula and bilinear norm") {
  CHECK(stability_bound(0.1, 2.0, 3.0, 1.0, 2.0) == doctest::Approx(0.01 * 6.0 * (4.0 + 1.0 + 4.0)));
  std::mt19937_64 rng(34);
  for (Eigen::Index n : {4, 40}) {
    const Matrix za = randn(rng, 6, n), zb = randn(rng, 6, n), d = randn(rng, 6, 6);
    const Matrix full = za.transpose() * d * zb;
    CHECK(bilinear_spectral_norm(za, d, zb) ==
          doctest::Approx(oracle::power_spectral_norm(from_eigen(full))).epsilon(1e-8));
  }
}

TEST_CASE("stability_probe measures the alignment change on old features") {
  std::mt19937_64 rng(35);
  const Matrix za = randn(rng, 5, 7), zb = randn(rng, 5, 7);
  const Matrix wa = Matrix::Identity(5, 5), wb = Matrix::Identity(5, 5);
  const Matrix wa2 = wa + 0.01 * randn(rng, 5, 5), wb2 = wb + 0.01 * randn(rng, 5, 5);
  const auto p = stability_probe(za, zb, wa, wb, wa2, wb2, 0.01, {{1.0, 2.0}, {3.0, 0.5}});
  const Matrix diff = (wa2 * za).transpose() * (wb2 * zb) - (wa * za).transpose() * (wb * zb);
  CHECK(p.deviation == doctest::Approx(oracle::power_spectral_norm(from_eigen(diff))).epsilon(1e-8));
  CHECK(p.deviation_fro == doctest::Approx(diff.norm()).epsilon(1e-12));
  const double na = oracle::power_spectral_norm(from_eigen(za)), nb = oracle::power_spectral_norm(from_eigen(zb));
  const double b1 = stability_bound(0.01, na, nb, 1.0, 2.0), b2 = stability_bound(0.01, na, nb, 3.0, 0.5);
  CHECK(p.bound_rhs == doctest::Approx(std::max(b1, b2)).epsilon(1e-8));
  CHECK(p.grad_norm_a == 3.0);
}

TEST_CASE("plasticity probe splits the loss change") {
  GradPair raw{Matrix::Constant(2, 2, 1.0), Matrix::Constant(2, 2, 2.0)};
  GradPair applied{Matrix::Constant(2, 2, 0.5), Matrix::Zero(2, 2)};
  const auto p = plasticity_probe(1.0, 0.99, raw, applied, 0.01);
  CHECK(p.inner_a == doctest::Approx(2.0));
  CHECK(p.inner_b == 0.0);
  CHECK(p.grad_sq_b == doctest::Approx(16.0));
  CHECK(p.loss_delta == doctest::Approx(-0.01));
  CHECK(p.first_order == doctest::Approx(-0.02));
  CHECK(p.high_order == doctest::Approx(0.01));
}

TEST_CASE("encode and retrieve_best") {
  LearnerState s = LearnerState::identity(3, {ModalityId("vision")});
  s.w(ModalityId("vision")) *= 2.0;
  CHECK(encode(s, ModalityId("vision"), Matrix::Identity(3, 2)) == 2.0 * Matrix::Identity(3, 2));
  CHECK_THROWS_AS(encode(s, ModalityId("text"), Matrix::Identity(3, 2)), DomainError);
  Matrix q(2, 2), g(2, 3);
  q << 1, 0, 0, 1;
  g << 0, 1, 1, 1, 0, 1;
  const auto best = retrieve_best(q, g);
  CHECK(best == std::vector<std::size_t>{1, 0});  // second query ties columns 0 and 2
  CHECK(alignment(q, q) == Matrix::Identity(2, 2));
  CHECK_THROWS_AS(alignment(q, g), DimensionError);
}
