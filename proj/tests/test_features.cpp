// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <filesystem>
#include <random>
#include <set>

#include "doctest.h"

#include "cmcl/emb_io.hpp"
#include "cmcl/errors.hpp"
#include "cmcl/features.hpp"

using namespace cmcl;

namespace {

WorldParams small_world(std::uint64_t seed) {
  WorldParams wp;
  wp.seed = seed;
  wp.latent_dim = 4;
  wp.feature_dim = 12;
  wp.modalities = {"vision", "audio", "text"};
  wp.noise_scale = 0.1;
  wp.n_classes = 6;
  return wp;
}

StepSpec vt_spec() {
  StepSpec s;
  s.pair = ModalityPair{ModalityId("vision"), ModalityId("text")};
  s.n_train = 20;
  s.n_test = 10;
  return s;
}

}  // namespace

TEST_CASE("generation is deterministic in world and step seed") {
  const SyntheticWorld w1 = build_world(small_world(3));
  const SyntheticWorld w2 = build_world(small_world(3));
  const StepDataset a = gen_step(w1, vt_spec(), 42);
  const StepDataset b = gen_step(w2, vt_spec(), 42);
  CHECK(a.z_a == b.z_a);
  CHECK(a.z_b == b.z_b);
  CHECK(a.labels == b.labels);
  const StepDataset c = gen_step(w1, vt_spec(), 43);
  CHECK(a.z_a != c.z_a);
}

TEST_CASE("columns are unit norm and shapes follow the spec") {
  const SyntheticWorld w = build_world(small_world(1));
  const StepDataset d = gen_step(w, vt_spec(), 5);
  CHECK(d.z_a.rows() == 12);
  CHECK(d.n_total() == 30);
  CHECK(d.n_train == 20);
  CHECK(d.test_a().cols() == 10);
  for (Eigen::Index j = 0; j < d.z_a.cols(); ++j) {
    CHECK(d.z_a.col(j).norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d.z_b.col(j).norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
  REQUIRE(d.has_labels());
  CHECK(d.class_prototypes.cols() == 6);
  for (auto y : *d.labels) CHECK(y < 6);
  CHECK(d.prototype_modality == ModalityId("text"));
}

TEST_CASE("noise-free paired features recover their partners through the shared latent") {
  WorldParams wp = small_world(8);
  wp.noise_scale = 0.0;
  wp.n_classes = 0;
  wp.latent_dim = 6;
  const SyntheticWorld w = build_world(wp);
  StepSpec s = vt_spec();
  s.n_train = 0;
  s.n_test = 64;
  const StepDataset d = gen_step(w, s, 1);
  // Ideal alignment: map each side back to the latent by least squares.
  const Matrix ia = (w.map(ModalityId("vision")).completeOrthogonalDecomposition().pseudoInverse());
  const Matrix ib = (w.map(ModalityId("text")).completeOrthogonalDecomposition().pseudoInverse());
  Matrix la = ia * d.z_a, lb = ib * d.z_b;
  for (Eigen::Index j = 0; j < la.cols(); ++j) {
    la.col(j).normalize();
    lb.col(j).normalize();
  }
  const Matrix sim = la.transpose() * lb;
  int hits = 0;
  for (Eigen::Index i = 0; i < sim.rows(); ++i) {
    Eigen::Index best;
    sim.row(i).maxCoeff(&best);
    hits += best == i;
  }
  CHECK(static_cast<double>(hits) / 64.0 >= 1.0 / 64.0);
  CHECK(hits >= 60);
}

TEST_CASE("misalignment exchanges the requested share of train partners only") {
  const SyntheticWorld w = build_world(small_world(2));
  StepSpec s = vt_spec();
  s.misalign_fraction = 0.25;
  const StepTables t = gen_step_tables(w, s, 9);
  CHECK(t.misaligned.size() == 5);
  for (auto i : t.misaligned) CHECK(i < s.n_train);
  s.misalign_fraction = 0.6;
  CHECK_THROWS_AS(gen_step_tables(w, s, 9), DomainError);
}

TEST_CASE("train noise leaves the test split untouched") {
  const SyntheticWorld w = build_world(small_world(2));
  StepSpec s = vt_spec();
  const StepDataset clean = gen_step(w, s, 4);
  s.noise_scale = 0.5;
  const StepDataset noisy = gen_step(w, s, 4);
  CHECK(clean.test_a() == noisy.test_a());
  CHECK(clean.train_a() != noisy.train_a());
}

TEST_CASE("class ranges give local labels and domains give distinct subspaces") {
  WorldParams wp = small_world(4);
  wp.latent_dim = 8;
  wp.domain_dim = 2;
  const SyntheticWorld w = build_world(wp);
  const Matrix b0 = w.domain_basis(0), b1 = w.domain_basis(1);
  CHECK(b0.cols() == 2);
  CHECK((b0.transpose() * b0 - Matrix::Identity(2, 2)).norm() <= 1e-12);
  CHECK((b0 - b1).norm() > 0.1);
  StepSpec s = vt_spec();
  s.class_begin = 2;
  s.class_count = 3;
  const StepDataset d = gen_step(w, s, 1);
  CHECK(d.n_classes() == 3);
  for (auto y : *d.labels) CHECK(y < 3);
  s.class_begin = 5;
  CHECK_THROWS_AS(gen_step(w, s, 1), DomainError);
}

TEST_CASE("world validation") {
  WorldParams wp = small_world(1);
  wp.modalities = {"a", "a"};
  CHECK_THROWS_AS(build_world(wp), DomainError);
  wp = small_world(1);
  wp.feature_dim = 0;
  CHECK_THROWS_AS(build_world(wp), DomainError);
  wp = small_world(1);
  wp.noise_scale = -1.0;
  CHECK_THROWS_AS(build_world(wp), DomainError);
  wp = small_world(1);
  wp.prototype_modality = "depth";
  CHECK_THROWS_AS(build_world(wp), DomainError);
  const SyntheticWorld w = build_world(small_world(1));
  StepSpec s = vt_spec();
  s.pair.second = ModalityId("vision");
  CHECK_THROWS_AS(gen_step(w, s, 1), DomainError);
  s.pair.second = ModalityId("depth");
  CHECK_THROWS_AS(gen_step(w, s, 1), DomainError);
  CHECK_THROWS_AS(l2_normalize_columns(Matrix::Zero(3, 2)), DomainError);
}

TEST_CASE("derive_seed separates streams") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 100; ++s) seen.insert(derive_seed(7, s));
  CHECK(seen.size() == 100);
  CHECK(derive_seed(7, 1) == derive_seed(7, 1));
}

TEST_CASE("embedding files round-trip the float32 tables") {
  const SyntheticWorld w = build_world(small_world(6));
  const StepTables t = gen_step_tables(w, vt_spec(), 3);
  const auto bytes = encode_embeddings(t.z_a);
  CHECK(bytes.size() == 4 + 1 + 4 + 4 + 4 * static_cast<std::size_t>(t.z_a.size()));
  CHECK(decode_embeddings(bytes) == t.z_a);
  CHECK(decode_labels(encode_labels(*t.labels)) == *t.labels);

  const auto dir = std::filesystem::temp_directory_path() / "cmcl_test_features";
  std::filesystem::create_directories(dir);
  write_embeddings((dir / "a.emb").string(), t.z_a);
  write_embeddings((dir / "b.emb").string(), t.z_b);
  write_labels((dir / "y.lbl").string(), *t.labels);
  write_embeddings((dir / "p.emb").string(), t.class_prototypes);
  const StepDataset loaded = load_embeddings(t.pair, (dir / "a.emb").string(), (dir / "b.emb").string(),
                                             t.n_train, (dir / "y.lbl").string(), (dir / "p.emb").string());
  const StepDataset direct = dataset_from_tables(t);
  CHECK(loaded.z_a == direct.z_a);
  CHECK(loaded.z_b == direct.z_b);
  CHECK(loaded.labels == direct.labels);
  CHECK(loaded.class_prototypes == direct.class_prototypes);
  CHECK(direct.z_a == gen_step(w, vt_spec(), 3).z_a);
  std::filesystem::remove_all(dir);
}

TEST_CASE("malformed embedding files are rejected") {
  auto bytes = encode_embeddings(Matrix::Identity(3, 2));
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_embeddings(bad), FormatError);
  bad = bytes;
  bad[4] = 9;
  CHECK_THROWS_AS(decode_embeddings(bad), FormatError);
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(decode_embeddings(bad), FormatError);
  bad = bytes;
  bad.push_back(0);
  CHECK_THROWS_AS(decode_embeddings(bad), FormatError);
  bad = bytes;
  bad[bad.size() - 1] = 0x7f;
  bad[bad.size() - 2] = 0xc0;  // NaN pattern 0x7fc00000
  bad[bad.size() - 3] = 0;
  bad[bad.size() - 4] = 0;
  CHECK_THROWS_AS(decode_embeddings(bad), FormatError);
  CHECK_THROWS_AS(decode_labels(bytes), FormatError);
  CHECK_THROWS(read_embeddings("/nonexistent/x.emb"));
}
