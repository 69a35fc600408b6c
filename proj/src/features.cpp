// SPDX-License-Identifier: Apache-2.0
#include "cmcl/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "cmcl/emb_io.hpp"
#include "cmcl/errors.hpp"

namespace cmcl {

namespace {

Matrix gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  // Column-major fill order is part of the determinism contract.
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = scale * normal(rng);
  return m;
}

Matrix quantize_f32(const Matrix& m) {
  return m.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

const Matrix& SyntheticWorld::map(const ModalityId& m) const {
  auto it = maps_.find(m);
  if (it == maps_.end()) throw DomainError("unknown modality '" + m.name + "'");
  return it->second;
}

SyntheticWorld build_world(const WorldParams& params) {
  if (params.latent_dim == 0 || params.feature_dim == 0) {
    throw DomainError("build_world: latent_dim and feature_dim must be >= 1");
  }
  if (params.modalities.empty()) throw DomainError("build_world: no modalities");
  if (!(params.noise_scale >= 0.0)) throw DomainError("build_world: noise_scale < 0");
  if (!(params.class_spread >= 0.0)) throw DomainError("build_world: class_spread < 0");
  if (params.domain_dim > params.latent_dim) {
    throw DomainError("build_world: domain_dim exceeds latent_dim");
  }
  std::set<std::string> seen;
  for (const auto& name : params.modalities) {
    if (name.empty()) throw DomainError("build_world: empty modality name");
    if (!seen.insert(name).second) {
      throw DomainError("build_world: duplicate modality '" + name + "'");
    }
  }

  SyntheticWorld w;
  w.params_ = params;
  const auto d = static_cast<Eigen::Index>(params.feature_dim);
  const auto l = static_cast<Eigen::Index>(params.latent_dim);
  // Each modality draws from its own stream so adding a modality leaves the
  // others' maps untouched.
  for (std::size_t k = 0; k < params.modalities.size(); ++k) {
    std::mt19937_64 rng(derive_seed(params.seed, 1000 + k));
    Matrix m = gaussian(rng, d, l, 1.0);
    for (Eigen::Index j = 0; j < l; ++j) m.col(j).normalize();
    ModalityId id(params.modalities[k]);
    w.modalities_.push_back(id);
    w.maps_.emplace(id, std::move(m));
  }
  if (params.n_classes > 0) {
    std::mt19937_64 rng(derive_seed(params.seed, 999));
    w.class_prototypes_ = gaussian(rng, l, static_cast<Eigen::Index>(params.n_classes), 1.0);
  } else {
    w.class_prototypes_ = Matrix(l, 0);
  }
  if (!params.prototype_modality.empty()) {
    if (!seen.count(params.prototype_modality)) {
      throw DomainError("build_world: unknown prototype modality '" +
                        params.prototype_modality + "'");
    }
    w.prototype_modality_ = ModalityId(params.prototype_modality);
  } else if (seen.count("text")) {
    w.prototype_modality_ = ModalityId("text");
  } else {
    w.prototype_modality_ = ModalityId(params.modalities.back());
  }
  return w;
}

Matrix SyntheticWorld::domain_basis(std::size_t domain) const {
  const auto l = static_cast<Eigen::Index>(params_.latent_dim);
  if (params_.domain_dim == 0) return Matrix::Identity(l, l);
  std::mt19937_64 rng(derive_seed(params_.seed, 2000 + domain));
  const Matrix g = gaussian(rng, l, static_cast<Eigen::Index>(params_.domain_dim), 1.0);
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(l, g.cols());
}

std::vector<std::uint32_t> StepDataset::test_labels() const {
  if (!labels) return {};
  return {labels->begin() + static_cast<std::ptrdiff_t>(n_train), labels->end()};
}

Matrix l2_normalize_columns(const Matrix& z) {
  require_finite(z, "l2_normalize_columns");
  Matrix out = z;
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const double n = z.col(j).norm();
    if (n == 0.0) {
      throw DomainError("l2_normalize_columns: column " + std::to_string(j) + " is zero");
    }
    out.col(j) /= n;
  }
  return out;
}

StepTables gen_step_tables(const SyntheticWorld& world, const StepSpec& spec,
                           std::uint64_t step_seed) {
  const ModalityPair& pair = spec.pair;
  if (!world.has_modality(pair.first) || !world.has_modality(pair.second)) {
    throw DomainError("gen_step: unknown modality in pair " + pair.label());
  }
  if (pair.first == pair.second) throw DomainError("gen_step: pair members must differ");
  if (!(spec.misalign_fraction >= 0.0 && spec.misalign_fraction <= 0.5)) {
    throw DomainError("gen_step: misalign_fraction must be in [0, 0.5]");
  }
  if (!(spec.noise_scale >= 0.0)) throw DomainError("gen_step: noise_scale < 0");
  const std::size_t n = spec.n_train + spec.n_test;
  if (n == 0) throw DomainError("gen_step: no samples requested");

  const auto d = static_cast<Eigen::Index>(world.feature_dim());
  const auto nn = static_cast<Eigen::Index>(n);
  const auto ntr = static_cast<Eigen::Index>(spec.n_train);
  const WorldParams& wp = world.params();
  std::mt19937_64 rng(step_seed);

  StepTables t;
  t.pair = pair;
  t.n_train = spec.n_train;
  t.prototype_modality = world.prototype_modality();

  Matrix latent;
  const std::size_t world_classes = static_cast<std::size_t>(world.class_prototypes().cols());
  if (world_classes > 0) {
    if (spec.class_begin >= world_classes ||
        spec.class_begin + spec.class_count > world_classes) {
      throw DomainError("gen_step: class range outside the world's " +
                        std::to_string(world_classes) + " classes");
    }
    const std::size_t n_classes =
        spec.class_count > 0 ? spec.class_count : world_classes - spec.class_begin;
    const Matrix basis = world.domain_basis(spec.domain);
    const Matrix centers =
        basis * basis.transpose() *
        world.class_prototypes().middleCols(static_cast<Eigen::Index>(spec.class_begin),
                                            static_cast<Eigen::Index>(n_classes));
    std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(n_classes - 1));
    std::vector<std::uint32_t> labels(n);
    for (auto& y : labels) y = pick(rng);
    latent = basis * gaussian(rng, basis.cols(), nn, wp.class_spread);
    for (Eigen::Index i = 0; i < nn; ++i) latent.col(i) += centers.col(labels[i]);
    t.labels = std::move(labels);
    const Matrix proto = world.map(world.prototype_modality()) * centers;
    t.class_prototypes = quantize_f32(l2_normalize_columns(proto));
  } else {
    const Matrix basis = world.domain_basis(spec.domain);
    latent = basis * gaussian(rng, basis.cols(), nn, 1.0);
    t.class_prototypes = Matrix(d, 0);
  }

  auto observe = [&](const ModalityId& m) {
    Matrix z = world.map(m) * latent;
    z += gaussian(rng, d, nn, wp.noise_scale);
    z.leftCols(ntr) += gaussian(rng, d, ntr, spec.noise_scale);
    return z;
  };
  Matrix za = observe(pair.first);
  Matrix zb = observe(pair.second);

  // Exchange partners among a random subset of train columns: disjoint swaps,
  // with the last three forming a 3-cycle when the count is odd. A count of
  // one cannot be misaligned and is promoted to two.
  std::size_t count = static_cast<std::size_t>(
      std::llround(spec.misalign_fraction * static_cast<double>(spec.n_train)));
  if (count == 1) count = spec.n_train >= 2 ? 2 : 0;
  if (count > 0) {
    std::vector<std::size_t> idx(spec.n_train);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, spec.n_train - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    const Matrix orig = zb;
    std::size_t i = 0;
    for (; i + 3 != count && i + 1 < count; i += 2) {
      zb.col(idx[i]) = orig.col(idx[i + 1]);
      zb.col(idx[i + 1]) = orig.col(idx[i]);
    }
    if (i + 3 == count) {
      zb.col(idx[i]) = orig.col(idx[i + 1]);
      zb.col(idx[i + 1]) = orig.col(idx[i + 2]);
      zb.col(idx[i + 2]) = orig.col(idx[i]);
    }
    t.misaligned = std::move(idx);
  }

  t.z_a = quantize_f32(l2_normalize_columns(za));
  t.z_b = quantize_f32(l2_normalize_columns(zb));
  return t;
}

StepDataset dataset_from_tables(const StepTables& tables) {
  StepDataset ds;
  ds.pair = tables.pair;
  ds.z_a = l2_normalize_columns(tables.z_a);
  ds.z_b = l2_normalize_columns(tables.z_b);
  ds.n_train = tables.n_train;
  ds.labels = tables.labels;
  ds.class_prototypes =
      tables.class_prototypes.cols() > 0 ? l2_normalize_columns(tables.class_prototypes)
                                         : tables.class_prototypes;
  ds.prototype_modality = tables.prototype_modality;
  return ds;
}

StepDataset gen_step(const SyntheticWorld& world, const StepSpec& spec,
                     std::uint64_t step_seed) {
  return dataset_from_tables(gen_step_tables(world, spec, step_seed));
}

StepDataset load_embeddings(const ModalityPair& pair, const std::string& path_a,
                            const std::string& path_b, std::size_t n_train,
                            const std::optional<std::string>& labels_path,
                            const std::optional<std::string>& prototypes_path,
                            const ModalityId& prototype_modality) {
  StepTables t;
  t.pair = pair;
  t.z_a = read_embeddings(path_a);
  t.z_b = read_embeddings(path_b);
  if (t.z_a.cols() != t.z_b.cols()) {
    throw DimensionError("load_embeddings: row counts differ (" + std::to_string(t.z_a.cols()) +
                         " vs " + std::to_string(t.z_b.cols()) + "), pairs cannot be formed");
  }
  if (t.z_a.rows() != t.z_b.rows()) {
    throw DimensionError("load_embeddings: feature dims differ");
  }
  if (n_train > static_cast<std::size_t>(t.z_a.cols())) {
    throw DimensionError("load_embeddings: n_train exceeds row count");
  }
  t.n_train = n_train;
  t.prototype_modality = prototype_modality;
  t.class_prototypes = Matrix(t.z_a.rows(), 0);
  if (labels_path) {
    auto labels = read_labels(*labels_path);
    if (labels.size() != static_cast<std::size_t>(t.z_a.cols())) {
      throw DimensionError("load_embeddings: label count does not match rows");
    }
    t.labels = std::move(labels);
  }
  if (prototypes_path) {
    t.class_prototypes = read_embeddings(*prototypes_path);
    if (t.class_prototypes.rows() != t.z_a.rows()) {
      throw DimensionError("load_embeddings: prototype dim does not match features");
    }
    if (t.labels) {
      for (auto y : *t.labels) {
        if (y >= static_cast<std::uint32_t>(t.class_prototypes.cols())) {
          throw DomainError("load_embeddings: label out of range");
        }
      }
    }
  }
  return dataset_from_tables(t);
}

}  // namespace cmcl
