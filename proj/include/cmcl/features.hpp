// SPDX-License-Identifier: Apache-2.0
//
// Frozen prior feature providers. A SyntheticWorld stands in for pre-trained
// per-modality encoders: every instance has a shared latent vector, each
// modality observes it through its own fixed linear map plus isotropic noise,
// and features are L2-normalized. StepDatasets hold paired features with
// columns as samples.
#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cmcl/linalg.hpp"

namespace cmcl {

struct ModalityId {
  std::string name;

  ModalityId() = default;
  explicit ModalityId(std::string n) : name(std::move(n)) {}

  auto operator<=>(const ModalityId&) const = default;
};

struct ModalityPair {
  ModalityId first;
  ModalityId second;

  bool contains(const ModalityId& m) const { return m == first || m == second; }
  /// The other member of the pair. Precondition: contains(m).
  const ModalityId& partner_of(const ModalityId& m) const {
    return m == first ? second : first;
  }
  std::string label() const { return first.name + "-" + second.name; }

  auto operator<=>(const ModalityPair&) const = default;
};

struct WorldParams {
  std::uint64_t seed = 0;
  std::size_t latent_dim = 8;
  std::size_t feature_dim = 32;
  std::vector<std::string> modalities;
  /// Base sensor noise, applied to every generated column.
  double noise_scale = 0.0;
  /// 0 disables class structure.
  std::size_t n_classes = 0;
  /// Std-dev of instance latents around their class prototype.
  double class_spread = 0.5;
  /// Modality whose map produces the class-prototype embeddings. Empty picks
  /// "text" when present, otherwise the last modality.
  std::string prototype_modality;
  /// When > 0, each step's latents are confined to the span of a random
  /// orthonormal latent_dim x domain_dim basis picked by StepSpec::domain,
  /// modelling datasets that occupy different regions of the shared space.
  std::size_t domain_dim = 0;
};

/// Deterministic stand-in for frozen pre-trained encoders.
class SyntheticWorld {
 public:
  const WorldParams& params() const { return params_; }
  std::size_t feature_dim() const { return params_.feature_dim; }
  std::size_t latent_dim() const { return params_.latent_dim; }
  const std::vector<ModalityId>& modalities() const { return modalities_; }
  bool has_modality(const ModalityId& m) const { return maps_.count(m) != 0; }
  /// feature_dim x latent_dim map. Throws DomainError for unknown modality.
  const Matrix& map(const ModalityId& m) const;
  /// latent_dim x n_classes; zero columns when the world has no classes.
  const Matrix& class_prototypes() const { return class_prototypes_; }
  const ModalityId& prototype_modality() const { return prototype_modality_; }
  /// latent_dim x domain_dim orthonormal basis of a domain; identity-sized
  /// when the world has no domains.
  Matrix domain_basis(std::size_t domain) const;

 private:
  friend SyntheticWorld build_world(const WorldParams& params);

  WorldParams params_;
  std::vector<ModalityId> modalities_;
  std::map<ModalityId, Matrix> maps_;
  Matrix class_prototypes_;
  ModalityId prototype_modality_;
};

/// Throws DomainError on zero dimensions, empty or duplicate modality names,
/// negative noise, or an unknown prototype modality.
SyntheticWorld build_world(const WorldParams& params);

/// Sample-paired features for one sequence position.
///
/// Columns [0, n_train) are the train split, the rest the test split.
/// Column i of z_a and z_b derive from the same instance except for train
/// columns deliberately misaligned at generation.
struct StepDataset {
  ModalityPair pair;
  Matrix z_a;  // d x n
  Matrix z_b;  // d x n
  std::size_t n_train = 0;
  std::optional<std::vector<std::uint32_t>> labels;
  /// d x C prior features of the class prototypes (prototype modality space).
  Matrix class_prototypes;
  ModalityId prototype_modality;

  std::size_t n_total() const { return static_cast<std::size_t>(z_a.cols()); }
  std::size_t n_test() const { return n_total() - n_train; }
  std::size_t n_classes() const { return static_cast<std::size_t>(class_prototypes.cols()); }
  bool has_labels() const { return labels.has_value() && n_classes() >= 2; }

  Matrix train_a() const { return z_a.leftCols(static_cast<Eigen::Index>(n_train)); }
  Matrix train_b() const { return z_b.leftCols(static_cast<Eigen::Index>(n_train)); }
  Matrix test_a() const { return z_a.rightCols(static_cast<Eigen::Index>(n_test())); }
  Matrix test_b() const { return z_b.rightCols(static_cast<Eigen::Index>(n_test())); }
  std::vector<std::uint32_t> test_labels() const;
};

struct StepSpec {
  ModalityPair pair;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  /// Extra Gaussian corruption added to train columns only.
  double noise_scale = 0.0;
  /// Share of train columns whose partner is exchanged with another instance.
  double misalign_fraction = 0.0;
  /// Classes [class_begin, class_begin + class_count) of the world; a count
  /// of 0 takes every class from class_begin on. Labels are local to the
  /// range, so disjoint ranges model datasets with distinct label sets.
  std::size_t class_begin = 0;
  std::size_t class_count = 0;
  /// Domain index; ignored unless the world sets domain_dim.
  std::size_t domain = 0;
};

/// Float32-quantized unit-column tables, exactly what an embedding file holds.
/// A StepDataset is these tables column-normalized once more in 64-bit.
struct StepTables {
  ModalityPair pair;
  Matrix z_a;
  Matrix z_b;
  std::size_t n_train = 0;
  std::optional<std::vector<std::uint32_t>> labels;
  Matrix class_prototypes;
  ModalityId prototype_modality;
  /// Train columns whose partner was exchanged.
  std::vector<std::size_t> misaligned;
};

/// Deterministic in (world, spec, step_seed). Throws DomainError for unknown
/// modalities, identical pair members, misalign_fraction outside [0, 0.5],
/// negative noise, or a class range outside the world.
StepTables gen_step_tables(const SyntheticWorld& world, const StepSpec& spec,
                           std::uint64_t step_seed);

StepDataset gen_step(const SyntheticWorld& world, const StepSpec& spec,
                     std::uint64_t step_seed);

/// Normalizes the tables into a dataset (the path shared with file loading).
StepDataset dataset_from_tables(const StepTables& tables);

/// Returns Z with every column scaled to unit L2 norm.
/// Throws DomainError on a zero column, NumericalError on non-finite input.
Matrix l2_normalize_columns(const Matrix& z);

/// Reads a step from CMCL-EMB files (see emb_io.hpp) and normalizes columns.
/// Rows [0, n_train) are the train split. Throws FormatError on malformed
/// files and DimensionError on row-count or dimension mismatch.
StepDataset load_embeddings(const ModalityPair& pair, const std::string& path_a,
                            const std::string& path_b, std::size_t n_train,
                            const std::optional<std::string>& labels_path = std::nullopt,
                            const std::optional<std::string>& prototypes_path = std::nullopt,
                            const ModalityId& prototype_modality = ModalityId("text"));

/// splitmix64 mixing of a base seed with a stream index.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace cmcl
