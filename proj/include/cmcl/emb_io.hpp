// SPDX-License-Identifier: Apache-2.0
//
// CMCL-EMB binary tables.
//
//   embeddings: "CMCL" | u8 version=1 | u32le n | u32le d | n*d f32le, row-major
//   labels:     "CMCL" | u8 version=2 | u32le n | n u32le class indices
//
// Files are row-per-sample; in memory tables are d x n (columns are samples).
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cmcl/linalg.hpp"

namespace cmcl {

inline constexpr std::uint8_t kEmbVersion = 1;
inline constexpr std::uint8_t kLabelsVersion = 2;

/// Serializes a d x n table. Entries are narrowed to float32.
std::vector<std::uint8_t> encode_embeddings(const Matrix& columns);
/// Throws FormatError on bad magic/version, truncation, trailing bytes or
/// non-finite values.
Matrix decode_embeddings(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_labels(const std::vector<std::uint32_t>& labels);
std::vector<std::uint32_t> decode_labels(std::span<const std::uint8_t> bytes);

void write_embeddings(const std::string& path, const Matrix& columns);
Matrix read_embeddings(const std::string& path);
void write_labels(const std::string& path, const std::vector<std::uint32_t>& labels);
std::vector<std::uint32_t> read_labels(const std::string& path);

}  // namespace cmcl
