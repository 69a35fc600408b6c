// SPDX-License-Identifier: Apache-2.0
#include "cmcl/emb_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "cmcl/errors.hpp"

namespace cmcl {

namespace {

constexpr char kMagic[4] = {'C', 'M', 'C', 'L'};
constexpr std::size_t kEmbHeader = 13;
constexpr std::size_t kLabelsHeader = 9;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

void check_header(std::span<const std::uint8_t> bytes, std::uint8_t version,
                  std::size_t header, const char* kind) {
  if (bytes.size() < header) {
    throw FormatError(std::string(kind) + ": truncated header");
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(std::string(kind) + ": bad magic");
  }
  if (bytes[4] != version) {
    throw FormatError(std::string(kind) + ": version " + std::to_string(bytes[4]) +
                      ", expected " + std::to_string(version));
  }
}

std::uint32_t checked_u32(Eigen::Index v, const char* what) {
  if (v < 0 || static_cast<std::uint64_t>(v) > std::numeric_limits<std::uint32_t>::max()) {
    throw DimensionError(std::string(what) + " does not fit in u32");
  }
  return static_cast<std::uint32_t>(v);
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace

std::vector<std::uint8_t> encode_embeddings(const Matrix& columns) {
  require_finite(columns, "encode_embeddings");
  const std::uint32_t n = checked_u32(columns.cols(), "sample count");
  const std::uint32_t d = checked_u32(columns.rows(), "feature dim");
  std::vector<std::uint8_t> out;
  out.reserve(kEmbHeader + 4ull * n * d);
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(kEmbVersion);
  put_u32(out, n);
  put_u32(out, d);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < d; ++j) {
      const auto f = static_cast<float>(columns(j, i));
      put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
  }
  return out;
}

Matrix decode_embeddings(std::span<const std::uint8_t> bytes) {
  check_header(bytes, kEmbVersion, kEmbHeader, "embeddings");
  const std::uint32_t n = get_u32(bytes, 5);
  const std::uint32_t d = get_u32(bytes, 9);
  const std::uint64_t expected = kEmbHeader + 4ull * n * d;
  if (bytes.size() != expected) {
    throw FormatError("embeddings: payload is " + std::to_string(bytes.size()) +
                      " bytes, header implies " + std::to_string(expected));
  }
  Matrix out(d, n);
  std::size_t at = kEmbHeader;
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < d; ++j, at += 4) {
      const float f = std::bit_cast<float>(get_u32(bytes, at));
      if (!std::isfinite(f)) {
        throw FormatError("embeddings: non-finite value at row " + std::to_string(i));
      }
      out(j, i) = static_cast<double>(f);
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_labels(const std::vector<std::uint32_t>& labels) {
  if (labels.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw DimensionError("labels: count does not fit in u32");
  }
  std::vector<std::uint8_t> out;
  out.reserve(kLabelsHeader + 4 * labels.size());
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(kLabelsVersion);
  put_u32(out, static_cast<std::uint32_t>(labels.size()));
  for (std::uint32_t v : labels) put_u32(out, v);
  return out;
}

std::vector<std::uint32_t> decode_labels(std::span<const std::uint8_t> bytes) {
  check_header(bytes, kLabelsVersion, kLabelsHeader, "labels");
  const std::uint32_t n = get_u32(bytes, 5);
  if (bytes.size() != kLabelsHeader + 4ull * n) {
    throw FormatError("labels: payload size does not match count " + std::to_string(n));
  }
  std::vector<std::uint32_t> out(n);
  for (std::uint32_t i = 0; i < n; ++i) out[i] = get_u32(bytes, kLabelsHeader + 4ull * i);
  return out;
}

void write_embeddings(const std::string& path, const Matrix& columns) {
  write_file(path, encode_embeddings(columns));
}

Matrix read_embeddings(const std::string& path) {
  const auto bytes = read_file(path);
  try {
    return decode_embeddings(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void write_labels(const std::string& path, const std::vector<std::uint32_t>& labels) {
  write_file(path, encode_labels(labels));
}

std::vector<std::uint32_t> read_labels(const std::string& path) {
  const auto bytes = read_file(path);
  try {
    return decode_labels(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace cmcl
