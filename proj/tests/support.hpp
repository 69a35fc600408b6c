// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>

#include "cmcl/linalg.hpp"
#include "oracles.hpp"

namespace testing_support {

inline cmcl::Matrix to_eigen(const oracle::Mat& m) {
  cmcl::Matrix out(static_cast<Eigen::Index>(m.size()), static_cast<Eigen::Index>(m[0].size()));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[0].size(); ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m[i][j];
  return out;
}

inline oracle::Mat from_eigen(const cmcl::Matrix& m) {
  oracle::Mat out = oracle::zeros(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  return out;
}

inline cmcl::Matrix randn(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  return to_eigen(oracle::random_mat(rng, static_cast<std::size_t>(r), static_cast<std::size_t>(c)));
}

}  // namespace testing_support
