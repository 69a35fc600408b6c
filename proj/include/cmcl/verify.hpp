// SPDX-License-Identifier: Apache-2.0
//
// Self-contained numerical property suite run by `cmcl verify`.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cmcl/report.hpp"

namespace cmcl {

struct VerifyOptions {
  std::uint64_t seed = 20240611;
  /// Debug: threshold used for the null-space check's projectors instead of
  /// the exact cutoff. The residual is then measured on the retained part.
  std::optional<double> lambda_override;
  /// Mutation hook: the null-space check adds P' W P instead of subtracting.
  bool sign_fault = false;
};

struct CheckResult {
  std::string name;
  bool passed = false;
  /// Worst observed value of the checked quantity and the limit it must stay
  /// under (or, for lower bounds, above).
  double worst = 0.0;
  double limit = 0.0;
  std::string detail;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  double runtime_s = 0.0;
  bool all_passed() const;
};

VerifyReport run_verify(const VerifyOptions& opts = {});
Json verify_json(const VerifyReport& r);
/// One line per check: "PASS name  worst ... limit ...  detail".
std::string format_check(const CheckResult& c);

}  // namespace cmcl
