// SPDX-License-Identifier: Apache-2.0
//
// Byte-stable serialization: JSON with sorted keys and 17 significant
// digits, and CSV plot series.
#pragma once

#include <string>

#include "json.hpp"

#include "cmcl/trainer.hpp"

namespace cmcl {

using Json = nlohmann::json;

/// %.17g, with ".0" appended to integral-looking output; NaN and infinities
/// become null.
std::string format_double(double v);

/// Keys sorted, two-space indent, trailing newline.
std::string dump_json(const Json& j);

/// Writes `text` to `path`, creating parent directories. Throws
/// std::runtime_error naming the path on failure.
void write_text_file(const std::string& path, const std::string& text);

std::string loss_curve_csv(const StepResult& step);
std::string stability_csv(const RunLog& log);
std::string plasticity_csv(const RunLog& log);

}  // namespace cmcl
