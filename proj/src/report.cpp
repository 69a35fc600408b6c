// SPDX-License-Identifier: Apache-2.0
#include "cmcl/report.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cmcl {

namespace {

void indent(std::string& out, int depth) { out.append(static_cast<std::size_t>(depth) * 2, ' '); }

void emit(const Json& j, std::string& out, int depth) {
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      // nlohmann's default object type is an ordered std::map.
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ",\n";
        first = false;
        indent(out, depth + 1);
        out += Json(it.key()).dump();
        out += ": ";
        emit(it.value(), out, depth + 1);
      }
      out += "\n";
      indent(out, depth);
      out += "}";
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      bool scalar_only = true;
      for (const auto& e : j) scalar_only = scalar_only && !e.is_structured();
      if (scalar_only) {
        out += "[";
        for (std::size_t i = 0; i < j.size(); ++i) {
          if (i) out += ", ";
          emit(j[i], out, depth);
        }
        out += "]";
        return;
      }
      out += "[\n";
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out += ",\n";
        indent(out, depth + 1);
        emit(j[i], out, depth + 1);
      }
      out += "\n";
      indent(out, depth);
      out += "]";
      return;
    }
    case Json::value_t::number_float:
      out += format_double(j.get<double>());
      return;
    default:
      out += j.dump();
      return;
  }
}

}  // namespace

std::string format_double(double v) {
  if (!std::isfinite(v)) return "null";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s(buf);
  if (s.find_first_of(".eE") == std::string::npos) s += ".0";
  return s;
}

std::string dump_json(const Json& j) {
  std::string out;
  emit(j, out, 0);
  out += "\n";
  return out;
}

void write_text_file(const std::string& path, const std::string& text) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
    if (ec) throw std::runtime_error("cannot create directory " + p.parent_path().string());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path);
}

std::string loss_curve_csv(const StepResult& step) {
  std::ostringstream s;
  s << "batch,loss\n";
  for (std::size_t i = 0; i < step.batch_loss.size(); ++i) {
    s << i << ',' << format_double(step.batch_loss[i]) << '\n';
  }
  return s.str();
}

std::string stability_csv(const RunLog& log) {
  std::ostringstream s;
  s << "step,deviation,deviation_fro,bound_rhs\n";
  for (const StabilityProbe& p : log.stability) {
    s << p.step << ',' << format_double(p.deviation) << ',' << format_double(p.deviation_fro)
      << ',' << format_double(p.bound_rhs) << '\n';
  }
  return s.str();
}

std::string plasticity_csv(const RunLog& log) {
  std::ostringstream s;
  s << "step,update,loss_delta,first_order,high_order\n";
  for (const StepResult& r : log.steps) {
    for (std::size_t u = 0; u < r.updates.size(); ++u) {
      const PlasticityProbe& p = r.updates[u].plasticity;
      s << r.index << ',' << u << ',' << format_double(p.loss_delta) << ','
        << format_double(p.first_order) << ',' << format_double(p.high_order) << '\n';
    }
  }
  return s.str();
}

}  // namespace cmcl
