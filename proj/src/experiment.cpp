// SPDX-License-Identifier: Apache-2.0
#include "cmcl/experiment.hpp"

#include <cctype>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "cmcl/emb_io.hpp"
#include "cmcl/errors.hpp"

namespace cmcl {

namespace {

namespace fs = std::filesystem;

// Maps JSON pointers ("/train/eta", "/steps/0/pair") to the 1-based line on
// which the value starts. The text has already been accepted by the parser,
// so the scan only needs to track structure.
class LineIndex {
 public:
  explicit LineIndex(const std::string& text) : text_(text) {
    skip_ws();
    if (pos_ < text_.size()) value("");
  }

  int line_of(std::string ptr) const {
    while (true) {
      auto it = lines_.find(ptr);
      if (it != lines_.end()) return it->second;
      if (ptr.empty()) return 1;
      ptr.erase(ptr.rfind('/'));
    }
  }

 private:
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
      if (text_[pos_] == '\n') ++line_;
      ++pos_;
    }
  }

  std::string string_token() {
    std::string out;
    ++pos_;  // opening quote
    while (pos_ < text_.size() && text_[pos_] != '"') {
      if (text_[pos_] == '\\') ++pos_;
      if (pos_ < text_.size()) out += text_[pos_++];
    }
    ++pos_;
    return out;
  }

  void value(const std::string& ptr) {
    skip_ws();
    lines_.emplace(ptr, line_);
    if (pos_ >= text_.size()) return;
    const char c = text_[pos_];
    if (c == '{') {
      ++pos_;
      skip_ws();
      while (pos_ < text_.size() && text_[pos_] != '}') {
        const std::string key = string_token();
        skip_ws();
        ++pos_;  // ':'
        value(ptr + "/" + key);
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == ',') ++pos_;
        skip_ws();
      }
      ++pos_;
    } else if (c == '[') {
      ++pos_;
      skip_ws();
      std::size_t idx = 0;
      while (pos_ < text_.size() && text_[pos_] != ']') {
        value(ptr + "/" + std::to_string(idx++));
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == ',') ++pos_;
        skip_ws();
      }
      ++pos_;
    } else if (c == '"') {
      string_token();
    } else {
      while (pos_ < text_.size() && !std::strchr(",}] \t\r\n", text_[pos_])) ++pos_;
    }
  }

  const std::string& text_;
  std::size_t pos_ = 0;
  int line_ = 1;
  std::map<std::string, int> lines_;
};

class Parser {
 public:
  Parser(const std::string& text, std::string origin) : index_(text), origin_(std::move(origin)) {}

  [[noreturn]] void fail(const std::string& ptr, const std::string& msg) const {
    throw ConfigError(origin_ + ":" + std::to_string(index_.line_of(ptr)) + ": " + msg);
  }

  static std::string dotted(const std::string& ptr) {
    std::string s = ptr.substr(ptr.empty() ? 0 : 1);
    for (char& c : s) {
      if (c == '/') c = '.';
    }
    return s;
  }

  void only_keys(const Json& obj, const std::string& ptr, std::set<std::string> allowed) const {
    if (!obj.is_object()) fail(ptr, (ptr.empty() ? "document" : dotted(ptr)) + " must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      if (!allowed.count(it.key())) {
        fail(ptr + "/" + it.key(), "unknown key '" + dotted(ptr + "/" + it.key()) + "'");
      }
    }
  }

  double number(const Json& obj, const std::string& ptr, const std::string& key,
                std::optional<double> dflt) const {
    const std::string p = ptr + "/" + key;
    if (!obj.contains(key)) {
      if (dflt) return *dflt;
      fail(ptr, "missing required key '" + dotted(p) + "'");
    }
    const Json& v = obj.at(key);
    if (!v.is_number()) fail(p, dotted(p) + " must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(p, dotted(p) + " must be finite");
    return d;
  }

  double non_negative(const Json& obj, const std::string& ptr, const std::string& key,
                      std::optional<double> dflt) const {
    const double v = number(obj, ptr, key, dflt);
    if (v < 0.0) fail(ptr + "/" + key, dotted(ptr + "/" + key) + " must be >= 0");
    return v;
  }

  std::uint64_t count(const Json& obj, const std::string& ptr, const std::string& key,
                      std::optional<std::uint64_t> dflt) const {
    const std::string p = ptr + "/" + key;
    if (!obj.contains(key)) {
      if (dflt) return *dflt;
      fail(ptr, "missing required key '" + dotted(p) + "'");
    }
    const Json& v = obj.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                   v.get<std::int64_t>() < 0)) {
      fail(p, dotted(p) + " must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  bool boolean(const Json& obj, const std::string& ptr, const std::string& key, bool dflt) const {
    if (!obj.contains(key)) return dflt;
    const Json& v = obj.at(key);
    if (!v.is_boolean()) fail(ptr + "/" + key, dotted(ptr + "/" + key) + " must be true or false");
    return v.get<bool>();
  }

  std::string str(const Json& obj, const std::string& ptr, const std::string& key,
                  std::optional<std::string> dflt) const {
    const std::string p = ptr + "/" + key;
    if (!obj.contains(key)) {
      if (dflt) return *dflt;
      fail(ptr, "missing required key '" + dotted(p) + "'");
    }
    const Json& v = obj.at(key);
    if (!v.is_string() || v.get<std::string>().empty()) {
      fail(p, dotted(p) + " must be a non-empty string");
    }
    return v.get<std::string>();
  }

 private:
  LineIndex index_;
  std::string origin_;
};

WorldParams parse_world(const Parser& p, const Json& w) {
  p.only_keys(w, "/world",
              {"latent_dim", "feature_dim", "modalities", "noise_scale", "n_classes",
               "class_spread", "prototype_modality", "domain_dim"});
  WorldParams wp;
  wp.latent_dim = p.count(w, "/world", "latent_dim", 8);
  wp.feature_dim = p.count(w, "/world", "feature_dim", std::nullopt);
  if (wp.latent_dim == 0) p.fail("/world/latent_dim", "world.latent_dim must be >= 1");
  if (wp.feature_dim == 0) p.fail("/world/feature_dim", "world.feature_dim must be >= 1");
  if (!w.contains("modalities") || !w.at("modalities").is_array() ||
      w.at("modalities").empty()) {
    p.fail(w.contains("modalities") ? "/world/modalities" : "/world",
           "world.modalities must be a non-empty array of names");
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < w.at("modalities").size(); ++i) {
    const Json& m = w.at("modalities")[i];
    const std::string ptr = "/world/modalities/" + std::to_string(i);
    if (!m.is_string() || m.get<std::string>().empty()) p.fail(ptr, "modality names must be non-empty strings");
    if (!seen.insert(m.get<std::string>()).second) {
      p.fail(ptr, "duplicate modality '" + m.get<std::string>() + "'");
    }
    wp.modalities.push_back(m.get<std::string>());
  }
  wp.noise_scale = p.non_negative(w, "/world", "noise_scale", 0.0);
  wp.n_classes = p.count(w, "/world", "n_classes", 0);
  if (wp.n_classes == 1) p.fail("/world/n_classes", "world.n_classes must be 0 or >= 2");
  wp.class_spread = p.non_negative(w, "/world", "class_spread", 0.5);
  wp.prototype_modality = p.str(w, "/world", "prototype_modality", std::string());
  if (!wp.prototype_modality.empty() && !seen.count(wp.prototype_modality)) {
    p.fail("/world/prototype_modality", "world.prototype_modality is not a listed modality");
  }
  wp.domain_dim = p.count(w, "/world", "domain_dim", 0);
  if (wp.domain_dim > wp.latent_dim) p.fail("/world/domain_dim", "world.domain_dim exceeds latent_dim");
  return wp;
}

ModalityPair parse_pair(const Parser& p, const Json& s, const std::string& ptr) {
  if (!s.contains("pair")) p.fail(ptr, "missing required key 'pair'");
  const Json& pr = s.at("pair");
  if (!pr.is_array() || pr.size() != 2 || !pr[0].is_string() || !pr[1].is_string()) {
    p.fail(ptr + "/pair", "pair must be an array of two modality names");
  }
  ModalityPair pair{ModalityId(pr[0].get<std::string>()), ModalityId(pr[1].get<std::string>())};
  if (pair.first == pair.second) p.fail(ptr + "/pair", "pair members must differ");
  return pair;
}

StepEntry parse_step(const Parser& p, const Json& s, const std::string& ptr,
                     const std::optional<WorldParams>& world) {
  p.only_keys(s, ptr,
              {"pair", "n_train", "n_test", "noise_scale", "misalign_fraction", "class_begin",
               "class_count", "domain", "source"});
  StepEntry e;
  e.spec.pair = parse_pair(p, s, ptr);
  e.spec.n_train = p.count(s, ptr, "n_train", std::nullopt);
  if (e.spec.n_train < 2) p.fail(ptr + "/n_train", "n_train must be >= 2");
  e.spec.noise_scale = p.non_negative(s, ptr, "noise_scale", 0.0);
  e.spec.misalign_fraction = p.non_negative(s, ptr, "misalign_fraction", 0.0);
  if (e.spec.misalign_fraction > 0.5) {
    p.fail(ptr + "/misalign_fraction", "misalign_fraction must be in [0, 0.5]");
  }
  e.spec.class_begin = p.count(s, ptr, "class_begin", 0);
  e.spec.class_count = p.count(s, ptr, "class_count", 0);
  e.spec.domain = p.count(s, ptr, "domain", 0);
  if (s.contains("source")) {
    const Json& src = s.at("source");
    const std::string sp = ptr + "/source";
    p.only_keys(src, sp, {"a", "b", "labels", "prototypes", "prototype_modality"});
    StepSource so;
    so.a = p.str(src, sp, "a", std::nullopt);
    so.b = p.str(src, sp, "b", std::nullopt);
    if (src.contains("labels")) so.labels = p.str(src, sp, "labels", std::nullopt);
    if (src.contains("prototypes")) so.prototypes = p.str(src, sp, "prototypes", std::nullopt);
    so.prototype_modality = p.str(src, sp, "prototype_modality", std::string("text"));
    e.source = so;
  } else {
    if (!world) p.fail(ptr, "synthetic step needs a 'world' section");
    e.spec.n_test = p.count(s, ptr, "n_test", std::nullopt);
    if (e.spec.n_test == 0) p.fail(ptr + "/n_test", "n_test must be >= 1");
    std::set<std::string> names(world->modalities.begin(), world->modalities.end());
    for (const ModalityId& m : {e.spec.pair.first, e.spec.pair.second}) {
      if (!names.count(m.name)) p.fail(ptr + "/pair", "unknown modality '" + m.name + "'");
    }
    if (world->n_classes > 0 &&
        (e.spec.class_begin >= world->n_classes ||
         e.spec.class_begin + e.spec.class_count > world->n_classes)) {
      p.fail(ptr, "class range outside the world's classes");
    }
  }
  return e;
}

TrainConfig parse_train(const Parser& p, const Json& t) {
  p.only_keys(t, "/train",
              {"eta", "epochs", "batch_size", "lambda_min", "weight_decay", "optimizer", "tau",
               "symmetric", "normalize_in_loss", "method", "mode", "probes"});
  TrainConfig c;
  try {
    c.mode = parse_mode(p.str(t, "/train", "mode", std::string("benchmark")));
  } catch (const ConfigError& e) {
    p.fail("/train/mode", e.what());
  }
  const bool verify = c.mode == Mode::kVerify;
  c.eta = p.non_negative(t, "/train", "eta", verify ? 1e-3 : 1e-4);
  c.epochs = p.count(t, "/train", "epochs", 5);
  c.batch_size = p.count(t, "/train", "batch_size", verify ? 0 : 64);
  c.lambda_min = p.non_negative(t, "/train", "lambda_min", verify ? 0.0 : 0.01);
  c.weight_decay = p.non_negative(t, "/train", "weight_decay", verify ? 0.0 : 0.001);
  try {
    c.optimizer = parse_optimizer(p.str(t, "/train", "optimizer", std::string(verify ? "sgd" : "adaptive")));
    c.method = parse_method(p.str(t, "/train", "method", std::string("dns")));
  } catch (const ConfigError& e) {
    p.fail(t.contains("optimizer") ? "/train/optimizer" : "/train/method", e.what());
  }
  c.loss.tau = p.number(t, "/train", "tau", 0.07);
  if (!(c.loss.tau > 0.0)) p.fail("/train/tau", "train.tau must be > 0");
  c.loss.symmetric = p.boolean(t, "/train", "symmetric", true);
  c.loss.normalize_in_loss = p.boolean(t, "/train", "normalize_in_loss", false);
  c.probes = p.boolean(t, "/train", "probes", verify);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    p.fail("/train", e.what());
  }
  return c;
}

std::string resolve(const std::string& base, const std::string& path) {
  const fs::path p(path);
  return p.is_absolute() ? path : (fs::path(base) / p).string();
}

Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json matrix_json(const ScoreTable& t) {
  Json rows = Json::array();
  for (const auto& r : t) {
    Json row = Json::array();
    for (const auto& v : r) row.push_back(opt_json(v));
    rows.push_back(row);
  }
  return rows;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string run_dir(const std::string& out, Method m, std::uint64_t seed) {
  return (fs::path(out) / to_string(m) / ("seed_" + std::to_string(seed))).string();
}

void write_run(const std::string& dir, const ExperimentConfig& cfg, const RunLog& log, Method m,
               std::uint64_t seed, bool inline_timings, const std::string& abort_message) {
  Json report = report_json(cfg, log, m, seed, inline_timings);
  if (!abort_message.empty()) report["aborted"] = abort_message;
  write_text_file(dir + "/report.json", dump_json(report));
  write_text_file(dir + "/timings.json", dump_json(timings_json(log)));
  for (const StepResult& s : log.steps) {
    write_text_file(dir + "/loss_step" + std::to_string(s.index) + ".csv", loss_curve_csv(s));
  }
  write_text_file(dir + "/stability.csv", stability_csv(log));
  write_text_file(dir + "/plasticity.csv", plasticity_csv(log));
}

Json stat_json(const std::vector<double>& xs) {
  Json j;
  j["n"] = xs.size();
  if (xs.empty()) {
    j["mean"] = nullptr;
    j["std"] = nullptr;
    return j;
  }
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  j["mean"] = mean;
  if (xs.size() < 2) {
    j["std"] = nullptr;
  } else {
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    j["std"] = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return j;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& origin,
                              const std::string& base_dir) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    std::size_t line = 1;
    for (std::size_t i = 0; i < e.byte && i < text.size(); ++i) line += text[i] == '\n';
    throw ConfigError(origin + ":" + std::to_string(line) + ": malformed JSON (" + e.what() + ")");
  }
  const Parser p(text, origin);
  p.only_keys(doc, "", {"seed", "seeds", "methods", "world", "steps", "train"});

  ExperimentConfig cfg;
  cfg.document = doc;
  cfg.base_dir = base_dir;
  if (doc.contains("seed") && doc.contains("seeds")) p.fail("/seeds", "give either 'seed' or 'seeds', not both");
  if (doc.contains("seeds")) {
    const Json& s = doc.at("seeds");
    if (!s.is_array() || s.empty()) p.fail("/seeds", "seeds must be a non-empty array");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!s[i].is_number_unsigned()) p.fail("/seeds/" + std::to_string(i), "seeds must be non-negative integers");
      cfg.seeds.push_back(s[i].get<std::uint64_t>());
    }
  } else {
    cfg.seeds.push_back(p.count(doc, "", "seed", 0));
  }

  if (doc.contains("world")) cfg.world = parse_world(p, doc.at("world"));
  if (!doc.contains("steps") || !doc.at("steps").is_array() || doc.at("steps").empty()) {
    p.fail(doc.contains("steps") ? "/steps" : "", "steps must be a non-empty array");
  }
  for (std::size_t i = 0; i < doc.at("steps").size(); ++i) {
    cfg.steps.push_back(parse_step(p, doc.at("steps")[i], "/steps/" + std::to_string(i), cfg.world));
  }
  cfg.train = parse_train(p, doc.contains("train") ? doc.at("train") : Json::object());

  if (doc.contains("methods")) {
    const Json& ms = doc.at("methods");
    if (!ms.is_array() || ms.empty()) p.fail("/methods", "methods must be a non-empty array");
    for (std::size_t i = 0; i < ms.size(); ++i) {
      const std::string ptr = "/methods/" + std::to_string(i);
      if (!ms[i].is_string()) p.fail(ptr, "methods entries must be strings");
      try {
        cfg.methods.push_back(parse_method(ms[i].get<std::string>()));
      } catch (const ConfigError& e) {
        p.fail(ptr, e.what());
      }
    }
  } else if (doc.contains("train") && doc.at("train").contains("method")) {
    cfg.methods.push_back(cfg.train.method);
  } else {
    cfg.methods = {Method::kVanilla, Method::kDns};
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError(path + ": cannot open config");
  std::ostringstream s;
  s << f.rdbuf();
  const fs::path parent = fs::path(path).parent_path();
  return parse_config(s.str(), path, parent.empty() ? "." : parent.string());
}

void apply_overrides(ExperimentConfig& cfg, const RunOverrides& o) {
  if (o.seeds) {
    if (o.seeds->empty()) throw ConfigError("--seeds: at least one seed required");
    cfg.seeds = *o.seeds;
  }
  if (o.methods) {
    if (o.methods->empty()) throw ConfigError("--methods: at least one method required");
    cfg.methods = *o.methods;
  }
  if (o.mode) {
    cfg.train.mode = *o.mode;
    if (*o.mode == Mode::kVerify) {
      cfg.train.optimizer = Optimizer::kSgd;
      cfg.train.weight_decay = 0.0;
      cfg.train.lambda_min = 0.0;
      cfg.train.loss.normalize_in_loss = false;
      cfg.train.probes = true;
    }
  }
  cfg.train.validate();
}

std::vector<StepDataset> build_steps(const ExperimentConfig& cfg, std::uint64_t seed) {
  std::optional<SyntheticWorld> world;
  if (cfg.world) {
    WorldParams wp = *cfg.world;
    wp.seed = seed;
    world = build_world(wp);
  }
  std::vector<StepDataset> out;
  for (std::size_t t = 0; t < cfg.steps.size(); ++t) {
    const StepEntry& e = cfg.steps[t];
    if (e.source) {
      const StepSource& s = *e.source;
      auto opt_path = [&](const std::optional<std::string>& p) -> std::optional<std::string> {
        if (!p) return std::nullopt;
        return resolve(cfg.base_dir, *p);
      };
      out.push_back(load_embeddings(e.spec.pair, resolve(cfg.base_dir, s.a),
                                    resolve(cfg.base_dir, s.b), e.spec.n_train,
                                    opt_path(s.labels), opt_path(s.prototypes),
                                    ModalityId(s.prototype_modality)));
      if (out.back().n_test() == 0) {
        throw ConfigError("step " + std::to_string(t) + ": n_train leaves no test rows");
      }
    } else {
      out.push_back(gen_step(*world, e.spec, derive_seed(seed, 100 + t)));
    }
    if (out.back().z_a.rows() != out.front().z_a.rows()) {
      throw ConfigError("step " + std::to_string(t) + ": feature dimension differs from step 0");
    }
  }
  return out;
}

TrainConfig train_config_for(const ExperimentConfig& cfg, Method method, std::uint64_t seed) {
  TrainConfig t = cfg.train;
  t.method = method;
  t.seed = seed;
  return t;
}

Json train_config_json(const TrainConfig& t) {
  Json j;
  j["eta"] = t.eta;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["lambda_min"] = t.lambda_min;
  j["weight_decay"] = t.weight_decay;
  j["optimizer"] = to_string(t.optimizer);
  j["mode"] = to_string(t.mode);
  j["method"] = to_string(t.method);
  j["seed"] = t.seed;
  j["tau"] = t.loss.tau;
  j["symmetric"] = t.loss.symmetric;
  j["normalize_in_loss"] = t.loss.normalize_in_loss;
  j["probes"] = t.probes;
  return j;
}

Json timings_json(const RunLog& log) {
  Json steps = Json::array();
  double total = 0.0, proj = 0.0;
  for (const StepResult& s : log.steps) {
    Json j;
    j["index"] = s.index;
    j["duration_s"] = s.duration_s;
    j["projection_s"] = s.projection_s;
    steps.push_back(j);
    total += s.duration_s;
    proj += s.projection_s;
  }
  Json out;
  out["per_step"] = steps;
  out["total_s"] = total;
  out["projection_total_s"] = proj;
  return out;
}

Json report_json(const ExperimentConfig& cfg, const RunLog& log, Method method,
                 std::uint64_t seed, bool inline_timings) {
  Json r;
  Json echo;
  echo["document"] = cfg.document;
  echo["train"] = train_config_json(train_config_for(cfg, method, seed));
  echo["method"] = to_string(method);
  echo["seed"] = seed;
  r["config_echo"] = echo;

  Json per_step = Json::array();
  for (std::size_t t = 0; t < log.steps.size(); ++t) {
    const StepResult& s = log.steps[t];
    Json j;
    j["index"] = s.index;
    j["pair"] = s.pair.label();
    j["loss_curve_ref"] = "loss_step" + std::to_string(s.index) + ".csv";
    j["duration_s"] = inline_timings ? Json(s.duration_s) : Json(nullptr);
    j["epoch_mean_loss"] = s.epoch_mean_loss;
    Json row = Json::array();
    if (t < log.scores.size()) {
      for (std::size_t i = 0; i < log.scores[t].size(); ++i) {
        const StepScores& sc = log.scores[t][i];
        Json c;
        c["dataset"] = i;
        c["acc"] = opt_json(sc.acc);
        c["recall1"] = sc.recall1;
        c["recall5"] = sc.recall5;
        c["recall10"] = sc.recall10;
        row.push_back(c);
      }
    }
    j["metrics_row"] = row;
    Json ranks;
    ranks["right_a"] = s.rank_right_a;
    ranks["left_a"] = s.rank_left_a;
    ranks["right_b"] = s.rank_right_b;
    ranks["left_b"] = s.rank_left_b;
    j["projector_ranks"] = ranks;
    Json hashes;
    for (const auto& [m, h] : s.hash_after) hashes[m.name] = hex64(h);
    j["weight_hash_after"] = hashes;
    per_step.push_back(j);
  }
  r["per_step"] = per_step;

  Json rm;
  rm["acc"] = matrix_json(log.acc_table());
  rm["recall1"] = matrix_json(log.table(&StepScores::recall1));
  rm["recall5"] = matrix_json(log.table(&StepScores::recall5));
  rm["recall10"] = matrix_json(log.table(&StepScores::recall10));
  r["R_matrix"] = rm;

  const RunSummary sum = summarize(log, method, seed);
  Json bw;
  bw["acc"] = opt_json(sum.bwt_acc);
  bw["recall10"] = opt_json(sum.bwt_recall10);
  r["bwt"] = bw;
  Json fin;
  fin["acc"] = opt_json(sum.final_acc);
  fin["recall1"] = sum.final_recall1;
  fin["recall5"] = sum.final_recall5;
  fin["recall10"] = sum.final_recall10;
  r["final"] = fin;

  Json stab = Json::array();
  for (const StabilityProbe& p : log.stability) {
    Json j;
    j["step"] = p.step;
    j["deviation"] = p.deviation;
    j["deviation_fro"] = p.deviation_fro;
    j["bound_rhs"] = p.bound_rhs;
    j["z_norm_a"] = p.z_norm_a;
    j["z_norm_b"] = p.z_norm_b;
    j["grad_norm_a"] = p.grad_norm_a;
    j["grad_norm_b"] = p.grad_norm_b;
    stab.push_back(j);
  }
  r["stability_probes"] = stab;
  Json plas = Json::array();
  for (const PlasticitySummary& p : log.plasticity) {
    Json j;
    j["step"] = p.step;
    j["updates"] = p.updates;
    j["mean_high_order"] = p.mean_high_order;
    j["mean_high_order_over_eta"] = p.mean_high_order_over_eta;
    j["min_inner_ratio"] = p.min_inner_ratio;
    plas.push_back(j);
  }
  r["plasticity_probes"] = plas;

  if (inline_timings) {
    r["timings"] = timings_json(log);
  } else {
    Json t;
    t["file"] = "timings.json";
    r["timings"] = t;
  }
  return r;
}

RunSummary summarize(const RunLog& log, Method method, std::uint64_t seed) {
  RunSummary s;
  s.method = method;
  s.seed = seed;
  s.bwt_acc = bwt(log.acc_table());
  s.bwt_recall10 = bwt(log.table(&StepScores::recall10));
  if (!log.scores.empty()) {
    const auto& last = log.scores.back();
    double acc = 0.0;
    std::size_t n_acc = 0;
    for (const StepScores& sc : last) {
      s.final_recall1 += sc.recall1;
      s.final_recall5 += sc.recall5;
      s.final_recall10 += sc.recall10;
      if (sc.acc) {
        acc += *sc.acc;
        ++n_acc;
      }
    }
    const auto n = static_cast<double>(last.size());
    s.final_recall1 /= n;
    s.final_recall5 /= n;
    s.final_recall10 /= n;
    if (n_acc > 0) s.final_acc = acc / static_cast<double>(n_acc);
  }
  for (const StepResult& r : log.steps) {
    s.mean_step_s += r.duration_s;
    s.mean_projection_s += r.projection_s;
  }
  if (!log.steps.empty()) {
    s.mean_step_s /= static_cast<double>(log.steps.size());
    s.mean_projection_s /= static_cast<double>(log.steps.size());
  }
  return s;
}

Json aggregate_json(const std::vector<RunSummary>& runs) {
  std::map<std::string, std::map<std::string, std::vector<double>>> by;
  std::set<std::uint64_t> seeds;
  for (const RunSummary& r : runs) {
    auto& m = by[to_string(r.method)];
    seeds.insert(r.seed);
    if (r.bwt_acc) m["bwt_acc"].push_back(*r.bwt_acc);
    if (r.bwt_recall10) m["bwt_recall10"].push_back(*r.bwt_recall10);
    if (r.final_acc) m["final_acc"].push_back(*r.final_acc);
    m["final_recall1"].push_back(r.final_recall1);
    m["final_recall5"].push_back(r.final_recall5);
    m["final_recall10"].push_back(r.final_recall10);
  }
  Json out;
  Json methods = Json::object();
  for (const auto& [name, metrics] : by) {
    Json mj;
    for (const char* key : {"bwt_acc", "bwt_recall10", "final_acc", "final_recall1",
                            "final_recall5", "final_recall10"}) {
      auto it = metrics.find(key);
      mj[key] = stat_json(it == metrics.end() ? std::vector<double>{} : it->second);
    }
    methods[name] = mj;
  }
  out["methods"] = methods;
  out["seeds"] = Json(std::vector<std::uint64_t>(seeds.begin(), seeds.end()));
  return out;
}

Json aggregate_timings_json(const std::vector<RunSummary>& runs) {
  std::map<std::string, std::pair<double, double>> sums;
  std::map<std::string, std::size_t> counts;
  for (const RunSummary& r : runs) {
    auto& s = sums[to_string(r.method)];
    s.first += r.mean_step_s;
    s.second += r.mean_projection_s;
    ++counts[to_string(r.method)];
  }
  Json out;
  for (const auto& [name, s] : sums) {
    const auto n = static_cast<double>(counts[name]);
    out[name]["mean_step_s"] = s.first / n;
    out[name]["mean_projection_s"] = s.second / n;
  }
  if (sums.count("dns") && sums.count("vanilla") && sums["vanilla"].first > 0.0) {
    const double dns_proj = sums["dns"].second / static_cast<double>(counts["dns"]);
    const double van_step = sums["vanilla"].first / static_cast<double>(counts["vanilla"]);
    out["projection_overhead_ratio"] = dns_proj / van_step;
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                                const RunOptions& opts) {
  ExperimentResult res;
  for (std::uint64_t seed : cfg.seeds) {
    const std::vector<StepDataset> steps = build_steps(cfg, seed);
    for (Method m : cfg.methods) {
      const TrainConfig tc = train_config_for(cfg, m, seed);
      const std::string dir = run_dir(out_dir, m, seed);
      RunLog partial;
      try {
        const RunLog log =
            run_sequence(steps, tc, [&partial](const RunLog& l) { partial = l; });
        write_run(dir, cfg, log, m, seed, opts.inline_timings, "");
        res.runs.push_back(summarize(log, m, seed));
        if (!opts.quiet) {
          const RunSummary& s = res.runs.back();
          std::printf("%-8s seed %-6llu bwt_acc %s  bwt_r10 %s  final_acc %s\n",
                      to_string(m).c_str(), static_cast<unsigned long long>(seed),
                      s.bwt_acc ? format_double(*s.bwt_acc).substr(0, 8).c_str() : "n/a",
                      s.bwt_recall10 ? format_double(*s.bwt_recall10).substr(0, 8).c_str() : "n/a",
                      s.final_acc ? format_double(*s.final_acc).substr(0, 8).c_str() : "n/a");
        }
      } catch (const NumericalError& e) {
        write_run(dir, cfg, partial, m, seed, opts.inline_timings, e.what());
        res.exit_code = kExitNumerical;
        res.message = to_string(m) + " seed " + std::to_string(seed) + ": " + e.what();
        write_text_file(out_dir + "/aggregate.json", dump_json(aggregate_json(res.runs)));
        return res;
      }
    }
  }
  write_text_file(out_dir + "/aggregate.json", dump_json(aggregate_json(res.runs)));
  write_text_file(out_dir + "/aggregate_timings.json", dump_json(aggregate_timings_json(res.runs)));
  return res;
}

void gen_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  for (std::uint64_t seed : cfg.seeds) {
    const std::string dir = (fs::path(out_dir) / ("seed_" + std::to_string(seed))).string();
    fs::create_directories(dir);
    std::optional<SyntheticWorld> world;
    if (cfg.world) {
      WorldParams wp = *cfg.world;
      wp.seed = seed;
      world = build_world(wp);
    }
    Json doc = cfg.document;
    doc.erase("world");
    doc.erase("seed");
    doc["seeds"] = Json::array({seed});
    Json steps = Json::array();
    for (std::size_t t = 0; t < cfg.steps.size(); ++t) {
      const StepEntry& e = cfg.steps[t];
      StepTables tables;
      if (e.source) {
        const StepDataset ds = build_steps(cfg, seed).at(t);
        tables.pair = ds.pair;
        tables.z_a = ds.z_a;
        tables.z_b = ds.z_b;
        tables.n_train = ds.n_train;
        tables.labels = ds.labels;
        tables.class_prototypes = ds.class_prototypes;
        tables.prototype_modality = ds.prototype_modality;
      } else {
        tables = gen_step_tables(*world, e.spec, derive_seed(seed, 100 + t));
      }
      const std::string stem = "step" + std::to_string(t) + "_";
      Json src;
      src["a"] = stem + tables.pair.first.name + ".emb";
      src["b"] = stem + tables.pair.second.name + ".emb";
      write_embeddings(dir + "/" + src["a"].get<std::string>(), tables.z_a);
      write_embeddings(dir + "/" + src["b"].get<std::string>(), tables.z_b);
      if (tables.labels) {
        src["labels"] = stem + "labels.emb";
        write_labels(dir + "/" + src["labels"].get<std::string>(), *tables.labels);
      }
      if (tables.class_prototypes.cols() > 0) {
        src["prototypes"] = stem + "prototypes.emb";
        write_embeddings(dir + "/" + src["prototypes"].get<std::string>(), tables.class_prototypes);
      }
      src["prototype_modality"] = tables.prototype_modality.name;
      Json step;
      step["pair"] = Json::array({tables.pair.first.name, tables.pair.second.name});
      step["n_train"] = tables.n_train;
      step["source"] = src;
      steps.push_back(step);
    }
    doc["steps"] = steps;
    write_text_file(dir + "/config.json", dump_json(doc));
  }
}

}  // namespace cmcl
