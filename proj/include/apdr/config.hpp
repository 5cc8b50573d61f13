#pragma once

// RunConfig: the merged settings of one command (generator, model, training,
// evaluation, paths) with a record of where each value came from.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "apdr/dataset.hpp"
#include "apdr/errors.hpp"
#include "apdr/evaluation.hpp"
#include "apdr/model.hpp"
#include "apdr/training.hpp"

namespace apdr {

enum class Source { default_value, file, flag };

inline const char* source_name(Source s) {
  switch (s) {
    case Source::default_value: return "default";
    case Source::file: return "file";
    case Source::flag: return "flag";
  }
  return "?";
}

// Network sizes that do not come from the dataset. `masks` picks the mask
// layout: the dataset schema as is, one shared mask, or one per attribute.
struct ModelSettings {
  std::array<std::size_t, 4> widths = ModelConfig{}.widths;
  std::size_t feat_dim = 256;
  std::size_t fusion_dim = 256;
  std::size_t attr_dim = 64;
  std::size_t gate_hidden = 64;
  std::string masks = "dataset";

  bool operator==(const ModelSettings&) const = default;
};

struct EvalSettings {
  std::string branch = "auto";  // auto: full for stage-2 checkpoints, global otherwise
  bool rerank = false;
  std::size_t k1 = 20;
  std::size_t k2 = 6;
  double rerank_lambda = 0.3;
  double mask_threshold = 0.5;
  std::size_t probes = 4;

  bool operator==(const EvalSettings&) const = default;
};

struct PathSettings {
  std::string data;        // dataset directory (holds manifest.json)
  std::string out;         // output directory
  std::string checkpoint;  // eval / inspect-masks input
  std::string resume;      // train: continue from this checkpoint

  bool operator==(const PathSettings&) const = default;
};

struct GradcheckSettings {
  std::string op;  // empty: every op plus the end-to-end model
  std::size_t seeds = 10;
  double op_tolerance = 1e-4;
  double model_tolerance = 1e-3;

  bool operator==(const GradcheckSettings&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelSettings& m) {
  j = {{"widths", m.widths},         {"feat_dim", m.feat_dim},       {"fusion_dim", m.fusion_dim},
       {"attr_dim", m.attr_dim},     {"gate_hidden", m.gate_hidden}, {"masks", m.masks}};
}
inline void from_json(const nlohmann::json& j, ModelSettings& m) {
  j.at("widths").get_to(m.widths);
  j.at("feat_dim").get_to(m.feat_dim);
  j.at("fusion_dim").get_to(m.fusion_dim);
  j.at("attr_dim").get_to(m.attr_dim);
  j.at("gate_hidden").get_to(m.gate_hidden);
  j.at("masks").get_to(m.masks);
}
inline void to_json(nlohmann::json& j, const EvalSettings& e) {
  j = {{"branch", e.branch}, {"rerank", e.rerank},         {"k1", e.k1},       {"k2", e.k2},
       {"rerank_lambda", e.rerank_lambda}, {"mask_threshold", e.mask_threshold}, {"probes", e.probes}};
}
inline void from_json(const nlohmann::json& j, EvalSettings& e) {
  j.at("branch").get_to(e.branch);
  j.at("rerank").get_to(e.rerank);
  j.at("k1").get_to(e.k1);
  j.at("k2").get_to(e.k2);
  j.at("rerank_lambda").get_to(e.rerank_lambda);
  j.at("mask_threshold").get_to(e.mask_threshold);
  j.at("probes").get_to(e.probes);
}
inline void to_json(nlohmann::json& j, const PathSettings& p) {
  j = {{"data", p.data}, {"out", p.out}, {"checkpoint", p.checkpoint}, {"resume", p.resume}};
}
inline void from_json(const nlohmann::json& j, PathSettings& p) {
  j.at("data").get_to(p.data);
  j.at("out").get_to(p.out);
  j.at("checkpoint").get_to(p.checkpoint);
  j.at("resume").get_to(p.resume);
}
inline void to_json(nlohmann::json& j, const GradcheckSettings& g) {
  j = {{"op", g.op}, {"seeds", g.seeds}, {"op_tolerance", g.op_tolerance}, {"model_tolerance", g.model_tolerance}};
}
inline void from_json(const nlohmann::json& j, GradcheckSettings& g) {
  j.at("op").get_to(g.op);
  j.at("seeds").get_to(g.seeds);
  j.at("op_tolerance").get_to(g.op_tolerance);
  j.at("model_tolerance").get_to(g.model_tolerance);
}

// ---------------------------------------------------------------------------
// Presets: the ablation rows, each a small patch over the defaults.

struct Preset {
  std::string name;
  std::string description;
  nlohmann::json patch;  // section -> key -> value
};

inline const std::vector<Preset>& presets() {
  static const std::vector<Preset> all = {
      {"baseline", "identity loss only, scored on g",
       {{"stage", "1"}, {"train", {{"lambda", 0.0}, {"use_triplet", false}}}, {"eval", {{"branch", "global"}}}}},
      {"baseline-triplet", "identity + triplet loss, scored on g",
       {{"stage", "1"}, {"train", {{"lambda", 0.0}, {"use_triplet", true}}}, {"eval", {{"branch", "global"}}}}},
      {"ablation-K1", "full model with one mask shared by every attribute",
       {{"stage", "both"}, {"model", {{"masks", "single"}}}, {"eval", {{"branch", "full"}}}}},
      {"ablation-K12", "full model with one mask per attribute group",
       {{"stage", "both"}, {"model", {{"masks", "per-attribute"}}}, {"eval", {{"branch", "full"}}}}},
      {"perceptual", "stage 1 with attribute supervision, scored on g",
       {{"stage", "1"}, {"eval", {{"branch", "global"}}}}},
      {"part", "both stages, scored on the concatenated part features",
       {{"stage", "both"}, {"eval", {{"branch", "part"}}}}},
      {"refined-part", "both stages, scored on the refined part features",
       {{"stage", "both"}, {"eval", {{"branch", "refined-part"}}}}},
      {"apdr", "both stages, scored on f = [f_p, g]", {{"stage", "both"}}},
  };
  return all;
}

inline const Preset& find_preset(const std::string& name) {
  for (const auto& p : presets())
    if (p.name == name) return p;
  std::string known;
  for (const auto& p : presets()) known += (known.empty() ? "" : ", ") + p.name;
  throw ConfigError("unknown preset '" + name + "' (known: " + known + ")");
}

// ---------------------------------------------------------------------------

struct RunConfig {
  std::string command;
  std::string preset = "apdr";
  std::string stage = "both";  // 1, 2 or both
  std::uint64_t seed = 1;
  bool force = false;
  PathSettings paths;
  GeneratorConfig generator;
  ModelSettings model;
  TrainConfig train;
  EvalSettings eval;
  GradcheckSettings gradcheck;
  std::map<std::string, Source> provenance;  // dotted key -> origin

  Source source_of(const std::string& key) const {
    auto it = provenance.find(key);
    return it == provenance.end() ? Source::default_value : it->second;
  }

  // The training settings with the run seed applied.
  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = seed;
    return t;
  }

  AttributeSchema model_schema(const AttributeSchema& data) const {
    if (model.masks == "dataset") return data;
    if (model.masks == "single") return data.single_mask();
    if (model.masks == "per-attribute") return data.mask_per_attribute();
    throw ConfigError("model.masks must be dataset, single or per-attribute, got '" + model.masks + "'");
  }

  // Network for a dataset: schema, image size and class count come from the
  // manifest, the rest from `model`.
  ModelConfig model_config(const DatasetManifest& m) const {
    ModelConfig c;
    c.schema = model_schema(m.schema);
    c.geometry = m.geometry;
    c.widths = model.widths;
    c.feat_dim = model.feat_dim;
    c.fusion_dim = model.fusion_dim;
    c.attr_dim = model.attr_dim;
    c.gate_hidden = model.gate_hidden;
    c.num_train_ids = m.train_identities().size();
    c.validate();
    return c;
  }

  RerankConfig rerank_config() const { return {eval.k1, eval.k2, eval.rerank_lambda}; }

  void validate() const {
    if (stage != "1" && stage != "2" && stage != "both") throw ConfigError("stage must be 1, 2 or both, got '" + stage + "'");
    find_preset(preset);
    if (model.masks != "dataset" && model.masks != "single" && model.masks != "per-attribute")
      throw ConfigError("model.masks must be dataset, single or per-attribute, got '" + model.masks + "'");
    if (eval.branch != "auto") parse_branch(eval.branch);
    if (!(eval.mask_threshold > 0 && eval.mask_threshold < 1)) throw ConfigError("eval.mask_threshold must be in (0, 1)");
    if (gradcheck.seeds < 1) throw ConfigError("gradcheck.seeds must be >= 1");
    train_config().validate();
  }
};

namespace detail {

// The settable part of a RunConfig as nested JSON (no command, no provenance).
inline nlohmann::json settable_json(const RunConfig& c) {
  nlohmann::json train = c.train;
  train.erase("seed");  // the run seed lives at the top level
  return {{"preset", c.preset},       {"stage", c.stage},   {"seed", c.seed},       {"force", c.force},
          {"paths", c.paths},         {"generator", c.generator}, {"model", c.model}, {"train", train},
          {"eval", c.eval},           {"gradcheck", c.gradcheck}};
}

inline void apply_settable(RunConfig& c, const nlohmann::json& j) {
  try {
    j.at("preset").get_to(c.preset);
    j.at("stage").get_to(c.stage);
    j.at("seed").get_to(c.seed);
    j.at("force").get_to(c.force);
    j.at("paths").get_to(c.paths);
    j.at("generator").get_to(c.generator);
    j.at("model").get_to(c.model);
    j.at("train").get_to(c.train);
    j.at("eval").get_to(c.eval);
    j.at("gradcheck").get_to(c.gradcheck);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
}

// Dotted keys of every leaf ("train.lambda", "seed"). Arrays and the schema
// object count as single leaves.
inline void leaves(const nlohmann::json& j, const std::string& prefix, std::vector<std::string>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object() && it.key() != "schema") leaves(*it, key, out);
    else out.push_back(key);
  }
}

inline nlohmann::json::json_pointer pointer(const std::string& dotted) {
  std::string p;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    p += "/" + dotted.substr(start, dot - start);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return nlohmann::json::json_pointer(p);
}

// Overlays `patch` onto `base`, rejecting keys the base does not have and
// recording each touched leaf.
inline void overlay(nlohmann::json& base, const nlohmann::json& patch, const std::string& prefix, Source src,
                    std::map<std::string, Source>* prov) {
  if (!patch.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    auto& slot = base[it.key()];
    if (slot.is_object() && it.key() != "schema") {
      overlay(slot, *it, key, src, prov);
      continue;
    }
    slot = *it;
    if (prov) (*prov)[key] = src;
  }
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  detail::leaves(detail::settable_json(RunConfig{}), "", out);
  return out;
}

// Full serialization: values, derived sizes and per-field provenance.
inline nlohmann::json to_json_document(const RunConfig& c) {
  nlohmann::json j = detail::settable_json(c);
  j["command"] = c.command;
  j["derived"] = {{"final_dim", 2 * c.model.feat_dim},
                  {"part_dim", c.model.widths[3]},
                  {"num_masks", c.model_schema(c.generator.schema).num_mask_groups()}};
  nlohmann::json prov = nlohmann::json::object();
  for (const auto& key : config_keys()) prov[key] = source_name(c.source_of(key));
  j["provenance"] = prov;
  return j;
}

// Flag values are given as text; they are read as JSON when the default is
// not a string ("0.2", "true", "[8,16,16,16]").
struct FlagValue {
  std::string key;
  std::string text;
};

inline nlohmann::json parse_flag_value(const std::string& key, const nlohmann::json& current, const std::string& text) {
  if (current.is_string()) return text;
  nlohmann::json v;
  try {
    v = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("cannot parse value '" + text + "' for --" + key);
  }
  const bool ok = (current.is_number() && v.is_number()) || (current.is_boolean() && v.is_boolean()) ||
                  (current.is_array() && v.is_array()) || (current.is_object() && v.is_object());
  if (!ok) throw ConfigError("value '" + text + "' has the wrong type for --" + key);
  if (current.is_number_unsigned() && !(v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0)))
    throw ConfigError("--" + key + " needs a non-negative integer, got '" + text + "'");
  return v;
}

// Resolution order: defaults (with the chosen preset applied), then the
// config file, then flags. The preset itself is resolved the same way.
inline RunConfig resolve_config(const std::string& command, const nlohmann::json* file,
                                const std::vector<FlagValue>& flags) {
  RunConfig base;
  base.command = command;
  nlohmann::json values = detail::settable_json(base);

  nlohmann::json file_values = file ? *file : nlohmann::json::object();
  if (!file_values.is_object()) throw ConfigError("config file must hold a JSON object");
  for (const char* k : {"command", "derived", "provenance"}) file_values.erase(k);

  std::string preset = base.preset;
  if (file_values.contains("preset")) preset = file_values["preset"].get<std::string>();
  for (const auto& f : flags)
    if (f.key == "preset") preset = f.text;
  detail::overlay(values, find_preset(preset).patch, "", Source::default_value, nullptr);

  std::map<std::string, Source> prov;
  detail::overlay(values, file_values, "", Source::file, &prov);
  for (const auto& f : flags) {
    const auto ptr = detail::pointer(f.key);
    if (!values.contains(ptr)) throw ConfigError("unknown option --" + f.key);
    values[ptr] = parse_flag_value(f.key, values[ptr], f.text);
    prov[f.key] = Source::flag;
  }
  values["preset"] = preset;

  RunConfig c;
  c.command = command;
  detail::apply_settable(c, values);
  c.provenance = std::move(prov);
  c.validate();
  return c;
}

inline nlohmann::json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot read config file " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed config file " + path.string() + ": " + e.what());
  }
}

inline void write_config(const RunConfig& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "config.json", std::ios::binary | std::ios::trunc);
  out << to_json_document(c).dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + (dir / "config.json").string());
}

}  // namespace apdr
