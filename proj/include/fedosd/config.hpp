#pragma once

// Experiment configuration. A JSON document with one section per module:
//
//   {
//     "data":       { "source": "blobs" | "idx", "blobs": {...}, "idx": {...},
//                     "partition": {...}, "trigger": {...} },
//     "nn":         { "hidden": [32], "batch_size": 0, "local_epochs": 1 },
//     "linalg":     { "tol_rank": 1e-10, "tol_null": 1e-9, "conflict_tol": 1e-8 },
//     "fl_engine":  { "pretrain_rounds": ..., "unlearn_rounds": ..., ... },
//     "baselines":  { "ga_clip_factor": 1000 },
//     "cli":        { "algorithms": ["fedosd"], "seeds": [0], "output_dir": "runs" }
//   }
//
// Only "data.source" and "cli.algorithms" are required. Unknown keys are
// rejected with their full path.

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "fedosd/data.hpp"
#include "fedosd/directions.hpp"
#include "fedosd/engine.hpp"
#include "fedosd/error.hpp"
#include "json.hpp"

namespace fedosd {

enum class Algorithm { FedOsd, M1, M2, M4, M5, Retrain };

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::FedOsd: return "fedosd";
    case Algorithm::M1: return "m1";
    case Algorithm::M2: return "m2";
    case Algorithm::M4: return "m4";
    case Algorithm::M5: return "m5";
    case Algorithm::Retrain: return "retrain";
  }
  return "?";
}

inline Algorithm algorithm_from_string(const std::string& s) {
  for (Algorithm a : {Algorithm::FedOsd, Algorithm::M1, Algorithm::M2, Algorithm::M4, Algorithm::M5,
                      Algorithm::Retrain})
    if (s == to_string(a)) return a;
  throw ConfigError("unknown algorithm '" + s + "' (expected fedosd, m1, m2, m4, m5 or retrain)");
}

/// Unlearning direction used by each algorithm (M5 differs only in post-training).
inline DirectionKind direction_kind(Algorithm a) {
  switch (a) {
    case Algorithm::M1: return DirectionKind::GaCe;
    case Algorithm::M2: return DirectionKind::NegGradUce;
    case Algorithm::M4: return DirectionKind::RandomNull;
    default: return DirectionKind::FedOsd;
  }
}

enum class DataSource { Blobs, Idx };

struct IdxPaths {
  std::string train_images, train_labels, test_images, test_labels;
};

struct ExperimentConfig {
  DataSource source = DataSource::Blobs;
  BlobSpec blobs;
  IdxPaths idx;
  PartitionSpec partition{PartitionScheme::Pathological, 50, 10};
  TriggerSpec trigger;
  double poison_fraction = 0.5;
  std::size_t target_client = 0;

  std::vector<std::size_t> hidden{32};
  LocalTrainingOptions training;

  DirectionOptions directions;
  double conflict_tol = kDefaultConflictTol;

  StageSchedule schedule;
  UnlearnOptions unlearn;

  std::vector<Algorithm> algorithms;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "runs";
};

struct ParsedConfig {
  ExperimentConfig config;
  std::vector<std::string> notes;  // informational messages for the log
};

namespace detail {

using json = nlohmann::json;

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("type mismatch at " + label() + ": expected an object");
  }

  void allow(std::initializer_list<const char*> keys) const {
    std::set<std::string> ok(keys.begin(), keys.end());
    for (const auto& [k, v] : j_.items())
      if (!ok.count(k)) throw ConfigError("unknown key '" + key_path(k) + "'");
  }

  bool has(const char* key) const { return j_.contains(key); }

  Section sub(const char* key) const {
    static const json empty = json::object();
    return Section(has(key) ? j_.at(key) : empty, key_path(key));
  }

  template <class T>
  void read(const char* key, T& out) const {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) mismatch(key, "boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) mismatch(key, "string");
      out = v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) mismatch(key, "number");
      out = v.get<T>();
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) mismatch(key, "non-negative integer");
      out = v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) mismatch(key, "integer");
      out = v.get<T>();
    } else {
      static_assert(sizeof(T) == 0, "unsupported config type");
    }
  }

  template <class T>
  void read_list(const char* key, std::vector<T>& out) const {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array()) mismatch(key, "array");
    std::vector<T> tmp;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if constexpr (std::is_same_v<T, std::string>) {
        if (!v[i].is_string()) mismatch(key, "array of strings");
        tmp.push_back(v[i].get<std::string>());
      } else {
        if (!v[i].is_number_unsigned()) mismatch(key, "array of non-negative integers");
        tmp.push_back(v[i].get<T>());
      }
    }
    out = std::move(tmp);
  }

  std::string key_path(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

 private:
  std::string label() const { return path_.empty() ? "<root>" : path_; }

  [[noreturn]] void mismatch(const char* key, const char* expected) const {
    throw ConfigError("type mismatch at " + key_path(key) + ": expected " + expected);
  }

  const json& j_;
  std::string path_;
};

inline Corner corner_from_string(const std::string& s) {
  if (s == "top_left") return Corner::TopLeft;
  if (s == "top_right") return Corner::TopRight;
  if (s == "bottom_left") return Corner::BottomLeft;
  if (s == "bottom_right") return Corner::BottomRight;
  throw ConfigError("data.trigger.corner must be top_left, top_right, bottom_left or bottom_right");
}

inline const char* to_string(Corner c) {
  switch (c) {
    case Corner::TopLeft: return "top_left";
    case Corner::TopRight: return "top_right";
    case Corner::BottomLeft: return "bottom_left";
    case Corner::BottomRight: return "bottom_right";
  }
  return "?";
}

}  // namespace detail

inline ParsedConfig parse_config_json(const nlohmann::json& doc) {
  using detail::Section;
  ParsedConfig parsed;
  ExperimentConfig& c = parsed.config;
  const Section root(doc, "");
  root.allow({"data", "nn", "linalg", "fl_engine", "baselines", "cli"});

  const Section data = root.sub("data");
  data.allow({"source", "blobs", "idx", "partition", "trigger"});
  if (!data.has("source")) throw ConfigError("missing required key 'data.source'");
  std::string source;
  data.read("source", source);
  if (source == "blobs") {
    c.source = DataSource::Blobs;
  } else if (source == "idx") {
    c.source = DataSource::Idx;
  } else {
    throw ConfigError("data.source must be 'blobs' or 'idx'");
  }

  const Section blobs = data.sub("blobs");
  blobs.allow({"classes", "per_class", "dim", "spread"});
  blobs.read("classes", c.blobs.classes);
  blobs.read("per_class", c.blobs.per_class);
  blobs.read("dim", c.blobs.dim);
  blobs.read("spread", c.blobs.spread);

  const Section idx = data.sub("idx");
  idx.allow({"train_images", "train_labels", "test_images", "test_labels"});
  idx.read("train_images", c.idx.train_images);
  idx.read("train_labels", c.idx.train_labels);
  idx.read("test_images", c.idx.test_images);
  idx.read("test_labels", c.idx.test_labels);
  if (c.source == DataSource::Idx) {
    for (const auto* p : {&c.idx.train_images, &c.idx.train_labels, &c.idx.test_images, &c.idx.test_labels})
      if (p->empty()) throw ConfigError("data.idx needs train_images, train_labels, test_images and test_labels");
  }

  const Section part = data.sub("partition");
  part.allow({"scheme", "percent", "clients"});
  if (part.has("scheme")) {
    std::string scheme;
    part.read("scheme", scheme);
    if (scheme == "pat") {
      c.partition.scheme = PartitionScheme::Pathological;
    } else if (scheme == "iid") {
      c.partition.scheme = PartitionScheme::Iid;
    } else {
      throw ConfigError("data.partition.scheme must be 'pat' or 'iid'");
    }
  }
  part.read("percent", c.partition.percent);
  part.read("clients", c.partition.clients);
  if (c.partition.scheme == PartitionScheme::Pathological && c.partition.percent != 10 &&
      c.partition.percent != 20 && c.partition.percent != 50)
    throw ConfigError("data.partition.percent must be 10, 20 or 50");
  if (c.partition.clients < 2) throw ConfigError("data.partition.clients must be >= 2");

  const Section trig = data.sub("trigger");
  trig.allow({"patch_size", "patch_value", "corner", "label_shift", "fraction", "target_client"});
  trig.read("patch_size", c.trigger.patch_size);
  trig.read("patch_value", c.trigger.patch_value);
  if (trig.has("corner")) {
    std::string corner;
    trig.read("corner", corner);
    c.trigger.corner = detail::corner_from_string(corner);
  }
  trig.read("label_shift", c.trigger.label_shift);
  trig.read("fraction", c.poison_fraction);
  trig.read("target_client", c.target_client);
  if (!(c.poison_fraction > 0.0 && c.poison_fraction <= 1.0))
    throw ConfigError("data.trigger.fraction must lie in (0, 1]");
  if (c.target_client >= c.partition.clients)
    throw ConfigError("data.trigger.target_client must be < data.partition.clients");

  const Section nn = root.sub("nn");
  nn.allow({"hidden", "batch_size", "local_epochs"});
  nn.read_list("hidden", c.hidden);
  nn.read("batch_size", c.training.batch_size);
  nn.read("local_epochs", c.training.local_epochs);
  if (c.training.local_epochs < 1) throw ConfigError("nn.local_epochs must be >= 1");
  for (std::size_t h : c.hidden)
    if (h == 0) throw ConfigError("nn.hidden entries must be >= 1");
  if (c.training.local_epochs > 1)
    parsed.notes.push_back("nn.local_epochs = " + std::to_string(c.training.local_epochs) +
                           ": uploaded g_i = (w - w_i)/lr is the scaled local displacement, an "
                           "approximation of the local gradient");

  const Section la = root.sub("linalg");
  la.allow({"tol_rank", "tol_null", "conflict_tol"});
  la.read("tol_rank", c.directions.tol_rank);
  la.read("tol_null", c.directions.tol_null);
  la.read("conflict_tol", c.conflict_tol);
  c.unlearn.conflict_tol = c.conflict_tol;

  const Section fl = root.sub("fl_engine");
  fl.allow({"pretrain_rounds", "unlearn_rounds", "total_rounds", "lr0", "lr_decay", "early_stop_asr",
            "early_stop_patience", "max_consecutive_skips"});
  fl.read("pretrain_rounds", c.schedule.pretrain_rounds);
  fl.read("unlearn_rounds", c.schedule.unlearn_rounds);
  fl.read("total_rounds", c.schedule.total_rounds);
  fl.read("lr0", c.schedule.lr0);
  fl.read("lr_decay", c.schedule.lr_decay);
  fl.read("early_stop_asr", c.unlearn.early_stop_asr);
  fl.read("early_stop_patience", c.unlearn.early_stop_patience);
  fl.read("max_consecutive_skips", c.unlearn.max_consecutive_skips);
  try {
    c.schedule.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("fl_engine: ") + e.what());
  }

  const Section bl = root.sub("baselines");
  bl.allow({"ga_clip_factor"});
  bl.read("ga_clip_factor", c.directions.ga_clip_factor);

  const Section cli = root.sub("cli");
  cli.allow({"algorithms", "seeds", "output_dir"});
  if (!cli.has("algorithms")) throw ConfigError("missing required key 'cli.algorithms'");
  std::vector<std::string> algos;
  cli.read_list("algorithms", algos);
  for (const auto& a : algos) c.algorithms.push_back(algorithm_from_string(a));
  cli.read_list("seeds", c.seeds);
  cli.read("output_dir", c.output_dir);
  if (c.algorithms.empty()) throw ConfigError("cli.algorithms must name at least one algorithm");
  if (c.seeds.empty()) throw ConfigError("cli.seeds must list at least one seed");
  return parsed;
}

inline ParsedConfig parse_config_text(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config_json(doc);
}

inline ParsedConfig parse_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

/// Fully resolved config, every default spelled out. Feeding it back to
/// parse_config_json reproduces the same config.
inline nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  auto& data = j["data"];
  data["source"] = c.source == DataSource::Blobs ? "blobs" : "idx";
  data["blobs"] = {{"classes", c.blobs.classes}, {"per_class", c.blobs.per_class},
                   {"dim", c.blobs.dim}, {"spread", c.blobs.spread}};
  data["idx"] = {{"train_images", c.idx.train_images}, {"train_labels", c.idx.train_labels},
                 {"test_images", c.idx.test_images}, {"test_labels", c.idx.test_labels}};
  data["partition"] = {{"scheme", c.partition.scheme == PartitionScheme::Iid ? "iid" : "pat"},
                       {"percent", c.partition.percent},
                       {"clients", c.partition.clients}};
  data["trigger"] = {{"patch_size", c.trigger.patch_size}, {"patch_value", c.trigger.patch_value},
                     {"corner", detail::to_string(c.trigger.corner)}, {"label_shift", c.trigger.label_shift},
                     {"fraction", c.poison_fraction}, {"target_client", c.target_client}};
  j["nn"] = {{"hidden", c.hidden}, {"batch_size", c.training.batch_size},
             {"local_epochs", c.training.local_epochs}};
  j["linalg"] = {{"tol_rank", c.directions.tol_rank}, {"tol_null", c.directions.tol_null},
                 {"conflict_tol", c.conflict_tol}};
  j["fl_engine"] = {{"pretrain_rounds", c.schedule.pretrain_rounds},
                    {"unlearn_rounds", c.schedule.unlearn_rounds},
                    {"total_rounds", c.schedule.total_rounds},
                    {"lr0", c.schedule.lr0},
                    {"lr_decay", c.schedule.lr_decay},
                    {"early_stop_asr", c.unlearn.early_stop_asr},
                    {"early_stop_patience", c.unlearn.early_stop_patience},
                    {"max_consecutive_skips", c.unlearn.max_consecutive_skips}};
  j["baselines"] = {{"ga_clip_factor", c.directions.ga_clip_factor}};
  std::vector<std::string> algos;
  for (Algorithm a : c.algorithms) algos.emplace_back(to_string(a));
  j["cli"] = {{"algorithms", algos}, {"seeds", c.seeds}, {"output_dir", c.output_dir}};
  return j;
}

}  // namespace fedosd
