#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "semfuse/data.hpp"
#include "semfuse/types.hpp"

namespace semfuse {

struct DataConfig {
  std::string root;  // empty: use synthetic scenes
  std::string train_split = "train";
  std::string val_split = "val";
  std::string class_names;  // comma separated; empty: synthetic palette
  SynthSpec synth_train{};
  std::size_t synth_val_images = 16;
};

struct EvalConfig {
  std::string scored_classes;  // comma separated indices or names; empty: all but class 0
  std::optional<int> ignore_index;
};

/// Everything a run-config file can set.
struct RunConfig {
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  std::string class_mask;  // raw list; resolved against the palette by finalize()

  LabelPalette palette() const {
    LabelPalette p = LabelPalette::synthetic();
    if (!data.class_names.empty()) {
      p.class_names.clear();
      std::stringstream ss(data.class_names);
      std::string item;
      while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (!item.empty()) p.class_names.push_back(item);
      }
    }
    p.ignore_index = eval.ignore_index;
    return p;
  }

  /// Resolves a comma-separated list of class indices or names.
  std::vector<int> resolve_classes(const std::string& list) const {
    const LabelPalette p = palette();
    std::vector<int> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item.erase(0, item.find_first_not_of(" \t"));
      item.erase(item.find_last_not_of(" \t") + 1);
      if (item.empty()) continue;
      int idx = 0;
      const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), idx);
      if (ec == std::errc() && ptr == item.data() + item.size()) {
        out.push_back(idx);
      } else if (auto found = p.find(item)) {
        out.push_back(*found);
      } else {
        throw ConfigError("unknown class '" + item + "'");
      }
    }
    return out;
  }

  std::vector<int> scored_classes() const {
    if (eval.scored_classes.empty()) return palette().foreground_classes();
    return resolve_classes(eval.scored_classes);
  }

  /// Applies cross-field rules and validates.
  void finalize() {
    const LabelPalette p = palette();
    p.validate();
    train.class_count = p.class_count();
    data.synth_train.class_count = p.class_count();
    const auto mask = resolve_classes(class_mask);
    train.class_mask = std::set<int>(mask.begin(), mask.end());
    train.validate();
    if (data.root.empty()) data.synth_train.validate();
  }
};

namespace detail {

inline std::string trim(std::string s) {
  s.erase(0, s.find_first_not_of(" \t\r"));
  const auto end = s.find_last_not_of(" \t\r");
  s.erase(end == std::string::npos ? 0 : end + 1);
  return s;
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": invalid number '" + v + "'");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw ConfigError(key + ": invalid number '" + v + "'");
    return d;
  } catch (const std::logic_error&) {
    throw ConfigError(key + ": invalid number '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

struct ConfigKey {
  std::string name;  // section.key
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

/// Every recognized key, in documentation order.
inline const std::vector<ConfigKey>& config_keys() {
  using detail::format_real;
  using detail::parse_bool;
  using detail::parse_number;
  using detail::parse_real;
  static const std::vector<ConfigKey> keys = {
      {"model.scales", "pyramid depth S in [2,4]",
       [](RunConfig& c, const std::string& v) { c.train.scales = parse_number<int>("model.scales", v); },
       [](const RunConfig& c) { return std::to_string(c.train.scales); }},
      {"model.base_channels", "channels at the finest scale (doubled per scale)",
       [](RunConfig& c, const std::string& v) { c.train.base_channels = parse_number<int>("model.base_channels", v); },
       [](const RunConfig& c) { return std::to_string(c.train.base_channels); }},
      {"model.attention", "fusion-block strengthening: SLA, CHA, SPA or NONE",
       [](RunConfig& c, const std::string& v) { c.train.attention = parse_attention(v); },
       [](const RunConfig& c) { return to_string(c.train.attention); }},
      {"model.seg_width", "segmentation network width multiplier",
       [](RunConfig& c, const std::string& v) { c.train.seg_width = parse_number<int>("model.seg_width", v); },
       [](const RunConfig& c) { return std::to_string(c.train.seg_width); }},
      {"train.warm_start_rule", "warm-start target: AVERAGE or MAX",
       [](RunConfig& c, const std::string& v) { c.train.warm_start_rule = parse_warm_start_rule(v); },
       [](const RunConfig& c) { return to_string(c.train.warm_start_rule); }},
      {"train.lambda", "weight of the correlation regularizer",
       [](RunConfig& c, const std::string& v) { c.train.lambda = parse_real("train.lambda", v); },
       [](const RunConfig& c) { return format_real(c.train.lambda); }},
      {"train.class_mask", "classes excluded from the cross-entropy (indices or names, comma separated)",
       [](RunConfig& c, const std::string& v) { c.class_mask = v; },
       [](const RunConfig& c) {
         std::string out;
         for (int k : c.train.class_mask) out += (out.empty() ? "" : ",") + std::to_string(k);
         return out;
       }},
      {"train.warm_start_epochs", "epochs of the warm-start phase",
       [](RunConfig& c, const std::string& v) { c.train.warm_start_epochs = parse_number<int>("train.warm_start_epochs", v); },
       [](const RunConfig& c) { return std::to_string(c.train.warm_start_epochs); }},
      {"train.semantic_epochs", "epochs of the semantic phase",
       [](RunConfig& c, const std::string& v) { c.train.semantic_epochs = parse_number<int>("train.semantic_epochs", v); },
       [](const RunConfig& c) { return std::to_string(c.train.semantic_epochs); }},
      {"train.warm_start_lr", "Adam learning rate of the warm-start phase",
       [](RunConfig& c, const std::string& v) { c.train.warm_start_lr = parse_real("train.warm_start_lr", v); },
       [](const RunConfig& c) { return format_real(c.train.warm_start_lr); }},
      {"train.semantic_lr", "Adam learning rate of the semantic phase (both networks)",
       [](RunConfig& c, const std::string& v) { c.train.semantic_lr = parse_real("train.semantic_lr", v); },
       [](const RunConfig& c) { return format_real(c.train.semantic_lr); }},
      {"train.batch_size", "images per optimizer step",
       [](RunConfig& c, const std::string& v) { c.train.batch_size = parse_number<int>("train.batch_size", v); },
       [](const RunConfig& c) { return std::to_string(c.train.batch_size); }},
      {"train.seed", "seed of initialization and shuffling",
       [](RunConfig& c, const std::string& v) { c.train.seed = parse_number<std::uint64_t>("train.seed", v); },
       [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      {"train.skip_warm_start", "allow the semantic phase from a random fusion network",
       [](RunConfig& c, const std::string& v) { c.train.skip_warm_start = parse_bool("train.skip_warm_start", v); },
       [](const RunConfig& c) { return std::string(c.train.skip_warm_start ? "true" : "false"); }},
      {"train.drop_semantic_loss", "zero the cross-entropy term in the semantic phase",
       [](RunConfig& c, const std::string& v) { c.train.drop_semantic_loss = parse_bool("train.drop_semantic_loss", v); },
       [](const RunConfig& c) { return std::string(c.train.drop_semantic_loss ? "true" : "false"); }},
      {"train.clip_norm", "global gradient-norm clip in the semantic phase (0 disables)",
       [](RunConfig& c, const std::string& v) { c.train.clip_norm = parse_real("train.clip_norm", v); },
       [](const RunConfig& c) { return format_real(c.train.clip_norm); }},
      {"data.root", "dataset root with {split}/{ir,vis,labels}; empty uses synthetic scenes",
       [](RunConfig& c, const std::string& v) { c.data.root = v; }, [](const RunConfig& c) { return c.data.root; }},
      {"data.train_split", "training split directory",
       [](RunConfig& c, const std::string& v) { c.data.train_split = v; },
       [](const RunConfig& c) { return c.data.train_split; }},
      {"data.val_split", "validation split directory",
       [](RunConfig& c, const std::string& v) { c.data.val_split = v; },
       [](const RunConfig& c) { return c.data.val_split; }},
      {"data.class_names", "comma-separated class names; empty uses the synthetic palette",
       [](RunConfig& c, const std::string& v) { c.data.class_names = v; },
       [](const RunConfig& c) { return c.data.class_names; }},
      {"data.synth_size", "synthetic image side length",
       [](RunConfig& c, const std::string& v) { c.data.synth_train.size = parse_number<std::size_t>("data.synth_size", v); },
       [](const RunConfig& c) { return std::to_string(c.data.synth_train.size); }},
      {"data.synth_train_images", "synthetic training images",
       [](RunConfig& c, const std::string& v) {
         c.data.synth_train.images = parse_number<std::size_t>("data.synth_train_images", v);
       },
       [](const RunConfig& c) { return std::to_string(c.data.synth_train.images); }},
      {"data.synth_val_images", "synthetic validation images",
       [](RunConfig& c, const std::string& v) { c.data.synth_val_images = parse_number<std::size_t>("data.synth_val_images", v); },
       [](const RunConfig& c) { return std::to_string(c.data.synth_val_images); }},
      {"data.synth_seed", "synthetic scene seed",
       [](RunConfig& c, const std::string& v) { c.data.synth_train.seed = parse_number<std::uint64_t>("data.synth_seed", v); },
       [](const RunConfig& c) { return std::to_string(c.data.synth_train.seed); }},
      {"data.glare_probability", "probability of a saturated glare disc per scene",
       [](RunConfig& c, const std::string& v) { c.data.synth_train.glare_probability = parse_real("data.glare_probability", v); },
       [](const RunConfig& c) { return format_real(c.data.synth_train.glare_probability); }},
      {"data.blob_min", "minimum hot targets per scene",
       [](RunConfig& c, const std::string& v) { c.data.synth_train.blob_min = parse_number<int>("data.blob_min", v); },
       [](const RunConfig& c) { return std::to_string(c.data.synth_train.blob_min); }},
      {"data.blob_max", "maximum hot targets per scene",
       [](RunConfig& c, const std::string& v) { c.data.synth_train.blob_max = parse_number<int>("data.blob_max", v); },
       [](const RunConfig& c) { return std::to_string(c.data.synth_train.blob_max); }},
      {"eval.scored_classes", "classes averaged into mAcc/mIoU; empty means all but class 0",
       [](RunConfig& c, const std::string& v) { c.eval.scored_classes = v; },
       [](const RunConfig& c) { return c.eval.scored_classes; }},
      {"eval.ignore_index", "ground-truth class skipped by scoring; empty for none",
       [](RunConfig& c, const std::string& v) {
         c.eval.ignore_index = v.empty() ? std::nullopt : std::optional<int>(parse_number<int>("eval.ignore_index", v));
       },
       [](const RunConfig& c) { return c.eval.ignore_index ? std::to_string(*c.eval.ignore_index) : std::string(); }},
  };
  return keys;
}

/// Sets one `section.key` to `value`; unknown keys are errors.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : config_keys())
    if (k.name == key) {
      k.set(cfg, detail::trim(value));
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

/// Parses `section.key=value` as given to --set.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' must look like section.key=value");
  set_config_value(cfg, detail::trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

/// Parses INI-style text ([section] headers, key = value lines, '#' comments) on top of `cfg`.
inline void parse_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "<config>") {
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "train" && section != "data" && section != "eval")
        throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    if (section.empty()) throw ConfigError(where + "key outside of a section");
    try {
      set_config_value(cfg, section + "." + detail::trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

inline RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg;
  parse_config_text(cfg, ss.str(), path);
  return cfg;
}

/// Canonical text of every key in `sections`, parseable by parse_config_text.
inline std::string serialize_config(const RunConfig& cfg,
                                    const std::vector<std::string>& sections = {"model", "train", "data", "eval"}) {
  std::string out;
  for (const auto& section : sections) {
    out += "[" + section + "]\n";
    for (const auto& k : config_keys())
      if (k.name.rfind(section + ".", 0) == 0) out += k.name.substr(section.size() + 1) + " = " + k.get(cfg) + "\n";
  }
  return out;
}

}  // namespace semfuse
