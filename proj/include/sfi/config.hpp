#pragma once

// Run configuration: a flat `section.key = value` text format. Every key has
// a default; unknown keys and malformed values are rejected with the field
// name. `to_text` emits every key, and feeding its output back reproduces the
// same configuration exactly.

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sfi/model.hpp"
#include "sfi/serialize.hpp"
#include "sfi/training.hpp"

namespace sfi {

struct RunConfig {
  BackboneConfig backbone;
  mff::AmbiguityParams ambiguity;
  mff::NoiseParams noise;
  sir::SirConfig sir;
  bool mff_enabled = true;
  TrainConfig train;
  SyntheticConfig data;
  std::string out_dir = "runs/default";

  ModelConfig model() const {
    ModelConfig m;
    m.backbone = backbone;
    m.backbone.input_width = data.image_size;
    m.backbone.input_height = data.image_size;
    m.backbone.input_channels = data.channels;
    m.ambiguity = ambiguity;
    m.noise = noise;
    m.sir = sir;
    m.num_classes = data.classes;
    m.mff_enabled = mff_enabled;
    return m;
  }

  void validate() const {
    model().validate();
    train.validate();
    data.validate();
    if (out_dir.empty()) throw ConfigError("run.out_dir must not be empty");
  }

  void set(const std::string& key, const std::string& value);
  std::string to_text() const;

  /// Named presets: "desk" (defaults), "tiny" (gradient checks) and
  /// "paper-protocol" (the published full-scale settings, documentation only).
  static RunConfig preset(const std::string& name);
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const FormatError&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (auto& part : split(v, ',')) out.push_back(parse_uint(key, trim(part)));
  return out;
}

inline std::string list_str(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::function<void(RunConfig&, const std::string& key, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field real_field(T RunConfig::*section, double T::*member) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) { (c.*section).*member = parse_real(k, v); },
          [=](const RunConfig& c) { return format_double((c.*section).*member); }};
}

template <typename T, typename U>
Field uint_field(T RunConfig::*section, U T::*member) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) {
            (c.*section).*member = static_cast<U>(parse_uint(k, v));
          },
          [=](const RunConfig& c) { return std::to_string((c.*section).*member); }};
}

template <typename T>
Field bool_field(T RunConfig::*section, bool T::*member) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) { (c.*section).*member = parse_bool(k, v); },
          [=](const RunConfig& c) { return std::string((c.*section).*member ? "true" : "false"); }};
}

/// Ordered registry of every accepted key.
inline const std::vector<std::pair<std::string, Field>>& fields() {
  using R = RunConfig;
  static const std::vector<std::pair<std::string, Field>> table = {
      {"backbone.strides",
       {[](R& c, const std::string& k, const std::string& v) { c.backbone.strides = parse_list(k, v); },
        [](const R& c) { return list_str(c.backbone.strides); }}},
      {"backbone.channels",
       {[](R& c, const std::string& k, const std::string& v) { c.backbone.channels = parse_list(k, v); },
        [](const R& c) { return list_str(c.backbone.channels); }}},
      {"mff.enabled",
       {[](R& c, const std::string& k, const std::string& v) { c.mff_enabled = parse_bool(k, v); },
        [](const R& c) { return std::string(c.mff_enabled ? "true" : "false"); }}},
      {"mff.k", uint_field(&R::ambiguity, &mff::AmbiguityParams::k)},
      {"mff.beta_h", real_field(&R::ambiguity, &mff::AmbiguityParams::beta_h)},
      {"mff.beta_l", real_field(&R::ambiguity, &mff::AmbiguityParams::beta_l)},
      {"mff.gamma1", real_field(&R::ambiguity, &mff::AmbiguityParams::gamma1)},
      {"mff.gamma2", real_field(&R::noise, &mff::NoiseParams::gamma2)},
      {"sir.dim", uint_field(&R::sir, &sir::SirConfig::dim)},
      {"sir.heads", uint_field(&R::sir, &sir::SirConfig::heads)},
      {"sir.gcn_depth", uint_field(&R::sir, &sir::SirConfig::gcn_depth)},
      {"sir.adjacency_init",
       {[](R& c, const std::string& k, const std::string& v) {
          if (v == "auto") c.sir.adjacency_init.reset();
          else c.sir.adjacency_init = parse_real(k, v);
        },
        [](const R& c) { return c.sir.adjacency_init ? format_double(*c.sir.adjacency_init) : std::string("auto"); }}},
      {"train.xi", real_field(&R::train, &TrainConfig::xi)},
      {"train.lr", real_field(&R::train, &TrainConfig::lr)},
      {"train.momentum", real_field(&R::train, &TrainConfig::momentum)},
      {"train.weight_decay", real_field(&R::train, &TrainConfig::weight_decay)},
      {"train.epochs", uint_field(&R::train, &TrainConfig::epochs)},
      {"train.batch_size", uint_field(&R::train, &TrainConfig::batch_size)},
      {"train.seed", uint_field(&R::train, &TrainConfig::seed)},
      {"train.augment", bool_field(&R::train, &TrainConfig::augment)},
      {"data.classes", uint_field(&R::data, &SyntheticConfig::classes)},
      {"data.train_per_class", uint_field(&R::data, &SyntheticConfig::train_per_class)},
      {"data.test_per_class", uint_field(&R::data, &SyntheticConfig::test_per_class)},
      {"data.image_size", uint_field(&R::data, &SyntheticConfig::image_size)},
      {"data.channels", uint_field(&R::data, &SyntheticConfig::channels)},
      {"data.patch_size", uint_field(&R::data, &SyntheticConfig::patch_size)},
      {"data.jitter", uint_field(&R::data, &SyntheticConfig::jitter)},
      {"data.texture", real_field(&R::data, &SyntheticConfig::texture)},
      {"data.gain_spread", real_field(&R::data, &SyntheticConfig::gain_spread)},
      {"data.noise", real_field(&R::data, &SyntheticConfig::noise)},
      {"data.overlap", real_field(&R::data, &SyntheticConfig::overlap)},
      {"data.ambiguous_pairs", uint_field(&R::data, &SyntheticConfig::ambiguous_pairs)},
      {"data.standardize", bool_field(&R::data, &SyntheticConfig::standardize)},
      {"data.seed", uint_field(&R::data, &SyntheticConfig::seed)},
      {"run.out_dir",
       {[](R& c, const std::string&, const std::string& v) { c.out_dir = v; },
        [](const R& c) { return c.out_dir; }}},
  };
  return table;
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& [name, field] : detail::fields())
    if (name == key) {
      field.set(*this, key, value);
      return;
    }
  throw ConfigError("unknown configuration key '" + key + "'");
}

inline std::string RunConfig::to_text() const {
  std::ostringstream os;
  std::string section;
  for (const auto& [name, field] : detail::fields()) {
    const auto sec = name.substr(0, name.find('.'));
    if (sec != section) {
      if (!section.empty()) os << '\n';
      section = sec;
    }
    os << name << " = " << field.get(*this) << '\n';
  }
  return os.str();
}

/// Applies `key = value` lines on top of `base`. `#` starts a comment.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto t = detail::trim(line);
    if (t.empty()) continue;
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'section.key = value', got '" + t + "'");
    base.set(detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }
  return base;
}

/// Applies one `section.key=value` override.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  cfg.set(detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

inline RunConfig RunConfig::preset(const std::string& name) {
  RunConfig c;
  if (name == "desk" || name.empty()) return c;
  if (name == "tiny") {
    c.data.image_size = 6;
    c.data.channels = 4;
    c.data.classes = 3;
    c.data.patch_size = 2;
    c.data.jitter = 2;
    c.data.train_per_class = 4;
    c.data.test_per_class = 2;
    c.backbone.strides = {2, 1};
    c.backbone.channels = {4, 6};
    c.ambiguity.k = 2;
    c.sir.dim = 4;
    c.sir.heads = 2;
    c.train.epochs = 2;
    c.train.batch_size = 4;
    c.out_dir = "runs/tiny";
    return c;
  }
  if (name == "paper-protocol") {
    c.data.image_size = 384;
    c.data.patch_size = 96;
    c.data.jitter = 32;
    c.backbone.strides = {4, 2, 2, 2};
    c.backbone.channels = {96, 192, 384, 768};
    c.sir.dim = 768;
    c.sir.heads = 8;
    c.train.lr = 0.0005;
    c.train.epochs = 60;
    c.train.batch_size = 12;
    c.train.augment = true;
    c.out_dir = "runs/paper-protocol";
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (expected desk, tiny or paper-protocol)");
}

}  // namespace sfi
