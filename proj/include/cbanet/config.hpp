#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cbanet/codec/model.hpp"
#include "cbanet/error.hpp"
#include "cbanet/train/stages.hpp"

namespace cbanet {

/// Codec and training settings read from one TOML-like file.
struct CliConfig {
  codec::CodecConfig codec;
  train::TrainConfig train;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Drops a trailing '#' comment that is not inside a quoted string.
inline std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

inline double parse_number(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size()) throw config_error("config: " + key + " expects a number, got '" + v + "'");
  return out;
}

inline long parse_integer(const std::string& key, const std::string& raw) {
  const double d = parse_number(key, raw);
  if (d != static_cast<double>(static_cast<long>(d))) throw config_error("config: " + key + " expects an integer");
  return static_cast<long>(d);
}

inline std::vector<double> parse_number_list(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (v.size() < 2 || v.front() != '[' || v.back() != ']') {
    throw config_error("config: " + key + " expects an array like [1, 2]");
  }
  std::vector<double> out;
  std::stringstream ss(v.substr(1, v.size() - 2));
  for (std::string item; std::getline(ss, item, ',');) {
    if (trim(item).empty()) continue;
    out.push_back(parse_number(key, item));
  }
  return out;
}

}  // namespace detail

/// Applies one `section.key = value` assignment. Unknown keys are config errors.
inline void apply_setting(CliConfig& cfg, const std::string& key, const std::string& value) {
  using namespace detail;
  auto& c = cfg.codec;
  auto& t = cfg.train;
  auto as_int = [&] { return static_cast<int>(parse_integer(key, value)); };
  if (key == "codec.latent_channels") c.latent_channels = as_int();
  else if (key == "codec.cam_width") c.cam_width = as_int();
  else if (key == "codec.bam_width") c.bam_width = as_int();
  else if (key == "codec.k_max") c.k_max = as_int();
  else if (key == "codec.qualities") c.qualities = as_int();
  else if (key == "codec.lambda_base") c.lambda_base = parse_number(key, value);
  else if (key == "codec.lambdas") c.lambdas = parse_number_list(key, value);
  else if (key == "codec.branch_fractions") c.branch_fractions = parse_number_list(key, value);
  else if (key == "train.crop_size") t.crop_size = as_int();
  else if (key == "train.batch_size") t.batch_size = as_int();
  else if (key == "train.learning_rate") t.learning_rate = parse_number(key, value);
  else if (key == "train.base_iterations") t.base_iterations = parse_integer(key, value);
  else if (key == "train.cam_iterations") t.cam_iterations = parse_integer(key, value);
  else if (key == "train.bam_iterations") t.bam_iterations = parse_integer(key, value);
  else if (key == "train.lr_drop_at") t.lr_drop_at = parse_number(key, value);
  else if (key == "train.lr_drop_factor") t.lr_drop_factor = parse_number(key, value);
  else if (key == "train.grad_clip") t.grad_clip = parse_number(key, value);
  else if (key == "train.log_every") t.log_every = parse_integer(key, value);
  else if (key == "train.seed") {
    const long s = parse_integer(key, value);
    if (s < 0) throw config_error("config: train.seed must be non-negative");
    t.seed = static_cast<std::uint64_t>(s);
  } else {
    throw config_error("config: unknown key '" + key + "'");
  }
}

/// Parses `[section]` headers and `key = value` lines; values are numbers or
/// arrays of numbers. Missing keys keep their defaults.
inline CliConfig parse_config(const std::string& text) {
  CliConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::trim(detail::strip_comment(line));
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw config_error(where + "unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section != "codec" && section != "train") throw config_error(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw config_error(where + "expected key = value");
    if (section.empty()) throw config_error(where + "key outside a section");
    apply_setting(cfg, section + "." + detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

/// Reads the file, applies `section.key=value` overrides in order, then the
/// CBANET_SEED environment variable, and validates the result.
inline CliConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  CliConfig cfg;
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw config_error("config: cannot read " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    cfg = parse_config(ss.str());
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw config_error("config override '" + o + "' must look like section.key=value");
    apply_setting(cfg, detail::trim(o.substr(0, eq)), o.substr(eq + 1));
  }
  if (const char* env = std::getenv("CBANET_SEED")) apply_setting(cfg, "train.seed", env);
  cfg.codec.validate();
  cfg.train.validate();
  return cfg;
}

}  // namespace cbanet
