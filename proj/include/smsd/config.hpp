#pragma once

// `key = value` configuration files with `#` comments and depth-first
// `include <relative-path>` directives; later keys override earlier ones.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "smsd/error.hpp"
#include "smsd/model.hpp"

namespace smsd {

struct TrainConfig {
  ModelConfig model;
  std::size_t batch_size = 16;
  std::size_t steps = 40000;
  double learning_rate = 1e-3;
  double lr_decay = 0.98;  // multiplicative, per 1000 steps
  double clip_norm = 3.0;
  double example_seconds = 4.0;
  std::uint64_t seed = 0;

  void validate() const {
    model.validate();
    if (batch_size < 1) throw Error("batch_size must be >= 1");
    if (steps < 1) throw Error("steps must be >= 1");
    if (!(learning_rate >= 0.0)) throw Error("learning_rate must be >= 0");
    if (!(lr_decay > 0.0)) throw Error("lr_decay must be > 0");
    if (!(clip_norm > 0.0)) throw Error("clip_norm must be > 0");
    if (!(example_seconds > 0.0)) throw Error("example_seconds must be > 0");
  }
  bool operator==(const TrainConfig&) const = default;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct ConfigValue {
  std::string value;
  std::filesystem::path file;
  std::size_t line = 0;
};

/// Keys accepted in configuration files.
inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "n_harmonics", "n_noise",       "mlp_units",  "mlp_layers",    "gru_units", "use_z",
      "z_dim",       "z_gru_units",   "mfcc_count", "use_reverb",    "batch_size", "steps",
      "learning_rate", "lr_decay",    "clip_norm",  "example_seconds", "seed"};
  return keys;
}

class ConfigFile {
 public:
  static ConfigFile load(const std::filesystem::path& path) {
    ConfigFile cfg;
    std::vector<std::filesystem::path> stack;
    cfg.read(path, stack);
    return cfg;
  }

  static ConfigFile parse(const std::string& text, const std::filesystem::path& base_dir = ".") {
    ConfigFile cfg;
    std::vector<std::filesystem::path> stack;
    std::istringstream in(text);
    cfg.read_stream(in, base_dir / "<string>", base_dir, stack);
    return cfg;
  }

  const std::map<std::string, ConfigValue>& values() const { return values_; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const { return values_.at(key).value; }

  /// Flattened `key = value` text in sorted key order.
  std::string resolved_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v.value + "\n";
    return out;
  }

  TrainConfig to_train_config() const {
    TrainConfig c;
    auto& m = c.model;
    for (const auto& [key, v] : values_) {
      const std::string where = v.file.string() + ":" + std::to_string(v.line);
      if (key == "n_harmonics") m.n_harmonics = as_size(v, where);
      else if (key == "n_noise") m.n_noise = as_size(v, where);
      else if (key == "mlp_units") m.mlp_units = as_size(v, where);
      else if (key == "mlp_layers") m.mlp_layers = as_size(v, where);
      else if (key == "gru_units") m.gru_units = as_size(v, where);
      else if (key == "use_z") m.use_z = as_bool(v, where);
      else if (key == "z_dim") m.z_dim = as_size(v, where);
      else if (key == "z_gru_units") m.z_gru_units = as_size(v, where);
      else if (key == "mfcc_count") m.mfcc_count = as_size(v, where);
      else if (key == "use_reverb") m.use_reverb = as_bool(v, where);
      else if (key == "batch_size") c.batch_size = as_size(v, where);
      else if (key == "steps") c.steps = as_size(v, where);
      else if (key == "learning_rate") c.learning_rate = as_double(v, where);
      else if (key == "lr_decay") c.lr_decay = as_double(v, where);
      else if (key == "clip_norm") c.clip_norm = as_double(v, where);
      else if (key == "example_seconds") c.example_seconds = as_double(v, where);
      else if (key == "seed") c.seed = as_size(v, where);
    }
    try {
      c.validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("invalid configuration: ") + e.what());
    }
    return c;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static std::size_t as_size(const ConfigValue& v, const std::string& where) {
    std::size_t out = 0;
    const auto* end = v.value.data() + v.value.size();
    auto [ptr, ec] = std::from_chars(v.value.data(), end, out);
    if (ec != std::errc() || ptr != end) throw ConfigError(where + ": expected a non-negative integer, got '" + v.value + "'");
    return out;
  }

  static double as_double(const ConfigValue& v, const std::string& where) {
    try {
      std::size_t used = 0;
      const double d = std::stod(v.value, &used);
      if (used == v.value.size()) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError(where + ": expected a number, got '" + v.value + "'");
  }

  static bool as_bool(const ConfigValue& v, const std::string& where) {
    if (v.value == "true" || v.value == "1") return true;
    if (v.value == "false" || v.value == "0") return false;
    throw ConfigError(where + ": expected true or false, got '" + v.value + "'");
  }

  void read(const std::filesystem::path& path, std::vector<std::filesystem::path>& stack) {
    std::error_code ec;
    auto canonical = std::filesystem::weakly_canonical(path, ec);
    if (ec) canonical = path;
    if (std::find(stack.begin(), stack.end(), canonical) != stack.end())
      throw ConfigError("include cycle: " + path.string() + " is already being read");
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    stack.push_back(canonical);
    read_stream(in, path, path.parent_path(), stack);
    stack.pop_back();
  }

  void read_stream(std::istream& in, const std::filesystem::path& file, const std::filesystem::path& dir,
                   std::vector<std::filesystem::path>& stack) {
    std::string raw;
    std::size_t lineno = 0;
    const auto& keys = config_keys();
    while (std::getline(in, raw)) {
      ++lineno;
      const std::string where = file.string() + ":" + std::to_string(lineno);
      const std::string line = trim(raw.substr(0, raw.find('#')));
      if (line.empty()) continue;
      if (line.rfind("include", 0) == 0 && (line.size() == 7 || line[7] == ' ' || line[7] == '\t')) {
        const std::string target = trim(line.substr(7));
        if (target.empty()) throw ConfigError(where + ": include needs a path");
        read(dir / target, stack);
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (std::find(keys.begin(), keys.end(), key) == keys.end())
        throw ConfigError(where + ": unknown key '" + key + "'");
      if (value.empty()) throw ConfigError(where + ": empty value for '" + key + "'");
      values_[key] = {value, file, lineno};
    }
  }

  std::map<std::string, ConfigValue> values_;
};

/// Text form of a TrainConfig that parses back to the same values.
inline std::string to_config_text(const TrainConfig& c) {
  std::ostringstream os;
  os.precision(17);
  const auto& m = c.model;
  os << "n_harmonics = " << m.n_harmonics << "\n"
     << "n_noise = " << m.n_noise << "\n"
     << "mlp_units = " << m.mlp_units << "\n"
     << "mlp_layers = " << m.mlp_layers << "\n"
     << "gru_units = " << m.gru_units << "\n"
     << "use_z = " << (m.use_z ? "true" : "false") << "\n"
     << "z_dim = " << m.z_dim << "\n"
     << "z_gru_units = " << m.z_gru_units << "\n"
     << "mfcc_count = " << m.mfcc_count << "\n"
     << "use_reverb = " << (m.use_reverb ? "true" : "false") << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "steps = " << c.steps << "\n"
     << "learning_rate = " << c.learning_rate << "\n"
     << "lr_decay = " << c.lr_decay << "\n"
     << "clip_norm = " << c.clip_norm << "\n"
     << "example_seconds = " << c.example_seconds << "\n"
     << "seed = " << c.seed << "\n";
  return os.str();
}

}  // namespace smsd
