#pragma once

// Key-value config files: one `key = value` per line, `#` starts a comment.
// Unknown keys are errors so that typos never silently fall back to defaults.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "hnet/dataset.hpp"
#include "hnet/errors.hpp"
#include "hnet/model.hpp"
#include "hnet/synth.hpp"
#include "hnet/train.hpp"

namespace hnet {

class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& origin) {
    KeyValues kv;
    kv.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
      const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
      if (key.empty() || value.empty())
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key or value");
      if (!kv.values_.emplace(key, value).second)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    return kv;
  }

  static KeyValues load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string text(const std::string& key, std::string fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double real(const std::string& key, double fallback) const {
    if (!has(key)) return text(key, ""), fallback;
    const std::string v = text(key, "");
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError(origin_ + ": '" + key + "' is not a number: " + v);
  }

  std::uint64_t integer(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return text(key, ""), fallback;
    const std::string v = text(key, "");
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
      throw ConfigError(origin_ + ": '" + key + "' is not a nonnegative integer: " + v);
    return out;
  }

  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return text(key, ""), fallback;
    const std::string v = text(key, "");
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(origin_ + ": '" + key + "' must be true or false, got " + v);
  }

  /// Fails on any key that no accessor asked for.
  void reject_unused() const {
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) throw ConfigError(origin_ + ": unknown key '" + k + "'");
  }

 private:
  std::string origin_;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

/// Everything `gen-data` needs.
struct GenDataConfig {
  SynthConfig synth;
  std::size_t count = 512;
  SplitFractions fractions;

  static GenDataConfig from(const KeyValues& kv) {
    GenDataConfig c;
    c.synth.difficulty = parse_difficulty(kv.text("difficulty", "smooth"));
    c.synth.height = kv.integer("height", c.synth.height);
    c.synth.width = kv.integer("width", c.synth.width);
    c.synth.catheter_intensity = kv.real("catheter_intensity", c.synth.catheter_intensity);
    c.synth.grid_cells = kv.integer("grid_cells", c.synth.grid_cells);
    c.synth.seed = kv.integer("seed", c.synth.seed);
    c.count = kv.integer("count", c.count);
    c.fractions.train = kv.real("train_fraction", c.fractions.train);
    c.fractions.val = kv.real("val_fraction", c.fractions.val);
    c.fractions.test = kv.real("test_fraction", c.fractions.test);
    kv.reject_unused();
    c.synth.validate();
    c.fractions.validate();
    if (c.count == 0) throw ConfigError("count must be positive");
    return c;
  }

  nlohmann::ordered_json to_json() const {
    return {{"difficulty", to_string(synth.difficulty)},
            {"height", synth.height},
            {"width", synth.width},
            {"catheter_intensity", synth.catheter_intensity},
            {"grid_cells", synth.grid_cells},
            {"seed", synth.seed},
            {"count", count},
            {"train_fraction", fractions.train},
            {"val_fraction", fractions.val},
            {"test_fraction", fractions.test}};
  }
};

/// Everything `train` needs besides the data. Architecture keys default to
/// the published configuration; spatial size comes from the dataset.
struct TrainRunConfig {
  TrainConfig train;
  HNetConfig model;

  static TrainRunConfig from(const KeyValues& kv) {
    TrainRunConfig c;
    auto& t = c.train;
    t.batch_size = kv.integer("batch_size", t.batch_size);
    t.learning_rate = kv.real("learning_rate", t.learning_rate);
    t.max_epochs = kv.integer("max_epochs", t.max_epochs);
    t.patience = kv.integer("patience", t.patience);
    t.rho = kv.real("rho", t.rho);
    t.eps = kv.real("eps", t.eps);
    t.weights.seg1 = kv.real("beta_seg1", t.weights.seg1);
    t.weights.seg2 = kv.real("beta_seg2", t.weights.seg2);
    t.weights.reg = kv.real("beta_reg", t.weights.reg);
    t.seed = kv.integer("seed", t.seed);
    auto& m = c.model;
    m.blocks = kv.integer("blocks", m.blocks);
    m.filters = kv.integer("filters", m.filters);
    m.kernel = kv.integer("kernel", m.kernel);
    m.shared_parameters = kv.boolean("shared_parameters", m.shared_parameters);
    if (kv.has("dense_units")) {
      m.dense_units.clear();
      std::istringstream units(kv.text("dense_units", ""));
      std::string tok;
      while (std::getline(units, tok, ',')) {
        try {
          m.dense_units.push_back(std::stoul(tok));
        } catch (const std::exception&) {
          throw ConfigError("dense_units must be a comma-separated list of integers");
        }
      }
    }
    kv.reject_unused();
    t.validate();
    return c;
  }

  nlohmann::ordered_json to_json() const {
    return {{"batch_size", train.batch_size},
            {"learning_rate", train.learning_rate},
            {"max_epochs", train.max_epochs},
            {"patience", train.patience},
            {"rho", train.rho},
            {"eps", train.eps},
            {"beta_seg1", train.weights.seg1},
            {"beta_seg2", train.weights.seg2},
            {"beta_reg", train.weights.reg},
            {"seed", train.seed},
            {"blocks", model.blocks},
            {"filters", model.filters},
            {"kernel", model.kernel},
            {"shared_parameters", model.shared_parameters},
            {"dense_units", model.dense_units}};
  }
};

}  // namespace hnet
