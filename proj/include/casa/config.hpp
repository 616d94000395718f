#pragma once

// Flat key=value run configuration shared by the command-line tool.

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "casa/errors.hpp"
#include "casa/model.hpp"
#include "casa/training.hpp"

namespace casa {

class RunConfig {
public:
  static const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        // data and outputs
        "train", "val", "test", "data", "format", "val_fraction", "out", "out_dir", "checkpoint", "profile", "n", "seed",
        // model variant
        "model", "intent_hist", "slot_hist", "utt_hist", "da_hist",
        // hyperparameters
        "d_h", "d_e", "d_intent", "d_da", "d_slot", "dropout", "K", "lr", "w", "alpha", "beta", "patience", "min_delta",
        "seeds", "batch_size", "max_epochs", "max_tokens", "unk_prob", "clip_norm", "val_policy",
        // evaluation and inspection
        "history_policy", "configs", "conv", "turn", "heatmap"};
    return keys;
  }

  void set(const std::string& key, const std::string& value) {
    if (!known_keys().count(key)) throw ConfigError("unknown configuration key '" + key + "'");
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  /// Reads `key = value` lines; '#' starts a comment.
  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      auto trim = [](std::string s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(path + ":" + std::to_string(no) + ": expected key = value");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  /// CASA_SEED replaces both the generator seed and the training seed list.
  void apply_environment() {
    if (const char* s = std::getenv("CASA_SEED"); s && *s) {
      parse_u64("CASA_SEED", s);
      values_["seed"] = s;
      values_["seeds"] = s;
    }
  }

  std::string str(const std::string& key, const std::string& fallback = "") const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string required(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end() || it->second.empty()) throw ConfigError("missing required setting '" + key + "'");
    return it->second;
  }

  int integer(const std::string& key, int fallback) const {
    if (!has(key)) return fallback;
    const std::string& v = values_.at(key);
    try {
      std::size_t used = 0;
      int x = std::stoi(v, &used);
      if (used == v.size()) return x;
    } catch (const std::exception&) {
    }
    throw ConfigError("setting '" + key + "' expects an integer, got '" + v + "'");
  }

  double real(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    const std::string& v = values_.at(key);
    try {
      std::size_t used = 0;
      double x = std::stod(v, &used);
      if (used == v.size()) return x;
    } catch (const std::exception&) {
    }
    throw ConfigError("setting '" + key + "' expects a number, got '" + v + "'");
  }

  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string& v = values_.at(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("setting '" + key + "' expects true or false, got '" + v + "'");
  }

  std::uint64_t seed(std::uint64_t fallback) const { return has("seed") ? parse_u64("seed", values_.at("seed")) : fallback; }

  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(str(key));
    for (std::string item; std::getline(ss, item, ',');)
      if (!item.empty()) out.push_back(item);
    return out;
  }

  Hyperparams hyperparams() const {
    Hyperparams hp;
    hp.d_h = integer("d_h", hp.d_h);
    hp.d_e = integer("d_e", hp.d_e);
    hp.d_intent = integer("d_intent", hp.d_intent);
    hp.d_da = integer("d_da", hp.d_da);
    hp.d_slot = integer("d_slot", hp.d_slot);
    hp.dropout = real("dropout", hp.dropout);
    hp.context_window = integer("K", hp.context_window);
    hp.lr = real("lr", hp.lr);
    hp.concat_window = integer("w", hp.concat_window);
    hp.alpha = real("alpha", hp.alpha);
    hp.beta = real("beta", hp.beta);
    hp.patience = integer("patience", hp.patience);
    hp.min_delta = real("min_delta", hp.min_delta);
    hp.batch_size = integer("batch_size", hp.batch_size);
    hp.max_epochs = integer("max_epochs", hp.max_epochs);
    hp.max_tokens = integer("max_tokens", hp.max_tokens);
    hp.unk_prob = real("unk_prob", hp.unk_prob);
    hp.clip_norm = real("clip_norm", hp.clip_norm);
    if (has("val_policy")) hp.validation_policy = parse_policy(values_.at("val_policy"));
    if (has("seeds")) {
      hp.seeds.clear();
      for (const auto& s : list("seeds")) hp.seeds.push_back(parse_u64("seeds", s));
    }
    hp.validate();
    return hp;
  }

  ModelVariant variant() const {
    ModelVariant v;
    v.kind = parse_model_kind(str("model", "casa"));
    v.flags.intent_hist = boolean("intent_hist", true);
    v.flags.slot_hist = boolean("slot_hist", true);
    v.flags.utt_hist = boolean("utt_hist", true);
    v.flags.da_hist = boolean("da_hist", true);
    return v;
  }

  HistoryPolicy history_policy() const { return parse_policy(str("history_policy", "predicted")); }

  static HistoryPolicy parse_policy(const std::string& s) {
    if (s == "gold") return HistoryPolicy::Gold;
    if (s == "predicted") return HistoryPolicy::Predicted;
    throw ConfigError("unknown history policy '" + s + "' (expected gold or predicted)");
  }

private:
  static std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
      throw ConfigError("setting '" + key + "' expects a non-negative integer, got '" + v + "'");
    try {
      return std::stoull(v);
    } catch (const std::exception&) {
      throw ConfigError("setting '" + key + "' is out of range: '" + v + "'");
    }
  }

  std::map<std::string, std::string> values_;
};

}  // namespace casa
