#pragma once
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "onedm/core/errors.hpp"
#include "onedm/model/model.hpp"

namespace onedm {

// All run knobs in one flat bag. Serializes to key=value lines so a run can
// be reproduced from the text echoed into its checkpoint header.
struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double lr = 1e-4;
  double weight_decay = 1e-2;
  double cfg_dropout_prob = 0.1;
  double tau = 0.1;
  double guidance = 0.25;
  int T = 200;
  uint64_t seed = 1;
  std::string preset = "desk";
  std::string ablation = "full";

  void set(const std::string& key, const std::string& value);
  void validate() const;
  std::string serialize() const;

  static TrainConfig parse(const std::string& text);
  static TrainConfig parse_file(const std::string& path);
};

inline void TrainConfig::set(const std::string& key, const std::string& value) {
  auto as_int = [&](int lo) {
    size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(value, &used);
    } catch (const std::exception&) {
      throw UsageError("config: bad integer for " + key + ": " + value);
    }
    if (used != value.size())
      throw UsageError("config: bad integer for " + key + ": " + value);
    if (v < lo) throw UsageError("config: " + key + " must be >= " + std::to_string(lo));
    return v;
  };
  auto as_double = [&]() {
    size_t used = 0;
    double v = 0;
    try {
      v = std::stod(value, &used);
    } catch (const std::exception&) {
      throw UsageError("config: bad number for " + key + ": " + value);
    }
    if (used != value.size())
      throw UsageError("config: bad number for " + key + ": " + value);
    return v;
  };

  if (key == "epochs") epochs = as_int(0);
  else if (key == "batch_size") batch_size = as_int(2);
  else if (key == "lr") lr = as_double();
  else if (key == "weight_decay") weight_decay = as_double();
  else if (key == "cfg_dropout_prob") cfg_dropout_prob = as_double();
  else if (key == "tau") tau = as_double();
  else if (key == "guidance") guidance = as_double();
  else if (key == "T") T = as_int(2);
  else if (key == "seed") {
    try {
      seed = std::stoull(value);
    } catch (const std::exception&) {
      throw UsageError("config: bad seed: " + value);
    }
  } else if (key == "preset") preset = value;
  else if (key == "ablation") ablation = value;
  else throw UsageError("config: unknown key: " + key);
}

inline void TrainConfig::validate() const {
  if (epochs < 0) throw UsageError("config: epochs must be >= 0");
  if (batch_size < 2) throw UsageError("config: batch_size must be >= 2");
  // lr 0 is legal: one documented contract is that a zero step leaves the
  // parameters bitwise unchanged
  if (lr < 0) throw UsageError("config: lr must be >= 0");
  if (weight_decay < 0) throw UsageError("config: weight_decay must be >= 0");
  if (cfg_dropout_prob < 0 || cfg_dropout_prob > 1)
    throw UsageError("config: cfg_dropout_prob must be in [0,1]");
  if (tau <= 0) throw UsageError("config: tau must be > 0");
  if (T < 2) throw UsageError("config: T must be >= 2");
  ModelDims::preset(preset);  // throws on unknown names
  ablation_parse(ablation);
}

inline std::string TrainConfig::serialize() const {
  std::ostringstream os;
  os.precision(17);
  os << "epochs=" << epochs << "\n"
     << "batch_size=" << batch_size << "\n"
     << "lr=" << lr << "\n"
     << "weight_decay=" << weight_decay << "\n"
     << "cfg_dropout_prob=" << cfg_dropout_prob << "\n"
     << "tau=" << tau << "\n"
     << "guidance=" << guidance << "\n"
     << "T=" << T << "\n"
     << "seed=" << seed << "\n"
     << "preset=" << preset << "\n"
     << "ablation=" << ablation << "\n";
  return os.str();
}

inline TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw UsageError("config: line " + std::to_string(lineno) +
                       " is not key=value: " + t);
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

inline TrainConfig TrainConfig::parse_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("config: cannot open " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse(buf.str());
}

}  // namespace onedm
