// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "catalog.hpp"
#include "dse.hpp"
#include "params.hpp"

namespace kvnand {

struct ScenarioParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Scenario {
  std::string name = "custom";
  std::string model = "llama3.1-8b";
  std::string quant = "FP16";
  std::string arch = "D-8+8";
  std::string flash = "table1";
  std::string npu = "table1";
  std::string catalog;  // extra catalog file merged over the builtin one
  SimRequest request{1024, 16, 0};
  std::uint64_t seed = 1;

  // dse
  std::vector<std::string> models;
  std::vector<std::string> quants;
  std::vector<std::string> configs{"fig15"};
  std::vector<std::int64_t> contexts = default_context_axis();
  CellMetric metric = CellMetric::StepLatency;

  // reliability
  double years = 5;
  double tokens_per_s = 3;
  bool paired = true;
  bool ledger = true;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');)
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

inline std::int64_t to_int(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size() || d < 0 || d != static_cast<double>(static_cast<std::int64_t>(d))) throw std::invalid_argument("");
    return static_cast<std::int64_t>(d);
  } catch (const std::exception&) {
    throw ScenarioParseError("scenario: '" + key + "' needs a nonnegative integer, got '" + v + "'");
  }
}

inline double to_real(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size() || d < 0) throw std::invalid_argument("");
    return d;
  } catch (const std::exception&) {
    throw ScenarioParseError("scenario: '" + key + "' needs a nonnegative number, got '" + v + "'");
  }
}

}  // namespace detail

inline void set_scenario_key(Scenario& s, const std::string& key, const std::string& v) {
  using namespace detail;
  if (key == "name") s.name = v;
  else if (key == "model") s.model = v;
  else if (key == "quant") s.quant = v;
  else if (key == "arch") s.arch = v;
  else if (key == "flash") s.flash = v;
  else if (key == "npu") s.npu = v;
  else if (key == "catalog") s.catalog = v;
  else if (key == "input_tokens") s.request.input_tokens = to_int(v, key);
  else if (key == "output_tokens") s.request.output_tokens = to_int(v, key);
  else if (key == "context") s.request.context_start = to_int(v, key);
  else if (key == "seed") s.seed = static_cast<std::uint64_t>(to_int(v, key));
  else if (key == "models") s.models = split_list(v);
  else if (key == "quants") s.quants = split_list(v);
  else if (key == "configs") s.configs = split_list(v);
  else if (key == "contexts") {
    s.contexts.clear();
    for (const auto& c : split_list(v)) s.contexts.push_back(to_int(c, key));
  } else if (key == "metric") {
    if (v == "step") s.metric = CellMetric::StepLatency;
    else if (v == "request") s.metric = CellMetric::FullRequest;
    else throw ScenarioParseError("scenario: metric must be step or request, got '" + v + "'");
  } else if (key == "years") s.years = to_real(v, key);
  else if (key == "tokens_per_s") s.tokens_per_s = to_real(v, key);
  else if (key == "paired") {
    if (v != "true" && v != "false") throw ScenarioParseError("scenario: paired must be true or false");
    s.paired = v == "true";
  } else if (key == "ledger") {
    if (v != "true" && v != "false") throw ScenarioParseError("scenario: ledger must be true or false");
    s.ledger = v == "true";
  } else throw ScenarioParseError("scenario: unknown key '" + key + "'");
}

// key = value lines, '#' comments, optional [scenario] header
inline Scenario parse_scenario(std::istream& in, const std::string& origin = "<scenario>") {
  Scenario s;
  int lineno = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++lineno;
    std::string line = detail::trim(raw.substr(0, raw.find('#')));
    if (line.empty() || line == "[scenario]") continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ScenarioParseError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    try {
      set_scenario_key(s, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const ScenarioParseError& e) {
      throw ScenarioParseError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return s;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file " + path);
  return parse_scenario(in, path);
}

inline const std::map<std::string, Scenario>& presets() {
  static const std::map<std::string, Scenario> p = [] {
    std::map<std::string, Scenario> m;
    {
      Scenario s;
      s.name = "mixtral-naive-check";
      s.model = "mixtral-8x7b";
      s.quant = "W4A16";
      s.arch = "D-4+4@4";
      s.request = {1024, 1, 0};
      m[s.name] = s;
    }
    {
      Scenario s;
      s.name = "long-context-8b";
      s.model = "llama3.1-8b";
      s.arch = "D-8+8";
      s.request = {1024, 4, 98976};
      m[s.name] = s;
    }
    {
      Scenario s;
      s.name = "fig15";
      s.models = {"opt-30b", "llama3.1-70b"};
      s.quants = {"W8A8", "W4A16"};
      s.configs = {"fig15"};
      m[s.name] = s;
    }
    {
      Scenario s;
      s.name = "main-eval";
      s.models = {"opt-30b", "llama2-7b", "llama3.1-8b", "llama3.1-70b", "mixtral-8x7b"};
      s.quants = {"FP16"};
      s.configs = {"base1", "base2", "main"};
      s.contexts = {128, 1000, 10000, 100000};
      m[s.name] = s;
    }
    {
      Scenario s;
      s.name = "lifetime-65b";
      s.model = "llama-65b";
      s.arch = "C-8";
      s.request = {1000, 1000, 48000};
      s.ledger = false;
      m[s.name] = s;
    }
    {
      Scenario s;
      s.name = "read-disturb-8b";
      s.model = "llama3.1-8b";
      s.arch = "C-16";
      s.request = {1024, 1024, 50000 - 1024};
      m[s.name] = s;
    }
    return m;
  }();
  return p;
}

inline const Scenario& preset(const std::string& name) {
  const auto& p = presets();
  auto it = p.find(name);
  if (it == p.end()) throw ResolutionError("preset", name);
  return it->second;
}

struct ResolvedScenario {
  Scenario spec;
  Catalog catalog;
  ModelConfig model;
  QuantScheme quant;
  ArchVariant arch;
  FlashConfig flash;
  NpuConfig npu;
  std::vector<ModelConfig> models;
  std::vector<QuantScheme> quants;
  std::vector<ArchVariant> configs;
};

inline QuantScheme resolve_quant(const std::string& s) {
  try {
    return QuantScheme::parse(s);
  } catch (const std::invalid_argument&) {
    throw ResolutionError("quant", s);
  }
}

inline ArchVariant resolve_arch(const std::string& s) {
  try {
    return ArchVariant::parse(s);
  } catch (const std::invalid_argument&) {
    throw ResolutionError("arch", s);
  }
}

// every reference is checked here, before any simulation
inline ResolvedScenario resolve(const Scenario& s) {
  ResolvedScenario r;
  r.spec = s;
  r.catalog = Catalog::builtin();
  if (!s.catalog.empty()) {
    std::ifstream in(s.catalog);
    if (!in) throw ResolutionError("catalog", s.catalog);
    r.catalog.merge(in, s.catalog);
  }
  r.model = r.catalog.model(s.model);
  r.quant = resolve_quant(s.quant);
  r.arch = resolve_arch(s.arch);
  r.flash = r.catalog.flash(s.flash);
  r.npu = r.catalog.npu(s.npu);
  s.request.validate();
  for (const auto& m : s.models) r.models.push_back(r.catalog.model(m));
  for (const auto& q : s.quants) r.quants.push_back(resolve_quant(q));
  for (const auto& c : s.configs) {
    if (c == "fig15") {
      for (const auto& a : fig15_configs()) r.configs.push_back(a);
    } else if (c == "main") {
      for (const auto& a : main_eval_configs()) r.configs.push_back(a);
    } else {
      r.configs.push_back(resolve_arch(c));
    }
  }
  if (s.contexts.empty()) throw ScenarioParseError("scenario: contexts must be nonempty");
  return r;
}

}  // namespace kvnand
