// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "params.hpp"

namespace kvnand {

struct ResolutionError : std::runtime_error {
  std::string kind;
  std::string key;
  ResolutionError(std::string k, std::string name)
      : std::runtime_error("unresolved " + k + " '" + name + "'"), kind(std::move(k)), key(std::move(name)) {}
};

struct CatalogParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Catalog text schema:
//   # comment
//   [model <name>]   layers, hidden, q_heads, kv_heads, ffn_inner, gated_ffn, vocab, params,
//                    experts, active_experts, expert_params
//   [flash <name>]   any FlashConfig field name
//   [npu <name>]     any NpuConfig field name
inline constexpr const char* kBuiltinCatalog = R"(# Model shapes from published architecture cards.
[model opt-30b]
layers = 48
hidden = 7168
q_heads = 56
kv_heads = 56
ffn_inner = 28672
gated_ffn = false
vocab = 50272
params = 30e9

[model llama2-7b]
layers = 32
hidden = 4096
q_heads = 32
kv_heads = 32
ffn_inner = 11008
vocab = 32000
params = 6.738e9

[model llama3.1-8b]
layers = 32
hidden = 4096
q_heads = 32
kv_heads = 8
ffn_inner = 14336
vocab = 128256
params = 8.03e9

[model llama3.1-70b]
layers = 80
hidden = 8192
q_heads = 64
kv_heads = 8
ffn_inner = 28672
vocab = 128256
params = 70.55e9

[model mixtral-8x7b]
layers = 32
hidden = 4096
q_heads = 32
kv_heads = 8
ffn_inner = 14336
vocab = 32000
params = 46.70e9
experts = 8
active_experts = 2
expert_params = 176160768

[model llama-65b]
layers = 80
hidden = 8192
q_heads = 64
kv_heads = 64
ffn_inner = 22016
vocab = 32000
params = 65.2e9

[flash table1]
wordline_layers = 128
page_data_bytes = 4096
page_ecc_bytes = 448
pages_per_block = 768
blocks_per_plane = 177
planes_per_die = 32
t_read_page_ns = 4000
t_program_page_ns = 75000
bw_external_per_die = 4.8e9
e_internal_read_pj_per_bit = 3
e_program_pj_per_bit = 7.5
e_interface_pj_per_bit = 4.9
fmacs_per_plane = 16
fmac_clock_hz = 4e8
kv_buffer_per_plane_bytes = 8192
max_partial_programs = 16
plane_logic_power_w = 6.98e-3
ecc_dec_power_w = 5.24e-3
ecc_enc_power_w = 1.2e-3

[npu table1]
tensor_tops = 32e12
npu_power_w = 4.60
sram_kv_buffer_bytes = 5242880
sram_power_w = 0.36
dram_bw_per_channel = 8e9
dram_capacity_per_channel_bytes = 2147483648
e_dram_pj_per_bit = 7.0
vector_lanes = 128
vector_clock_hz = 1e9
gemv_utilization = 0.5
prefill_utilization = 0.5
)";

class Catalog {
 public:
  std::map<std::string, ModelConfig> models;
  std::map<std::string, FlashConfig> flashes;
  std::map<std::string, NpuConfig> npus;

  static const Catalog& builtin() {
    static const Catalog c = [] {
      Catalog cat;
      std::istringstream in(kBuiltinCatalog);
      cat.merge(in, "<builtin>");
      return cat;
    }();
    return c;
  }

  static Catalog from_file(const std::string& path) {
    Catalog c = builtin();
    std::ifstream in(path);
    if (!in) throw ResolutionError("catalog file", path);
    c.merge(in, path);
    return c;
  }

  const ModelConfig& model(const std::string& key) const { return find(models, "model", key); }
  const FlashConfig& flash(const std::string& key) const { return find(flashes, "flash", key); }
  const NpuConfig& npu(const std::string& key) const { return find(npus, "npu", key); }

  void merge(std::istream& in, const std::string& origin) {
    std::string line, kind, name;
    std::map<std::string, std::string> kv;
    int lineno = 0;
    auto flush = [&] {
      if (!kind.empty()) commit(kind, name, kv, origin);
      kv.clear();
    };
    while (std::getline(in, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw CatalogParseError(origin + ":" + std::to_string(lineno) + ": unterminated section");
        flush();
        std::istringstream hs(line.substr(1, line.size() - 2));
        hs >> kind >> name;
        if (name.empty()) throw CatalogParseError(origin + ":" + std::to_string(lineno) + ": section needs a name");
        continue;
      }
      auto eq = line.find('=');
      if (eq == std::string::npos || kind.empty())
        throw CatalogParseError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    flush();
  }

 private:
  template <class T>
  static const T& find(const std::map<std::string, T>& m, const char* kind, const std::string& key) {
    auto it = m.find(key);
    if (it == m.end()) throw ResolutionError(kind, key);
    return it->second;
  }

  static std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static double num(const std::map<std::string, std::string>& kv, const std::string& k, const std::string& where) {
    const std::string& v = kv.at(k);
    try {
      std::size_t used = 0;
      double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw CatalogParseError(where + ": bad number for " + k + ": " + v);
    }
  }

  void commit(const std::string& kind, const std::string& name, const std::map<std::string, std::string>& kv,
              const std::string& origin) {
    const std::string where = origin + " [" + kind + " " + name + "]";
    using Setter = std::function<void(double)>;
    std::map<std::string, Setter> set;
    auto apply = [&] {
      for (const auto& [k, v] : kv) {
        auto it = set.find(k);
        if (it == set.end()) throw CatalogParseError(where + ": unknown key " + k);
        if (k == "gated_ffn") continue;
        it->second(num(kv, k, where));
      }
    };
    if (kind == "model") {
      ModelConfig m;
      m.name = name;
      MoeSpec moe;
      auto i = [](int& f) { return [&f](double d) { f = static_cast<int>(d); }; };
      set = {{"layers", i(m.layers)},       {"hidden", i(m.hidden)},
             {"q_heads", i(m.q_heads)},     {"kv_heads", i(m.kv_heads)},
             {"ffn_inner", i(m.ffn_inner)}, {"vocab", i(m.vocab)},
             {"params", [&](double d) { m.total_weight_params = d; }},
             {"gated_ffn", [](double) {}},
             {"experts", i(moe.num_experts)}, {"active_experts", i(moe.active_experts)},
             {"expert_params", [&](double d) { moe.expert_params = d; }}};
      apply();
      if (auto g = kv.find("gated_ffn"); g != kv.end()) {
        if (g->second != "true" && g->second != "false") throw CatalogParseError(where + ": gated_ffn must be true or false");
        m.gated_ffn = g->second == "true";
      }
      if (moe.num_experts > 0) m.moe = moe;
      m.validate();
      models[name] = m;
    } else if (kind == "flash") {
      FlashConfig f;
      auto u = [](std::uint64_t& x) { return [&x](double d) { x = static_cast<std::uint64_t>(d); }; };
      auto i = [](int& x) { return [&x](double d) { x = static_cast<int>(d); }; };
      auto r = [](double& x) { return [&x](double d) { x = d; }; };
      set = {{"wordline_layers", i(f.wordline_layers)},
             {"page_data_bytes", u(f.page_data_bytes)},
             {"page_ecc_bytes", u(f.page_ecc_bytes)},
             {"pages_per_block", u(f.pages_per_block)},
             {"blocks_per_plane", u(f.blocks_per_plane)},
             {"planes_per_die", i(f.planes_per_die)},
             {"t_read_page_ns", r(f.t_read_page_ns)},
             {"t_program_page_ns", r(f.t_program_page_ns)},
             {"bw_external_per_die", r(f.bw_external_per_die)},
             {"e_internal_read_pj_per_bit", r(f.e_internal_read_pj_per_bit)},
             {"e_program_pj_per_bit", r(f.e_program_pj_per_bit)},
             {"e_interface_pj_per_bit", r(f.e_interface_pj_per_bit)},
             {"fmacs_per_plane", i(f.fmacs_per_plane)},
             {"fmac_clock_hz", r(f.fmac_clock_hz)},
             {"kv_buffer_per_plane_bytes", u(f.kv_buffer_per_plane_bytes)},
             {"max_partial_programs", i(f.max_partial_programs)},
             {"plane_logic_power_w", r(f.plane_logic_power_w)},
             {"ecc_dec_power_w", r(f.ecc_dec_power_w)},
             {"ecc_enc_power_w", r(f.ecc_enc_power_w)}};
      apply();
      f.validate();
      flashes[name] = f;
    } else if (kind == "npu") {
      NpuConfig n;
      auto u = [](std::uint64_t& x) { return [&x](double d) { x = static_cast<std::uint64_t>(d); }; };
      auto i = [](int& x) { return [&x](double d) { x = static_cast<int>(d); }; };
      auto r = [](double& x) { return [&x](double d) { x = d; }; };
      set = {{"tensor_tops", r(n.tensor_tops)},
             {"npu_power_w", r(n.npu_power_w)},
             {"sram_kv_buffer_bytes", u(n.sram_kv_buffer_bytes)},
             {"sram_power_w", r(n.sram_power_w)},
             {"dram_bw_per_channel", r(n.dram_bw_per_channel)},
             {"dram_capacity_per_channel_bytes", u(n.dram_capacity_per_channel_bytes)},
             {"e_dram_pj_per_bit", r(n.e_dram_pj_per_bit)},
             {"vector_lanes", i(n.vector_lanes)},
             {"vector_clock_hz", r(n.vector_clock_hz)},
             {"gemv_utilization", r(n.gemv_utilization)},
             {"prefill_utilization", r(n.prefill_utilization)}};
      apply();
      n.validate();
      npus[name] = n;
    } else {
      throw CatalogParseError(where + ": unknown section kind");
    }
  }
};

}  // namespace kvnand
