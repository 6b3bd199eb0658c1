// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "units.hpp"

namespace kvnand {

struct FlashConfig {
  int wordline_layers = 128;
  std::uint64_t page_data_bytes = 4096;
  std::uint64_t page_ecc_bytes = 448;
  std::uint64_t pages_per_block = 768;
  std::uint64_t blocks_per_plane = 177;
  int planes_per_die = 32;
  double t_read_page_ns = 4000.0;
  double t_program_page_ns = 75000.0;
  double bw_external_per_die = 4.8e9;
  double e_internal_read_pj_per_bit = 3.0;
  double e_program_pj_per_bit = 7.5;
  double e_interface_pj_per_bit = 4.9;
  int fmacs_per_plane = 16;
  double fmac_clock_hz = 4e8;
  std::uint64_t kv_buffer_per_plane_bytes = 8192;
  int max_partial_programs = 16;
  double plane_logic_power_w = 6.98e-3;
  double ecc_dec_power_w = 5.24e-3;
  double ecc_enc_power_w = 1.2e-3;

  std::uint64_t plane_capacity_bytes() const { return page_data_bytes * pages_per_block * blocks_per_plane; }
  std::uint64_t die_capacity_bytes() const { return plane_capacity_bytes() * static_cast<std::uint64_t>(planes_per_die); }
  std::uint64_t block_bytes() const { return page_data_bytes * pages_per_block; }
  double internal_read_bw_per_die() const {
    return planes_per_die * static_cast<double>(page_data_bytes) / t_read_page_ns * kNsPerSecond;
  }

  void validate() const {
    if (page_data_bytes == 0 || pages_per_block == 0 || blocks_per_plane == 0 || planes_per_die <= 0)
      throw std::invalid_argument("flash: geometry must be positive");
    if (!(t_read_page_ns > 0) || !(t_program_page_ns > 0) || !(bw_external_per_die > 0))
      throw std::invalid_argument("flash: timing and bandwidth must be positive");
    if (fmacs_per_plane <= 0 || !(fmac_clock_hz > 0)) throw std::invalid_argument("flash: fmac config must be positive");
    if (max_partial_programs <= 0) throw std::invalid_argument("flash: max_partial_programs must be positive");
  }
};

struct NpuConfig {
  double tensor_tops = 32e12;
  double npu_power_w = 4.60;
  std::uint64_t sram_kv_buffer_bytes = 5ull << 20;
  double sram_power_w = 0.36;
  double dram_bw_per_channel = 8e9;
  std::uint64_t dram_capacity_per_channel_bytes = 2ull << 30;
  double e_dram_pj_per_bit = 7.0;
  int vector_lanes = 128;
  double vector_clock_hz = 1e9;
  double gemv_utilization = 0.5;
  double prefill_utilization = 0.5;

  double vector_elems_per_s() const { return vector_lanes * vector_clock_hz; }

  void validate() const {
    if (!(tensor_tops > 0) || !(npu_power_w > 0) || sram_kv_buffer_bytes == 0 || !(sram_power_w > 0) ||
        !(dram_bw_per_channel > 0) || dram_capacity_per_channel_bytes == 0 || !(e_dram_pj_per_bit > 0) ||
        vector_lanes <= 0 || !(vector_clock_hz > 0) || !(gemv_utilization > 0) || !(prefill_utilization > 0))
      throw std::invalid_argument("npu: all values must be positive");
  }
};

enum class AttentionKind { MHA, GQA };

struct MoeSpec {
  int num_experts = 0;
  int active_experts = 0;
  double expert_params = 0;
};

struct ModelConfig {
  std::string name;
  int layers = 0;
  int hidden = 0;
  int q_heads = 0;
  int kv_heads = 0;
  int ffn_inner = 0;
  bool gated_ffn = true;
  int vocab = 0;
  double total_weight_params = 0;
  std::optional<MoeSpec> moe;

  int head_dim() const { return hidden / q_heads; }
  int group_size() const { return q_heads / kv_heads; }
  AttentionKind attention_kind() const { return q_heads == kv_heads ? AttentionKind::MHA : AttentionKind::GQA; }
  bool is_moe() const { return moe.has_value(); }

  void validate() const {
    if (layers <= 0 || hidden <= 0 || q_heads <= 0 || kv_heads <= 0 || ffn_inner <= 0)
      throw std::invalid_argument("model " + name + ": shape fields must be positive");
    if (q_heads % kv_heads != 0) throw std::invalid_argument("model " + name + ": q_heads must be a multiple of kv_heads");
    if (hidden % q_heads != 0) throw std::invalid_argument("model " + name + ": hidden must be a multiple of q_heads");
    if (total_weight_params < 0) throw std::invalid_argument("model " + name + ": negative parameter count");
    if (moe && (moe->num_experts <= 0 || moe->active_experts <= 0 || moe->active_experts > moe->num_experts))
      throw std::invalid_argument("model " + name + ": bad moe spec");
  }
};

struct QuantScheme {
  std::string label = "FP16";
  int weight_bits = 16;
  int act_kv_bits = 16;

  static bool legal_bits(int b) { return b == 2 || b == 4 || b == 8 || b == 16; }

  void validate() const {
    if (!legal_bits(weight_bits) || !legal_bits(act_kv_bits))
      throw std::invalid_argument("quant " + label + ": bits must be one of 2,4,8,16");
  }

  static QuantScheme make(int wbits, int abits) {
    QuantScheme q;
    q.weight_bits = wbits;
    q.act_kv_bits = abits;
    q.label = (wbits == 16 && abits == 16) ? "FP16" : "W" + std::to_string(wbits) + "A" + std::to_string(abits);
    q.validate();
    return q;
  }

  // FP16, BF16, W8A8, W4A16, ...
  static QuantScheme parse(std::string_view s) {
    std::string u(s);
    std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    if (u == "FP16" || u == "BF16") {
      QuantScheme q = make(16, 16);
      q.label = u;
      return q;
    }
    auto a = u.find('A');
    if (u.size() < 4 || u[0] != 'W' || a == std::string::npos) throw std::invalid_argument("unknown quant scheme: " + std::string(s));
    int w = 0, x = 0;
    try {
      w = std::stoi(u.substr(1, a - 1));
      x = std::stoi(u.substr(a + 1));
    } catch (const std::exception&) {
      throw std::invalid_argument("unknown quant scheme: " + std::string(s));
    }
    QuantScheme q = make(w, x);
    q.label = u;
    return q;
  }
};

enum class ArchKind { Base1, Base2, KvnandD, KvnandC };

struct ArchVariant {
  ArchKind kind = ArchKind::KvnandC;
  int channels = 8;
  int dies_per_channel = 2;
  int g1_dies = 0;
  int g2_dies = 0;
  int total_dies = 16;

  static ArchVariant base1(int channels = 8) {
    return {ArchKind::Base1, channels, 1, channels, 0, channels};
  }
  // one IFC die and one plain KV die per channel
  static ArchVariant base2(int channels = 8) {
    return {ArchKind::Base2, channels, 2, channels, channels, 2 * channels};
  }
  static ArchVariant discrete(int g1, int g2, int channels = 8) {
    ArchVariant a{ArchKind::KvnandD, channels, 0, g1, g2, g1 + g2};
    a.dies_per_channel = static_cast<int>(ceil_div(static_cast<std::uint64_t>(std::max(1, g1 + g2)), static_cast<std::uint64_t>(std::max(1, channels))));
    a.validate();
    return a;
  }
  static ArchVariant compact(int dies, int channels = 8) {
    ArchVariant a{ArchKind::KvnandC, channels, 0, 0, 0, dies};
    a.dies_per_channel = static_cast<int>(ceil_div(static_cast<std::uint64_t>(std::max(1, dies)), static_cast<std::uint64_t>(std::max(1, channels))));
    a.validate();
    return a;
  }

  void validate() const {
    if (channels <= 0 || dies_per_channel <= 0 || total_dies <= 0) throw std::invalid_argument("arch: topology must be positive");
    if (kind == ArchKind::KvnandD && (g1_dies < 1 || g2_dies < 1))
      throw std::invalid_argument("arch: discrete needs g1 >= 1 and g2 >= 1");
  }

  bool is_kvnand() const { return kind == ArchKind::KvnandD || kind == ArchKind::KvnandC; }
  bool kv_in_dram() const { return kind == ArchKind::Base1; }

  int weight_dies() const { return kind == ArchKind::KvnandC ? total_dies : g1_dies; }
  int kv_dies() const {
    switch (kind) {
      case ArchKind::Base1: return 0;
      case ArchKind::Base2:
      case ArchKind::KvnandD: return g2_dies;
      case ArchKind::KvnandC: return total_dies;
    }
    return 0;
  }
  // dies carrying IFC logic
  int ifc_dies() const { return kind == ArchKind::Base2 ? g1_dies : total_dies; }

  // channels touched by a group of dies packed contiguously
  int channels_spanned(int dies) const {
    if (kind == ArchKind::Base1 || kind == ArchKind::Base2) return std::min(channels, dies);
    return std::min(channels, static_cast<int>(ceil_div(static_cast<std::uint64_t>(dies), static_cast<std::uint64_t>(dies_per_channel))));
  }

  // Compact counts as all dies doing weight work
  int effective_g1() const { return kind == ArchKind::KvnandC ? total_dies : g1_dies; }
  int effective_g2() const { return kind == ArchKind::KvnandD ? g2_dies : 0; }

  std::string name() const {
    switch (kind) {
      case ArchKind::Base1: return "Base-1";
      case ArchKind::Base2: return "Base-2";
      case ArchKind::KvnandD: return "KVNAND-D-(" + std::to_string(g1_dies) + "+" + std::to_string(g2_dies) + ")";
      case ArchKind::KvnandC: return "KVNAND-C-" + std::to_string(total_dies);
    }
    return "?";
  }

  // Base-1, base2, D-7+1, KVNAND-D-(7+1), C-16, KVNAND-C-16; optional "@<channels>"
  static ArchVariant parse(std::string_view text) {
    std::string s(text);
    int ch = 8;
    if (auto at = s.find('@'); at != std::string::npos) {
      ch = std::stoi(s.substr(at + 1));
      s = s.substr(0, at);
    }
    std::string u;
    for (char c : s)
      if (c != '(' && c != ')' && c != '-' && c != '_' && c != ' ') u += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (u.rfind("KVNAND", 0) == 0) u = u.substr(6);
    try {
      if (u == "BASE1") return base1(ch);
      if (u == "BASE2") return base2(ch);
      if (!u.empty() && u[0] == 'D') {
        auto plus = u.find('+');
        if (plus == std::string::npos) throw std::invalid_argument("");
        return discrete(std::stoi(u.substr(1, plus - 1)), std::stoi(u.substr(plus + 1)), ch);
      }
      if (!u.empty() && u[0] == 'C') return compact(std::stoi(u.substr(1)), ch);
    } catch (const std::invalid_argument&) {
    } catch (const std::out_of_range&) {
    }
    throw std::invalid_argument("unknown arch: " + std::string(text));
  }
};

inline double group_external_bw(const ArchVariant& arch, const FlashConfig& flash, int dies) {
  return arch.channels_spanned(dies) * flash.bw_external_per_die;
}

struct SimRequest {
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  std::int64_t context_start = 0;

  void validate() const {
    if (input_tokens < 0 || output_tokens < 0 || context_start < 0) throw std::invalid_argument("request: counts must be >= 0");
  }
  // tokens attended by decode step `step`, including the one being generated
  std::int64_t seq_len_at(std::int64_t step) const { return context_start + input_tokens + step + 1; }
  std::int64_t final_seq_len() const { return output_tokens > 0 ? seq_len_at(output_tokens - 1) : context_start + input_tokens; }
};

inline double kv_bytes_per_token(const ModelConfig& m, const QuantScheme& q) {
  return 2.0 * m.layers * m.kv_heads * m.head_dim() * q.act_kv_bits / kBitsPerByte;
}

inline double kv_size_unit(const ModelConfig& m, const QuantScheme& q) {
  return m.head_dim() * q.act_kv_bits / kBitsPerByte;
}

inline double weight_footprint(double params, const QuantScheme& q) { return params * q.weight_bits / kBitsPerByte; }

inline double weight_footprint(const ModelConfig& m, const QuantScheme& q) {
  return weight_footprint(m.total_weight_params, q);
}

// Per-layer weight parameter counts by matrix.
struct LayerParams {
  double qkv = 0;
  double o_proj = 0;
  double ffn_per_matrix = 0;
  int ffn_matrices = 0;
  double router = 0;
  int experts = 1;
  int active_experts = 1;

  double ffn_per_expert() const { return ffn_per_matrix * ffn_matrices; }
  double total() const { return qkv + o_proj + ffn_per_expert() * experts + router; }
  double active() const { return qkv + o_proj + ffn_per_expert() * active_experts + router; }
};

inline LayerParams layer_params(const ModelConfig& m) {
  LayerParams p;
  const double d = m.hidden, hd = m.head_dim();
  p.qkv = d * (m.q_heads + 2.0 * m.kv_heads) * hd;
  p.o_proj = m.q_heads * hd * d;
  p.ffn_per_matrix = d * m.ffn_inner;
  p.ffn_matrices = m.gated_ffn ? 3 : 2;
  if (m.moe) {
    p.experts = m.moe->num_experts;
    p.active_experts = m.moe->active_experts;
    p.router = d * m.moe->num_experts;
  }
  return p;
}

inline double expert_footprint(const ModelConfig& m, const QuantScheme& q) {
  if (!m.moe) return 0.0;
  return weight_footprint(m.moe->expert_params, q);
}

// Where KV slices land once the head-parallel page mapping is applied.
struct KvGeometry {
  int kv_planes = 0;              // planes holding KV (all, or the G2 group)
  int planes_per_kv_head = 0;     // P
  int streams_per_plane = 1;      // >1 only when 2k exceeds the KV planes
  double kv_size_unit = 0;        // bytes per (token, head, K|V)
  double bytes_per_token_per_plane = 0;  // bpt
  std::uint64_t tokens_per_page_fill = 0;  // t from the page formula
  std::uint64_t chunk_tokens = 0;          // slices flushed per program
  std::uint64_t tokens_per_page = 0;       // slices a closed page holds
  double fill_efficiency = 1.0;

  double page_fill_bytes() const { return tokens_per_page * bytes_per_token_per_plane; }
};

inline int kv_plane_count(const ArchVariant& a, const FlashConfig& f) { return a.kv_dies() * f.planes_per_die; }

// Per-plane staging bytes available to one stream before it must program.
inline double kv_stage_bytes_per_stream(const ArchVariant& a, const FlashConfig& f, const ModelConfig& m, int streams_per_plane,
                                        double threshold_fraction) {
  const double page = static_cast<double>(f.page_data_bytes);
  const double target = threshold_fraction * page;
  if (a.kind == ArchKind::KvnandC) {
    const double share = static_cast<double>(f.kv_buffer_per_plane_bytes) / (m.layers * streams_per_plane);
    return std::min(target, share);
  }
  return target;
}

inline KvGeometry kv_geometry(const ArchVariant& a, const FlashConfig& f, const ModelConfig& m, const QuantScheme& q, bool strict,
                              double threshold_fraction = 1.0) {
  if (!(threshold_fraction > 0.0) || threshold_fraction > 1.0)
    throw std::invalid_argument("partial-page threshold must be in (0, 1]");
  if (a.kind == ArchKind::KvnandC && threshold_fraction * f.page_data_bytes > f.kv_buffer_per_plane_bytes)
    throw std::invalid_argument("partial-page threshold exceeds kv_buffer_per_plane_bytes");
  KvGeometry g;
  g.kv_planes = kv_plane_count(a, f);
  g.kv_size_unit = kv_size_unit(m, q);
  const int streams = 2 * m.kv_heads;
  if (g.kv_planes <= 0) throw std::invalid_argument("kv layout: architecture has no KV flash planes");
  if (streams > g.kv_planes) {
    if (strict)
      throw std::invalid_argument("kv layout: 2k = " + std::to_string(streams) + " exceeds " + std::to_string(g.kv_planes) +
                                  " KV planes");
    g.planes_per_kv_head = 1;
    g.streams_per_plane = static_cast<int>(ceil_div(static_cast<std::uint64_t>(streams), static_cast<std::uint64_t>(g.kv_planes)));
  } else {
    int p = g.kv_planes / streams;
    const auto unit = static_cast<std::uint64_t>(g.kv_size_unit);
    while (p > 1 && (unit % static_cast<std::uint64_t>(p)) != 0) --p;
    g.planes_per_kv_head = p;
  }
  g.bytes_per_token_per_plane = g.kv_size_unit / g.planes_per_kv_head;
  const double page = static_cast<double>(f.page_data_bytes);
  g.tokens_per_page_fill = static_cast<std::uint64_t>(page * g.planes_per_kv_head / g.kv_size_unit);
  const double stage = kv_stage_bytes_per_stream(a, f, m, g.streams_per_plane, threshold_fraction);
  g.chunk_tokens = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(stage / g.bytes_per_token_per_plane));
  const std::uint64_t full = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(page / g.bytes_per_token_per_plane));
  g.chunk_tokens = std::min(g.chunk_tokens, full);
  const std::uint64_t programs = full / g.chunk_tokens >= static_cast<std::uint64_t>(f.max_partial_programs)
                                     ? static_cast<std::uint64_t>(f.max_partial_programs)
                                     : ceil_div(full, g.chunk_tokens);
  g.tokens_per_page = std::min(full, programs * g.chunk_tokens);
  g.fill_efficiency = g.tokens_per_page * g.bytes_per_token_per_plane / page;
  return g;
}

enum class OomKind { None, Weights, Kv };

struct CapacityResult {
  OomKind oom = OomKind::None;
  std::string reason;
  double weight_bytes = 0;
  double weight_capacity = 0;
  double kv_bytes = 0;
  double kv_capacity = 0;

  bool fits() const { return oom == OomKind::None; }
};

inline const char* to_string(OomKind k) {
  switch (k) {
    case OomKind::None: return "fits";
    case OomKind::Weights: return "weights";
    case OomKind::Kv: return "kv";
  }
  return "?";
}

inline CapacityResult capacity_check(const ArchVariant& a, const FlashConfig& f, const NpuConfig& npu, const ModelConfig& m,
                                     const QuantScheme& q, std::int64_t context_len) {
  if (context_len < 0) throw std::invalid_argument("capacity_check: negative context length");
  CapacityResult r;
  const double die = static_cast<double>(f.die_capacity_bytes());
  const double w = weight_footprint(m, q);
  double kv = static_cast<double>(context_len) * kv_bytes_per_token(m, q);
  if (a.is_kvnand() && context_len > 0) kv /= kv_geometry(a, f, m, q, false).fill_efficiency;
  r.weight_bytes = w;
  r.kv_bytes = kv;
  switch (a.kind) {
    case ArchKind::Base1:
      r.weight_capacity = a.total_dies * die;
      r.kv_capacity = a.channels * static_cast<double>(npu.dram_capacity_per_channel_bytes);
      break;
    case ArchKind::Base2:
      r.weight_capacity = a.g1_dies * die;
      r.kv_capacity = a.total_dies * die - w;
      break;
    case ArchKind::KvnandD:
      r.weight_capacity = a.g1_dies * die;
      r.kv_capacity = a.g2_dies * die;
      break;
    case ArchKind::KvnandC:
      r.weight_capacity = a.total_dies * die;
      r.kv_capacity = a.total_dies * die - w;
      break;
  }
  if (w > r.weight_capacity) {
    r.oom = OomKind::Weights;
    r.reason = "weights " + std::to_string(static_cast<long long>(w)) + " B exceed " +
               std::to_string(static_cast<long long>(r.weight_capacity)) + " B";
  } else if (kv > r.kv_capacity) {
    r.oom = OomKind::Kv;
    r.reason = "kv " + std::to_string(static_cast<long long>(kv)) + " B exceeds " +
               std::to_string(static_cast<long long>(std::max(0.0, r.kv_capacity))) + " B";
  }
  return r;
}

}  // namespace kvnand
