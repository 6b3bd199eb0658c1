// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "params.hpp"

namespace kvnand {

enum class OpKind { QkvGen, Logit, Softmax, Attend, OProj, FfnFc, MoeRouter, Norm, RoPE, Residual };
enum class Placement { IFC, NPU };

inline const char* to_string(OpKind k) {
  switch (k) {
    case OpKind::QkvGen: return "QkvGen";
    case OpKind::Logit: return "Logit";
    case OpKind::Softmax: return "Softmax";
    case OpKind::Attend: return "Attend";
    case OpKind::OProj: return "OProj";
    case OpKind::FfnFc: return "FfnFc";
    case OpKind::MoeRouter: return "MoeRouter";
    case OpKind::Norm: return "Norm";
    case OpKind::RoPE: return "RoPE";
    case OpKind::Residual: return "Residual";
  }
  return "?";
}

inline const char* to_string(Placement p) { return p == Placement::IFC ? "IFC" : "NPU"; }

struct OperatorNode {
  OpKind kind = OpKind::Norm;
  std::string label;
  double weight_bytes = 0;
  double kv_bytes_read = 0;
  double activation_in_bytes = 0;
  double activation_out_bytes = 0;
  double flops = 0;
  Placement placement_hint = Placement::NPU;

  double total_bytes() const { return weight_bytes + kv_bytes_read + activation_in_bytes + activation_out_bytes; }
  bool is_weight_gemv() const { return kind == OpKind::QkvGen || kind == OpKind::OProj || kind == OpKind::FfnFc; }
};

struct DecodeGraph {
  std::int64_t seq_len = 0;
  int head_groups = 0;
  int q_heads_per_group = 0;
  std::vector<std::vector<OperatorNode>> layers;
};

struct GraphOptions {
  bool fuse_gate_up = false;
  // false for Base-1/Base-2, where Logit/Attend run on the NPU
  bool attention_on_ifc = true;
};

inline DecodeGraph build_decode_graph(const ModelConfig& m, const QuantScheme& q, std::int64_t seq_len, GraphOptions opt = {}) {
  if (seq_len < 1) throw std::invalid_argument("build_decode_graph: seq_len must be >= 1");
  m.validate();
  q.validate();
  DecodeGraph g;
  g.seq_len = seq_len;
  g.head_groups = m.kv_heads;
  g.q_heads_per_group = m.group_size();

  const double d = m.hidden, hd = m.head_dim(), h = m.q_heads, k = m.kv_heads, s = static_cast<double>(seq_len);
  const int wb = q.weight_bits, ab = q.act_kv_bits;
  const auto act = [ab](double elems) { return bits_to_bytes(elems, ab); };
  const auto wts = [wb](double elems) { return bits_to_bytes(elems, wb); };
  const Placement attn = opt.attention_on_ifc ? Placement::IFC : Placement::NPU;
  const LayerParams lp = layer_params(m);

  auto gemv = [&](OpKind kind, std::string label, double rows_in, double cols_out) {
    OperatorNode n{kind, std::move(label)};
    n.weight_bytes = wts(rows_in * cols_out);
    n.activation_in_bytes = act(rows_in);
    n.activation_out_bytes = act(cols_out);
    n.flops = 2.0 * rows_in * cols_out;
    n.placement_hint = Placement::IFC;
    return n;
  };
  auto vec = [&](OpKind kind, std::string label, double elems, double flops_per_elem) {
    OperatorNode n{kind, std::move(label)};
    n.activation_in_bytes = act(elems);
    n.activation_out_bytes = act(elems);
    n.flops = flops_per_elem * elems;
    n.placement_hint = Placement::NPU;
    return n;
  };

  std::vector<OperatorNode> layer;
  layer.push_back(vec(OpKind::Norm, "attn_norm", d, 4));
  layer.push_back(gemv(OpKind::QkvGen, "qkv", d, (h + 2 * k) * hd));
  layer.push_back(vec(OpKind::RoPE, "rope", (h + k) * hd, 3));

  OperatorNode logit{OpKind::Logit, "logit"};
  logit.kv_bytes_read = act(s * k * hd);
  logit.activation_in_bytes = act(h * hd);
  logit.activation_out_bytes = act(h * s);
  logit.flops = 2.0 * h * hd * s;
  logit.placement_hint = attn;
  layer.push_back(logit);

  layer.push_back(vec(OpKind::Softmax, "softmax", h * s, 5));

  OperatorNode attend{OpKind::Attend, "attend"};
  attend.kv_bytes_read = act(s * k * hd);
  attend.activation_in_bytes = act(h * s);
  attend.activation_out_bytes = act(h * hd);
  attend.flops = 2.0 * h * hd * s;
  attend.placement_hint = attn;
  layer.push_back(attend);

  layer.push_back(gemv(OpKind::OProj, "o_proj", h * hd, d));
  layer.push_back(vec(OpKind::Residual, "attn_residual", d, 1));
  layer.push_back(vec(OpKind::Norm, "ffn_norm", d, 4));

  const double f = m.ffn_inner;
  auto ffn_block = [&](const std::string& prefix) {
    if (lp.ffn_matrices == 3) {
      if (opt.fuse_gate_up) {
        layer.push_back(gemv(OpKind::FfnFc, prefix + "gate_up", d, 2 * f));
      } else {
        layer.push_back(gemv(OpKind::FfnFc, prefix + "gate", d, f));
        layer.push_back(gemv(OpKind::FfnFc, prefix + "up", d, f));
      }
      layer.push_back(gemv(OpKind::FfnFc, prefix + "down", f, d));
    } else {
      layer.push_back(gemv(OpKind::FfnFc, prefix + "fc1", d, f));
      layer.push_back(gemv(OpKind::FfnFc, prefix + "fc2", f, d));
    }
  };
  if (m.moe) {
    OperatorNode router = gemv(OpKind::MoeRouter, "router", d, m.moe->num_experts);
    router.placement_hint = Placement::NPU;
    layer.push_back(router);
    for (int e = 0; e < m.moe->active_experts; ++e) ffn_block("expert" + std::to_string(e) + ".");
  } else {
    ffn_block("");
  }
  layer.push_back(vec(OpKind::Residual, "ffn_residual", d, 1));

  g.layers.assign(static_cast<std::size_t>(m.layers), layer);
  return g;
}

inline double arithmetic_intensity(const OperatorNode& n) {
  const double b = n.total_bytes();
  if (!(b > 0)) throw std::invalid_argument("arithmetic_intensity: node moves zero bytes");
  return n.flops / b;
}

enum class Bound { MemoryBound, ComputeBound };

inline const char* to_string(Bound b) { return b == Bound::MemoryBound ? "MemoryBound" : "ComputeBound"; }

// ties resolve to MemoryBound
inline Bound roofline_bound(const OperatorNode& n, double platform_bw, double platform_peak) {
  if (!(platform_bw > 0) || !(platform_peak > 0)) throw std::invalid_argument("roofline_bound: platform must be positive");
  if (n.flops == 0) return Bound::MemoryBound;
  return arithmetic_intensity(n) <= platform_peak / platform_bw ? Bound::MemoryBound : Bound::ComputeBound;
}

inline std::string dump_graph(const DecodeGraph& g) {
  std::ostringstream os;
  os << "# seq_len=" << g.seq_len << " head_groups=" << g.head_groups << " q_heads_per_group=" << g.q_heads_per_group << "\n";
  char buf[320];
  for (std::size_t l = 0; l < g.layers.size(); ++l) {
    for (const auto& n : g.layers[l]) {
      std::snprintf(buf, sizeof buf, "L%zu %s %s w=%.0f kv=%.0f in=%.0f out=%.0f flops=%.0f place=%s\n", l, to_string(n.kind),
                    n.label.c_str(), n.weight_bytes, n.kv_bytes_read, n.activation_in_bytes, n.activation_out_bytes, n.flops,
                    to_string(n.placement_hint));
      os << buf;
    }
  }
  return os.str();
}

struct PrefillEstimate {
  double compute_ns = 0;
  double stream_ns = 0;
  double kv_write_ns = 0;
  double total_ns = 0;
};

inline PrefillEstimate prefill_summary(const ModelConfig& m, const QuantScheme& q, std::int64_t input_tokens, const NpuConfig& npu,
                                       const FlashConfig& flash, const ArchVariant& arch, double utilization) {
  if (input_tokens < 1) throw std::invalid_argument("prefill_summary: input_tokens must be >= 1");
  if (!(utilization > 0) || utilization > 1) throw std::invalid_argument("prefill_summary: utilization must be in (0, 1]");
  const double t = static_cast<double>(input_tokens);
  const LayerParams lp = layer_params(m);
  const double gemm = 2.0 * lp.active() * m.layers * t;
  const double attn = 2.0 * m.layers * m.q_heads * m.head_dim() * t * t;
  PrefillEstimate p;
  p.compute_ns = seconds_to_ns((gemm + attn) / (npu.tensor_tops * utilization));
  const double agg_flash = arch.channels * flash.bw_external_per_die;
  p.stream_ns = transfer_ns(weight_footprint(m, q), agg_flash);
  const double kv = t * kv_bytes_per_token(m, q);
  p.kv_write_ns = arch.kv_in_dram() ? transfer_ns(kv, arch.channels * npu.dram_bw_per_channel) : transfer_ns(kv, agg_flash);
  p.total_ns = std::max(p.compute_ns, p.stream_ns) + p.kv_write_ns;
  return p;
}

inline PrefillEstimate prefill_summary(const ModelConfig& m, const QuantScheme& q, std::int64_t input_tokens, const NpuConfig& npu,
                                       const FlashConfig& flash, const ArchVariant& arch) {
  return prefill_summary(m, q, input_tokens, npu, flash, arch, npu.prefill_utilization);
}

}  // namespace kvnand
