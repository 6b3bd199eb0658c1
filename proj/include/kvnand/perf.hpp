// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "kv_mapping.hpp"
#include "params.hpp"
#include "workload.hpp"

namespace kvnand {

struct OomError : std::runtime_error {
  OomKind kind;
  std::int64_t step;
  OomError(OomKind k, std::int64_t s, const std::string& why) : std::runtime_error(why), kind(k), step(s) {}
};

struct PipelineStage {
  double read_time = 0;     // per page
  double compute_time = 0;  // per page
  std::uint64_t pages = 0;  // iterations on the busiest plane

  double latency() const {
    if (pages == 0) return 0;
    return static_cast<double>(pages) * std::max(read_time, compute_time) + compute_time;
  }
};

struct LatencyBreakdown {
  Nanos qkv_gen = 0;
  Nanos logit = 0;
  Nanos softmax_roundtrip = 0;
  Nanos attend = 0;
  Nanos o_proj = 0;
  Nanos ffn = 0;
  Nanos kv_write_stall = 0;
  Nanos interconnect = 0;
  Nanos npu_vector = 0;
  Nanos total = 0;
  double tokens_per_s = 0;

  static const std::vector<std::string>& columns() {
    static const std::vector<std::string> c{"qkv_gen", "logit",          "softmax_roundtrip", "attend",    "o_proj",
                                            "ffn",     "kv_write_stall", "interconnect",      "npu_vector"};
    return c;
  }
  std::vector<Nanos> components() const {
    return {qkv_gen, logit, softmax_roundtrip, attend, o_proj, ffn, kv_write_stall, interconnect, npu_vector};
  }
  void finish() {
    const auto c = components();
    total = std::accumulate(c.begin(), c.end(), Nanos{0});
    tokens_per_s = total > 0 ? kNsPerSecond / static_cast<double>(total) : 0.0;
  }
};

// Data moved and resources kept busy by one decode step; feeds the energy model.
struct StepActivity {
  double flash_read_bytes = 0;   // internal array reads
  double pages_read = 0;
  double interface_bytes = 0;    // die external interface
  double dram_bytes = 0;
  double program_bytes = 0;
  double npu_active_ns = 0;
  double ifc_die_busy_ns = 0;    // sum over dies of busy time
};

struct PerfOptions {
  bool hg_overlap = true;
  bool kv_mapping = true;
  bool fuse_gate_up = false;
  double partial_threshold = 1.0;
};

inline int fmac_sizing(const FlashConfig& f, const ModelConfig& m, int elem_bits = 16) {
  const double elems = static_cast<double>(f.page_data_bytes) * kBitsPerByte / elem_bits;
  const double per_read = f.t_read_page_ns * 1e-9 * f.fmac_clock_hz;
  return static_cast<int>(std::ceil(elems / per_read)) * m.group_size();
}

inline double page_compute_ns(const FlashConfig& f, double page_bytes, int elem_bits, double reuse, int fmacs) {
  if (fmacs <= 0) throw std::invalid_argument("page_compute_ns: fmacs must be positive");
  const double elems = page_bytes * kBitsPerByte / elem_bits;
  return elems * reuse / (fmacs * f.fmac_clock_hz) * kNsPerSecond;
}

inline double ifc_gemv_latency(double bytes, int dies, const FlashConfig& f, int fmacs, int elem_bits = 16, double reuse = 1.0) {
  if (dies <= 0) throw std::invalid_argument("ifc_gemv_latency: dies must be >= 1");
  if (bytes < 0) throw std::invalid_argument("ifc_gemv_latency: negative byte count");
  if (bytes == 0) return 0;
  const double stripe = static_cast<double>(dies) * f.planes_per_die * static_cast<double>(f.page_data_bytes);
  PipelineStage st{f.t_read_page_ns, page_compute_ns(f, static_cast<double>(f.page_data_bytes), elem_bits, reuse, fmacs),
                   static_cast<std::uint64_t>(std::ceil(bytes / stripe))};
  return st.latency();
}

inline double naive_kv_read_latency(const ModelConfig& m, const QuantScheme& q, std::int64_t seq_len, int dies, const FlashConfig& f) {
  if (dies <= 0) throw std::invalid_argument("naive_kv_read_latency: dies must be >= 1");
  if (seq_len <= 0) return 0;
  return transfer_ns(kv_bytes_per_token(m, q) * static_cast<double>(seq_len), dies * f.bw_external_per_die);
}

// Permutation flow shop with n identical jobs.
inline double pipeline_makespan(int n, const std::vector<double>& stages) {
  if (n < 1) throw std::invalid_argument("pipeline_makespan: n must be >= 1");
  double sum = 0, mx = 0;
  for (double s : stages) {
    if (s < 0) throw std::invalid_argument("pipeline_makespan: negative stage time");
    sum += s;
    mx = std::max(mx, s);
  }
  return sum + (n - 1) * mx;
}

inline double hg_pipeline_latency(int n_hg, double t_qkv_hg, double t_attn_hg, double t_handoff) {
  return pipeline_makespan(n_hg, {t_qkv_hg, t_attn_hg + t_handoff});
}

// One attention pass (Logit or Attend) over one layer's K or V planes.
struct AttentionPass {
  double latency = 0;
  double pages_per_plane = 0;
  double active_planes = 0;
};

inline AttentionPass mapped_attention_pass(const KvGeometry& g, const FlashConfig& f, const ModelConfig& m, const QuantScheme& q,
                                           std::int64_t seq_len) {
  AttentionPass p;
  if (seq_len <= 0) return p;
  const auto pages = ceil_div(static_cast<std::uint64_t>(seq_len), g.tokens_per_page) * static_cast<std::uint64_t>(g.streams_per_plane);
  PipelineStage st{f.t_read_page_ns, page_compute_ns(f, g.page_fill_bytes(), q.act_kv_bits, m.group_size(), f.fmacs_per_plane), pages};
  p.latency = st.latency();
  p.pages_per_plane = static_cast<double>(pages);
  p.active_planes = static_cast<double>(m.kv_heads) * g.planes_per_kv_head / g.streams_per_plane;
  return p;
}

inline AttentionPass unmapped_attention_pass(const FlashConfig& f, const ModelConfig& m, const QuantScheme& q, std::int64_t seq_len) {
  AttentionPass p;
  if (seq_len <= 0) return p;
  const auto gen = GenerationOrderLayout::make(f, m, q);
  // every stream of a layer has the same page count; take the first one
  const auto pages = gen.pages_for_stream({0, 0, Tensor::K}, static_cast<std::uint64_t>(seq_len));
  PipelineStage st{f.t_read_page_ns, page_compute_ns(f, kv_size_unit(m, q), q.act_kv_bits, m.group_size(), f.fmacs_per_plane), pages};
  p.latency = st.latency();
  p.pages_per_plane = static_cast<double>(pages);
  p.active_planes = m.kv_heads;
  return p;
}

struct DecodeResult {
  LatencyBreakdown latency;
  StepActivity activity;
};

namespace detail {

struct Acc {
  double qkv = 0, logit = 0, softmax = 0, attend = 0, oproj = 0, ffn = 0, stall = 0, inter = 0, vec = 0;
};

inline Nanos rnd(double ns) { return round_ns(ns); }

}  // namespace detail

inline DecodeResult decode_token_detail(const ArchVariant& a, const FlashConfig& f, const NpuConfig& npu, const ModelConfig& m,
                                        const QuantScheme& q, std::int64_t seq_len, const PerfOptions& opt = {}) {
  if (seq_len < 1) throw std::invalid_argument("decode_token_latency: seq_len must be >= 1");
  a.validate();
  f.validate();
  npu.validate();
  const auto cap = capacity_check(a, f, npu, m, q, seq_len);
  if (!cap.fits()) throw OomError(cap.oom, -1, cap.reason);

  const auto g = build_decode_graph(m, q, seq_len, {opt.fuse_gate_up, a.is_kvnand()});
  const auto& layer = g.layers.front();
  const double L = m.layers;
  const double s = static_cast<double>(seq_len);
  const double h = m.q_heads, k = m.kv_heads, hd = m.head_dim();
  const double ab = q.act_kv_bits;
  const int fm = f.fmacs_per_plane;
  const int wdies = a.weight_dies();
  const double wbw = group_external_bw(a, f, wdies);
  const double vec_rate = npu.vector_elems_per_s();
  const double npu_gemv = npu.tensor_tops * npu.gemv_utilization;
  const double page = static_cast<double>(f.page_data_bytes);

  detail::Acc t;
  StepActivity act;

  auto weight_gemv = [&](const OperatorNode& n, int dies) {
    const double ns = ifc_gemv_latency(n.weight_bytes, dies, f, fm, q.weight_bits);
    const double xfer = transfer_ns(n.activation_in_bytes + n.activation_out_bytes, group_external_bw(a, f, dies));
    act.flash_read_bytes += n.weight_bytes;
    act.pages_read += std::ceil(n.weight_bytes / page);
    act.interface_bytes += n.activation_in_bytes + n.activation_out_bytes;
    act.ifc_die_busy_ns += ns * dies;
    return std::pair{ns, xfer};
  };

  double qkv_bytes = 0;
  for (const auto& n : layer) {
    switch (n.kind) {
      case OpKind::QkvGen:
        qkv_bytes += n.weight_bytes;
        if (a.kind != ArchKind::KvnandD) {
          auto [ns, x] = weight_gemv(n, wdies);
          t.qkv += ns;
          t.inter += x;
        }
        break;
      case OpKind::OProj: {
        auto [ns, x] = weight_gemv(n, wdies);
        t.oproj += ns;
        t.inter += x;
        break;
      }
      case OpKind::FfnFc: {
        auto [ns, x] = weight_gemv(n, wdies);
        t.ffn += ns;
        t.inter += x;
        break;
      }
      case OpKind::MoeRouter: {
        const double ns = std::max(transfer_ns(n.weight_bytes, wbw), seconds_to_ns(n.flops / npu_gemv));
        t.ffn += ns;
        act.interface_bytes += n.weight_bytes;
        act.flash_read_bytes += n.weight_bytes;
        act.npu_active_ns += ns;
        break;
      }
      case OpKind::Norm:
      case OpKind::RoPE:
      case OpKind::Residual:
        t.vec += seconds_to_ns(n.activation_in_bytes * kBitsPerByte / ab / vec_rate);
        break;
      default:
        break;
    }
  }

  const double softmax_vec = seconds_to_ns(h * s / vec_rate);
  const double kv_layer_tensor = s * k * hd * ab / kBitsPerByte;  // K (or V) bytes of one layer
  const double new_kv = kv_bytes_per_token(m, q) / L;               // per layer

  if (!a.is_kvnand()) {
    const double bw = a.kv_in_dram() ? a.channels * npu.dram_bw_per_channel : group_external_bw(a, f, a.kv_dies());
    const double flops = 2.0 * h * hd * s;
    const double pass = std::max(transfer_ns(kv_layer_tensor, bw), seconds_to_ns(flops / npu_gemv));
    t.logit = pass;
    t.attend = pass;
    t.softmax = softmax_vec;
    act.npu_active_ns += 2 * pass + softmax_vec;
    if (a.kv_in_dram()) {
      act.dram_bytes += 2 * kv_layer_tensor + new_kv;
    } else {
      act.interface_bytes += 2 * kv_layer_tensor + new_kv;
      act.flash_read_bytes += 2 * kv_layer_tensor;
      act.pages_read += 2 * std::ceil(kv_layer_tensor / page);
      act.program_bytes += new_kv;
    }
    // q/k/v vectors reach the NPU from the weight dies
    t.inter += transfer_ns((h + 2 * k) * hd * ab / kBitsPerByte, wbw);
  } else {
    const auto geo = kv_geometry(a, f, m, q, false, opt.partial_threshold);
    const AttentionPass pass = opt.kv_mapping ? mapped_attention_pass(geo, f, m, q, seq_len) : unmapped_attention_pass(f, m, q, seq_len);
    const double kv_bw = group_external_bw(a, f, a.kv_dies());
    const double roundtrip = transfer_ns(2.0 * h * s * ab / kBitsPerByte, kv_bw) + softmax_vec;
    const double handoff_bytes = (h + 2 * k) * hd * ab / kBitsPerByte;
    const double kv_pages = 2 * pass.pages_per_plane * pass.active_planes;
    const double kv_die_busy = pass.latency * static_cast<double>(a.kv_dies());
    act.flash_read_bytes += kv_pages * page;
    act.pages_read += kv_pages;
    act.interface_bytes += 2.0 * h * s * ab / kBitsPerByte + handoff_bytes;
    act.ifc_die_busy_ns += kv_die_busy;
    act.npu_active_ns += softmax_vec;
    act.program_bytes += new_kv / geo.fill_efficiency;

    if (a.kind == ArchKind::KvnandC) {
      t.logit = pass.latency;
      t.attend = pass.latency;
      t.softmax = roundtrip;
      t.inter += transfer_ns(handoff_bytes, kv_bw);
    } else {
      const int n = m.kv_heads;
      OperatorNode hg{OpKind::QkvGen, "qkv_hg"};
      hg.weight_bytes = qkv_bytes / n;
      hg.activation_in_bytes = m.hidden * ab / kBitsPerByte;
      hg.activation_out_bytes = handoff_bytes / n;
      double tq = 0;
      for (int i = 0; i < n; ++i) tq = weight_gemv(hg, a.g1_dies).first;
      const double handoff = transfer_ns(handoff_bytes / n, kv_bw) + transfer_ns(hg.activation_in_bytes, wbw);
      const double s2 = handoff + (pass.latency + roundtrip) / n;
      const double s3 = pass.latency / n;
      const double serial = n * (tq + s2 + s3);
      const double span = opt.hg_overlap ? pipeline_makespan(n, {tq, s2, s3}) : n * tq + pipeline_makespan(n, {s2, s3});
      const double scale = serial > 0 ? span / serial : 1.0;
      t.qkv = n * tq * scale;
      t.inter += n * handoff * scale;
      t.logit = pass.latency * scale;
      t.softmax = roundtrip * scale;
      t.attend = pass.latency * scale;
    }

    // per-plane program time for one token against the rest of the step
    const double streams_on_plane = L * geo.streams_per_plane;
    const double prog_ns = streams_on_plane / static_cast<double>(geo.chunk_tokens) * f.t_program_page_ns;
    const double rest = L * (t.qkv + t.logit + t.softmax + t.attend + t.oproj + t.ffn + t.inter + t.vec);
    t.stall = std::max(0.0, prog_ns - rest) / L;
  }

  act.npu_active_ns += t.vec;
  act.npu_active_ns *= L;
  act.flash_read_bytes *= L;
  act.pages_read *= L;
  act.interface_bytes *= L;
  act.dram_bytes *= L;
  act.program_bytes *= L;
  act.ifc_die_busy_ns *= L;

  DecodeResult r;
  r.activity = act;
  auto& b = r.latency;
  b.qkv_gen = detail::rnd(L * t.qkv);
  b.logit = detail::rnd(L * t.logit);
  b.softmax_roundtrip = detail::rnd(L * t.softmax);
  b.attend = detail::rnd(L * t.attend);
  b.o_proj = detail::rnd(L * t.oproj);
  b.ffn = detail::rnd(L * t.ffn);
  b.kv_write_stall = detail::rnd(L * t.stall);
  b.interconnect = detail::rnd(L * t.inter);
  b.npu_vector = detail::rnd(L * t.vec);
  b.finish();
  return r;
}

inline LatencyBreakdown decode_token_latency(const ArchVariant& a, const FlashConfig& f, const NpuConfig& npu, const ModelConfig& m,
                                             const QuantScheme& q, std::int64_t seq_len, const PerfOptions& opt = {}) {
  return decode_token_detail(a, f, npu, m, q, seq_len, opt).latency;
}

// Attention flash-read time for one layer, K and V passes.
inline double attention_read_latency(const ArchVariant& a, const FlashConfig& f, const ModelConfig& m, const QuantScheme& q,
                                     std::int64_t seq_len, bool mapped) {
  if (!mapped) return 2 * unmapped_attention_pass(f, m, q, seq_len).latency;
  return 2 * mapped_attention_pass(kv_geometry(a, f, m, q, false), f, m, q, seq_len).latency;
}

inline void write_breakdown_header(std::ostream& os, char sep = ',') {
  os << "step" << sep << "seq_len";
  for (const auto& c : LatencyBreakdown::columns()) os << sep << c;
  os << sep << "total_ns\n";
}

inline void write_breakdown_row(std::ostream& os, std::int64_t step, std::int64_t seq_len, const LatencyBreakdown& b, char sep = ',') {
  os << step << sep << seq_len;
  for (Nanos v : b.components()) os << sep << v;
  os << sep << b.total << "\n";
}

}  // namespace kvnand
