// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <ostream>
#include <vector>

#include "energy.hpp"
#include "perf.hpp"

namespace kvnand {

struct StepRecord {
  std::int64_t step = 0;
  std::int64_t seq_len = 0;
  LatencyBreakdown latency;
  EnergyBreakdown energy;
};

struct SimResult {
  std::vector<StepRecord> steps;
  Nanos total_ns = 0;
  double total_energy_pj = 0;
  double mean_tokens_per_s = 0;

  double joules_per_token() const { return steps.empty() ? 0.0 : total_energy_pj * 1e-12 / static_cast<double>(steps.size()); }
};

inline SimResult simulate_request(const ArchVariant& a, const FlashConfig& f, const NpuConfig& npu, const ModelConfig& m,
                                  const QuantScheme& q, const SimRequest& req, const PerfOptions& perf = {},
                                  const EnergyOptions& eopt = {}) {
  req.validate();
  SimResult r;
  r.steps.reserve(static_cast<std::size_t>(req.output_tokens));
  for (std::int64_t i = 0; i < req.output_tokens; ++i) {
    const std::int64_t s = req.seq_len_at(i);
    DecodeResult d;
    try {
      d = decode_token_detail(a, f, npu, m, q, s, perf);
    } catch (const OomError& e) {
      throw OomError(e.kind, i, "step " + std::to_string(i) + " (seq_len " + std::to_string(s) + "): " + e.what());
    }
    StepRecord rec{i, s, d.latency, energy_per_token(a, f, npu, d, eopt)};
    r.total_ns += rec.latency.total;
    r.total_energy_pj += rec.energy.total_pj;
    r.steps.push_back(rec);
  }
  if (r.total_ns > 0) r.mean_tokens_per_s = static_cast<double>(r.steps.size()) * kNsPerSecond / static_cast<double>(r.total_ns);
  return r;
}

inline void write_breakdown_csv(std::ostream& os, const SimResult& r, char sep = ',') {
  write_breakdown_header(os, sep);
  for (const auto& s : r.steps) write_breakdown_row(os, s.step, s.seq_len, s.latency, sep);
}

inline void write_energy_csv(std::ostream& os, const SimResult& r, char sep = ',') {
  os << "step" << sep << "seq_len";
  for (const auto& c : EnergyBreakdown::columns()) os << sep << c << "_pj";
  os << sep << "total_pj\n";
  char buf[64];
  for (const auto& s : r.steps) {
    os << s.step << sep << s.seq_len;
    for (double v : s.energy.components()) {
      std::snprintf(buf, sizeof buf, "%.1f", v);
      os << sep << buf;
    }
    std::snprintf(buf, sizeof buf, "%.1f", s.energy.total_pj);
    os << sep << buf << "\n";
  }
}

}  // namespace kvnand
