// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "kv_mapping.hpp"
#include "ledger.hpp"
#include "params.hpp"

namespace kvnand {

struct LifetimeExhausted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline double lifetime_pe_estimate(double total_kv_bytes_written, double kv_capacity_bytes) {
  if (!(kv_capacity_bytes > 0)) throw std::invalid_argument("lifetime_pe_estimate: capacity must be positive");
  return total_kv_bytes_written / kv_capacity_bytes;
}

// Applies each plan's per-block reads; returns total page reads.
inline std::uint64_t pgrd_simulation(const std::vector<ReadPlan>& workload, ReliabilityLedger& ledger) {
  std::uint64_t total = 0;
  for (const auto& plan : workload)
    for (const auto& [b, n] : plan.block_reads) {
      ledger.record_reads(b, n);
      total += n;
    }
  return total;
}

struct ReclaimEvent {
  double time_ns = 0;
  BlockId from = 0;
  BlockId to = 0;
  std::uint64_t pages_programmed = 0;
};

inline ReclaimEvent reclaim(FtlTable& ftl, BlockId block, double time_ns) {
  auto& led = ftl.ledger();
  const auto& c = led.at(block);
  if (!led.needs_reclaim(block) && c.pe < led.limits.allocation_pe_ceiling(false))
    throw std::invalid_argument("reclaim: block " + std::to_string(block) + " is below the read and wear thresholds");
  if (!ftl.block_live(block)) throw std::invalid_argument("reclaim: block " + std::to_string(block) + " holds no live data");
  const int plane = static_cast<int>(block / led.blocks_per_plane);
  BlockId to = 0;
  try {
    to = ftl.allocate_block(plane, true);
  } catch (const std::runtime_error&) {
    throw LifetimeExhausted("lifetime exhausted: no spare block on plane " + std::to_string(plane) + " for reclaim of block " +
                            std::to_string(block));
  }
  ftl.remap_block(block, to);
  led.at(block).pgrd = 0;
  if (led.at(block).pe >= led.limits.pe_budget) led.at(block).retired = true;
  led.events.push_back({time_ns, "reclaim", block, to});
  return {time_ns, block, to, ftl.layout().pages_per_block};
}

struct PgrdReport {
  std::vector<std::uint64_t> pgrd;  // per block, generation order for the unmitigated layout
  std::uint64_t max_pgrd = 0;
  std::uint64_t total_reads = 0;
  std::uint64_t steps = 0;
  std::uint64_t reclaims = 0;
};

// Generation-order layout without mapping. Each page is read once per
// (layer, head group) pass that has K or V data on it, every decode step.
inline PgrdReport unmitigated_pgrd(const FlashConfig& f, const ModelConfig& m, const QuantScheme& q, const SimRequest& req) {
  req.validate();
  const auto gen = GenerationOrderLayout::make(f, m, q);
  const auto unit = static_cast<std::uint64_t>(gen.kv_size_unit);
  const std::uint64_t final_tokens = static_cast<std::uint64_t>(req.final_seq_len());
  const std::uint64_t bytes = final_tokens * static_cast<std::uint64_t>(m.layers) * gen.record_bytes();
  const std::uint64_t pages = ceil_div(bytes, f.page_data_bytes);
  const std::uint64_t blocks = ceil_div(pages, f.pages_per_block);

  std::vector<std::uint64_t> rate(blocks, 0);  // reads per step
  // offsets of one pass grow with the token index, so a page is new to the pass iff it lies past the last one counted
  constexpr std::uint64_t kNone = ~0ull;
  std::vector<std::uint64_t> last(static_cast<std::size_t>(m.layers * m.kv_heads), kNone);
  auto add_token = [&](std::uint64_t j) {
    for (int L = 0; L < m.layers; ++L)
      for (int hg = 0; hg < m.kv_heads; ++hg) {
        auto& lp = last[static_cast<std::size_t>(L * m.kv_heads + hg)];
        for (Tensor t : {Tensor::K, Tensor::V}) {
          const std::uint64_t off = gen.slice_offset(j, L, hg, t);
          for (std::uint64_t p = off / f.page_data_bytes; p <= (off + unit - 1) / f.page_data_bytes; ++p)
            if (lp == kNone || p > lp) {
              rate[p / f.pages_per_block] += 1;
              lp = p;
            }
        }
      }
  };

  const std::uint64_t resident = static_cast<std::uint64_t>(req.context_start + req.input_tokens);
  for (std::uint64_t j = 0; j < resident; ++j) add_token(j);
  PgrdReport r;
  r.pgrd.assign(blocks, 0);
  for (std::int64_t i = 0; i < req.output_tokens; ++i) {
    add_token(resident + static_cast<std::uint64_t>(i));
    for (std::uint64_t b = 0; b < blocks; ++b) {
      r.pgrd[b] += rate[b];
      r.total_reads += rate[b];
    }
    ++r.steps;
  }
  r.max_pgrd = r.pgrd.empty() ? 0 : *std::max_element(r.pgrd.begin(), r.pgrd.end());
  return r;
}

// Mapped layout through the FTL; reclaim fires at the ledger trigger when enabled.
inline PgrdReport mapped_pgrd(FtlTable& ftl, const SimRequest& req, bool with_reclaim = true, double step_ns = 0) {
  req.validate();
  const auto& L = ftl.layout();
  auto& led = ftl.ledger();
  ftl.ingest_bulk(static_cast<std::uint64_t>(req.context_start + req.input_tokens));
  PgrdReport r;
  for (std::int64_t i = 0; i < req.output_tokens; ++i) {
    ftl.ingest_token(ftl.tokens_ingested(), false);
    const auto s = ftl.tokens_ingested();
    for (int layer = 0; layer < L.layers; ++layer)
      for (int hg = 0; hg < L.kv_heads; ++hg)
        for (Tensor t : {Tensor::K, Tensor::V}) {
          const auto plan = ftl.read_plan(layer, hg, t, s, false);
          for (const auto& [b, n] : plan.block_reads) {
            led.record_reads(b, n);
            r.total_reads += n;
            r.max_pgrd = std::max(r.max_pgrd, led.at(b).pgrd);
            if (with_reclaim && led.needs_reclaim(b)) {
              reclaim(ftl, b, static_cast<double>(i) * step_ns);
              ++r.reclaims;
            }
          }
        }
    ++r.steps;
  }
  r.pgrd.reserve(led.blocks.size());
  for (const auto& c : led.blocks) r.pgrd.push_back(c.pgrd);
  return r;
}

struct LifetimeScenario {
  double years = 5;
  double tokens_per_s = 3;
  std::int64_t context_window = 50000;
  std::int64_t input_tokens = 1000;
  std::int64_t output_tokens = 1000;
  double total_kv_bytes_written = 143e12;
  double kv_capacity_bytes = 128e9;
};

struct LifetimeReport {
  double decode_steps = 0;
  double lifetime_pe = 0;
  double block_reads_per_step = 0;    // busiest KV block, full window
  double decode_steps_per_block_life = 0;
  double reclaims_per_block_life = 0;
  double reclaim_pe_overhead = 0;
  double reserve_pe = 0;
  bool within_reserve = false;
};

// Uniform-wear estimate: every block lives lifetime_pe times; during one life its
// pages are read once per decode step while its tokens stay in the window.
inline LifetimeReport lifetime_analysis(const LifetimeScenario& sc, const KvGeometry& g, const FlashConfig& f,
                                        const ReliabilityLimits& lim = {}) {
  if (sc.input_tokens + sc.output_tokens <= 0) throw std::invalid_argument("lifetime: request must have tokens");
  LifetimeReport r;
  r.decode_steps = sc.years * 365.0 * 86400.0 * sc.tokens_per_s;
  r.lifetime_pe = lifetime_pe_estimate(sc.total_kv_bytes_written, sc.kv_capacity_bytes);
  const double pages = std::ceil(static_cast<double>(sc.context_window) / static_cast<double>(g.tokens_per_page));
  r.block_reads_per_step = std::min(pages, static_cast<double>(f.pages_per_block));
  r.decode_steps_per_block_life = static_cast<double>(sc.context_window) / static_cast<double>(sc.input_tokens + sc.output_tokens) *
                                  static_cast<double>(sc.output_tokens);
  r.reclaims_per_block_life = std::floor(r.block_reads_per_step * r.decode_steps_per_block_life / static_cast<double>(lim.reclaim_trigger()));
  r.reclaim_pe_overhead = r.lifetime_pe * r.reclaims_per_block_life;
  r.reserve_pe = static_cast<double>(lim.reclaim_reserve_pe);
  r.within_reserve = r.reclaim_pe_overhead <= r.reserve_pe;
  return r;
}

inline void write_histogram(std::ostream& os, const ReliabilityLedger& led, bool skip_idle = true) {
  os << "block_id,pgrd,pe\n";
  for (std::size_t b = 0; b < led.blocks.size(); ++b) {
    const auto& c = led.blocks[b];
    if (skip_idle && c.pgrd == 0 && c.pe == 0) continue;
    os << b << "," << c.pgrd << "," << c.pe << "\n";
  }
}

inline void write_histogram(std::ostream& os, const PgrdReport& r) {
  os << "block_id,pgrd\n";
  for (std::size_t b = 0; b < r.pgrd.size(); ++b)
    if (r.pgrd[b] > 0) os << b << "," << r.pgrd[b] << "\n";
}

inline void write_events(std::ostream& os, const ReliabilityLedger& led) {
  os << "time_ns,event,block,target\n";
  for (const auto& e : led.events) os << static_cast<long long>(e.time_ns) << "," << e.event << "," << e.block << "," << e.target << "\n";
}

}  // namespace kvnand
