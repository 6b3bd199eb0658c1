// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace kvnand {

using BlockId = std::uint32_t;

struct BlockCounters {
  std::uint64_t pgrd = 0;
  std::uint64_t pe = 0;
  bool retired = false;
  bool in_use = false;
};

struct ReliabilityLimits {
  std::uint64_t pgrd_limit = 1'000'000;
  double reclaim_guard = 0.1;
  std::uint64_t pe_budget = 100'000;
  std::uint64_t reclaim_reserve_pe = 50'000;

  std::uint64_t reclaim_trigger() const {
    return static_cast<std::uint64_t>(static_cast<double>(pgrd_limit) * (1.0 - reclaim_guard));
  }
  // normal allocations stop short of the reserve; reclaim may dip into it
  std::uint64_t allocation_pe_ceiling(bool for_reclaim) const {
    return for_reclaim ? pe_budget : pe_budget - reclaim_reserve_pe;
  }
};

struct LedgerEvent {
  double time_ns = 0;
  std::string event;
  BlockId block = 0;
  BlockId target = 0;
};

struct ReliabilityLedger {
  std::vector<BlockCounters> blocks;
  ReliabilityLimits limits;
  std::vector<LedgerEvent> events;
  std::uint64_t blocks_per_plane = 1;

  ReliabilityLedger() = default;
  ReliabilityLedger(std::size_t n_blocks, std::uint64_t per_plane, ReliabilityLimits lim = {})
      : blocks(n_blocks), limits(lim), blocks_per_plane(per_plane) {
    if (per_plane == 0) throw std::invalid_argument("ledger: blocks_per_plane must be positive");
  }

  BlockCounters& at(BlockId b) {
    if (b >= blocks.size()) throw std::out_of_range("ledger: block id out of range");
    return blocks[b];
  }
  const BlockCounters& at(BlockId b) const {
    if (b >= blocks.size()) throw std::out_of_range("ledger: block id out of range");
    return blocks[b];
  }

  void record_reads(BlockId b, std::uint64_t n) { at(b).pgrd += n; }

  bool needs_reclaim(BlockId b) const { return at(b).pgrd >= limits.reclaim_trigger(); }

  std::uint64_t max_pgrd() const {
    std::uint64_t m = 0;
    for (const auto& c : blocks) m = std::max(m, c.pgrd);
    return m;
  }
  std::uint64_t total_pgrd() const {
    std::uint64_t s = 0;
    for (const auto& c : blocks) s += c.pgrd;
    return s;
  }
  std::uint64_t max_pe() const {
    std::uint64_t m = 0;
    for (const auto& c : blocks) m = std::max(m, c.pe);
    return m;
  }
};

}  // namespace kvnand
