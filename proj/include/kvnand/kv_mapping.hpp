// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ledger.hpp"
#include "params.hpp"

namespace kvnand {

enum class Tensor { K = 0, V = 1 };

inline const char* to_string(Tensor t) { return t == Tensor::K ? "K" : "V"; }

struct StreamKey {
  int layer = 0;
  int head_group = 0;
  Tensor tensor = Tensor::K;
  bool operator==(const StreamKey&) const = default;
};

struct PhysAddr {
  int die = 0;
  int plane = 0;
  std::uint32_t block = 0;
  std::uint32_t page = 0;
  std::uint32_t offset = 0;
  bool operator==(const PhysAddr&) const = default;
};

struct KvLayout {
  ArchKind kind = ArchKind::KvnandC;
  KvGeometry geo;
  int layers = 0;
  int kv_heads = 0;
  int planes_per_die = 0;
  int kv_plane_base = 0;  // global index of the first KV plane
  std::uint64_t page_bytes = 0;
  std::uint64_t pages_per_block = 0;
  std::uint64_t blocks_per_plane = 0;

  int planes_per_kv_head() const { return geo.planes_per_kv_head; }
  std::uint64_t tokens_per_page_fill() const { return geo.tokens_per_page_fill; }
  double bytes_per_token_per_plane() const { return geo.bytes_per_token_per_plane; }
  int streams_per_layer() const { return 2 * kv_heads; }
  int stream_count() const { return layers * streams_per_layer(); }

  int stream_index(const StreamKey& s) const { return (s.layer * kv_heads + s.head_group) * 2 + static_cast<int>(s.tensor); }
  StreamKey stream_key(int sid) const {
    return {sid / (2 * kv_heads), (sid / 2) % kv_heads, static_cast<Tensor>(sid % 2)};
  }

  // KV-plane-relative index holding slice j of head group hg's tensor t
  int kv_plane_of(int hg, Tensor t, int slice) const {
    const int si = hg * 2 + static_cast<int>(t);
    if (geo.streams_per_plane > 1) return si / geo.streams_per_plane;
    return si * geo.planes_per_kv_head + slice;
  }
  int global_plane(int kv_plane) const { return kv_plane_base + kv_plane; }
  Tensor tensor_of_plane(int kv_plane) const {
    if (geo.streams_per_plane > 1) return static_cast<Tensor>((kv_plane * geo.streams_per_plane) % 2);
    return static_cast<Tensor>((kv_plane / geo.planes_per_kv_head) % 2);
  }
};

inline KvLayout make_layout(const ArchVariant& a, const FlashConfig& f, const ModelConfig& m, const QuantScheme& q, bool strict,
                            double partial_threshold = 1.0) {
  if (!a.is_kvnand()) throw std::invalid_argument("kv layout: only KVNAND variants map KV into IFC planes");
  KvLayout L;
  L.kind = a.kind;
  L.geo = kv_geometry(a, f, m, q, strict, partial_threshold);
  L.layers = m.layers;
  L.kv_heads = m.kv_heads;
  L.planes_per_die = f.planes_per_die;
  L.kv_plane_base = a.kind == ArchKind::KvnandD ? a.g1_dies * f.planes_per_die : 0;
  L.page_bytes = f.page_data_bytes;
  L.pages_per_block = f.pages_per_block;
  L.blocks_per_plane = f.blocks_per_plane;
  return L;
}

inline KvLayout plan_layout(const ArchVariant& a, const FlashConfig& f, const ModelConfig& m, const QuantScheme& q,
                            double partial_threshold = 1.0) {
  return make_layout(a, f, m, q, true, partial_threshold);
}

struct PageWrite {
  StreamKey stream;
  int global_plane = 0;
  BlockId block = 0;
  std::uint32_t page = 0;
  std::uint64_t token_begin = 0;
  std::uint64_t token_end = 0;
};

struct IngestResult {
  std::uint64_t programs = 0;
  std::vector<PageWrite> writes;
  bool buffered() const { return programs == 0; }
};

struct ReadPlan {
  std::vector<PhysAddr> pages;
  std::vector<std::pair<BlockId, std::uint64_t>> block_reads;
  std::uint64_t page_read_count = 0;  // per-plane critical path
  std::uint64_t total_pages = 0;
  std::uint64_t buffered_tokens = 0;
};

struct LookupError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

class FtlTable {
 public:
  FtlTable(KvLayout layout, std::uint64_t seed, ReliabilityLimits limits = {}, std::uint64_t reserved_blocks_per_plane = 0)
      : L_(std::move(layout)), rng_(seed) {
    const std::uint64_t planes = static_cast<std::uint64_t>(L_.kv_plane_base + L_.geo.kv_planes);
    ledger_ = ReliabilityLedger(static_cast<std::size_t>(planes * L_.blocks_per_plane), L_.blocks_per_plane, limits);
    if (reserved_blocks_per_plane > L_.blocks_per_plane) throw std::invalid_argument("ftl: reserved blocks exceed plane");
    for (int p = 0; p < L_.geo.kv_planes; ++p)
      for (std::uint64_t b = 0; b < reserved_blocks_per_plane; ++b) ledger_.at(block_id(L_.global_plane(p), b)).in_use = true;
    owner_.assign(ledger_.blocks.size(), {-1, 0, 0});
    cursors_.assign(static_cast<std::size_t>(L_.stream_count()), std::vector<std::vector<BlockId>>(slices()));
  }

  const KvLayout& layout() const { return L_; }
  ReliabilityLedger& ledger() { return ledger_; }
  const ReliabilityLedger& ledger() const { return ledger_; }

  std::uint64_t tokens_ingested() const { return ingested_; }
  std::uint64_t tokens_programmed() const { return programmed_; }
  std::uint64_t programs_issued() const { return programs_; }

  double bytes_per_token() const { return L_.stream_count() * L_.geo.kv_size_unit; }
  double bytes_ingested() const { return ingested_ * bytes_per_token(); }
  double bytes_programmed() const { return programmed_ * bytes_per_token(); }
  double bytes_buffered() const { return (ingested_ - programmed_) * bytes_per_token(); }

  BlockId block_id(int global_plane, std::uint64_t block) const {
    return static_cast<BlockId>(static_cast<std::uint64_t>(global_plane) * L_.blocks_per_plane + block);
  }

  BlockId allocate_block(int global_plane, bool for_reclaim = false) {
    const std::uint64_t ceiling = ledger_.limits.allocation_pe_ceiling(for_reclaim);
    std::vector<BlockId> eligible;
    for (std::uint64_t b = 0; b < L_.blocks_per_plane; ++b) {
      BlockId id = block_id(global_plane, b);
      const auto& c = ledger_.at(id);
      if (!c.in_use && !c.retired && c.pe < ceiling) eligible.push_back(id);
    }
    if (eligible.empty()) throw std::runtime_error("capacity exhausted: no eligible block on plane " + std::to_string(global_plane));
    std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
    BlockId id = eligible[pick(rng_)];
    auto& c = ledger_.at(id);
    c.in_use = true;
    c.pe += 1;
    c.pgrd = 0;
    return id;
  }

  void release_block(BlockId id) {
    ledger_.at(id).in_use = false;
    owner_[id] = {-1, 0, 0};
  }

  IngestResult ingest_token(std::uint64_t token_idx, bool collect = true) {
    if (token_idx != ingested_)
      throw std::invalid_argument("ingest_token: expected token " + std::to_string(ingested_) + ", got " + std::to_string(token_idx));
    ++ingested_;
    IngestResult r;
    while (true) {
      const std::uint64_t amount = next_flush_amount();
      if (ingested_ - programmed_ < amount) break;
      flush(amount, collect ? &r.writes : nullptr, r.programs);
    }
    return r;
  }

  // bulk mode (prefill or resident context); returns programs issued
  std::uint64_t ingest_bulk(std::uint64_t count) {
    std::uint64_t programs = 0;
    ingested_ += count;
    while (true) {
      const std::uint64_t amount = next_flush_amount();
      if (ingested_ - programmed_ < amount) break;
      flush(amount, nullptr, programs);
    }
    return programs;
  }

  ReadPlan read_plan(const StreamKey& s, std::uint64_t seq_len, bool with_pages = true) const {
    check_stream(s);
    if (seq_len > ingested_) throw LookupError("read_plan: token " + std::to_string(seq_len - 1) + " not ingested");
    ReadPlan r;
    const std::uint64_t on_flash = std::min(seq_len, programmed_);
    r.buffered_tokens = seq_len - on_flash;
    const std::uint64_t tpp = L_.geo.tokens_per_page;
    const std::uint64_t pages = ceil_div(on_flash, tpp);
    const int sid = L_.stream_index(s);
    for (int j = 0; j < slices(); ++j) {
      const auto& blocks = cursors_[static_cast<std::size_t>(sid)][static_cast<std::size_t>(j)];
      const int gp = L_.global_plane(L_.kv_plane_of(s.head_group, s.tensor, j));
      for (std::uint64_t first = 0; first < pages; first += L_.pages_per_block) {
        const std::uint64_t n = std::min<std::uint64_t>(L_.pages_per_block, pages - first);
        const BlockId b = blocks.at(static_cast<std::size_t>(first / L_.pages_per_block));
        r.block_reads.emplace_back(b, n);
        if (with_pages)
          for (std::uint64_t p = 0; p < n; ++p)
            r.pages.push_back({gp / L_.planes_per_die, gp % L_.planes_per_die, local_block(b), static_cast<std::uint32_t>(p), 0});
      }
    }
    r.total_pages = pages * static_cast<std::uint64_t>(slices());
    // a shared plane serves its streams one after another
    r.page_read_count = pages;
    return r;
  }

  ReadPlan read_plan(int layer, int head_group, Tensor t, std::uint64_t seq_len, bool with_pages = true) const {
    return read_plan(StreamKey{layer, head_group, t}, seq_len, with_pages);
  }

  PhysAddr translate(const StreamKey& s, std::uint64_t token, int slice) const {
    check_stream(s);
    if (slice < 0 || slice >= slices()) throw LookupError("translate: slice out of range");
    if (token >= programmed_) throw LookupError("translate: token " + std::to_string(token) + " is not on flash");
    const std::uint64_t tpp = L_.geo.tokens_per_page;
    const std::uint64_t page_idx = token / tpp;
    const auto& blocks = cursors_[static_cast<std::size_t>(L_.stream_index(s))][static_cast<std::size_t>(slice)];
    const BlockId b = blocks.at(static_cast<std::size_t>(page_idx / L_.pages_per_block));
    const int gp = L_.global_plane(L_.kv_plane_of(s.head_group, s.tensor, slice));
    return {gp / L_.planes_per_die, gp % L_.planes_per_die, local_block(b), static_cast<std::uint32_t>(page_idx % L_.pages_per_block),
            static_cast<std::uint32_t>((token % tpp) * static_cast<std::uint64_t>(L_.geo.bytes_per_token_per_plane))};
  }

  struct Reverse {
    StreamKey stream;
    std::uint64_t token = 0;
    int slice = 0;
  };

  std::optional<Reverse> reverse(const PhysAddr& a) const {
    const int gp = a.die * L_.planes_per_die + a.plane;
    if (a.block >= L_.blocks_per_plane) return std::nullopt;
    const BlockId b = block_id(gp, a.block);
    if (b >= owner_.size()) return std::nullopt;
    const auto& o = owner_[b];
    if (o.sid < 0) return std::nullopt;
    const auto bpt = static_cast<std::uint64_t>(L_.geo.bytes_per_token_per_plane);
    const std::uint64_t page_idx = o.block_index * L_.pages_per_block + a.page;
    const std::uint64_t token = page_idx * L_.geo.tokens_per_page + a.offset / bpt;
    if (token >= programmed_ || a.offset % bpt != 0 || a.offset / bpt >= L_.geo.tokens_per_page) return std::nullopt;
    return Reverse{L_.stream_key(o.sid), token, o.slice};
  }

  // move a block's live data to `to` (already allocated on the same plane)
  void remap_block(BlockId from, BlockId to) {
    const auto o = owner_.at(from);
    if (o.sid < 0) throw std::invalid_argument("remap_block: block holds no KV data");
    auto& list = cursors_[static_cast<std::size_t>(o.sid)][static_cast<std::size_t>(o.slice)];
    list.at(static_cast<std::size_t>(o.block_index)) = to;
    owner_[to] = o;
    release_block(from);
  }

  bool block_live(BlockId b) const { return owner_.at(b).sid >= 0; }

  // one extent per programmed page fragment
  std::string snapshot() const {
    std::ostringstream os;
    const std::uint64_t tpp = L_.geo.tokens_per_page;
    const std::uint64_t pages = ceil_div(programmed_, tpp);
    for (int sid = 0; sid < L_.stream_count(); ++sid) {
      const StreamKey k = L_.stream_key(sid);
      for (int j = 0; j < slices(); ++j) {
        for (std::uint64_t p = 0; p < pages; ++p) {
          const std::uint64_t t0 = p * tpp, t1 = std::min(programmed_, t0 + tpp);
          const PhysAddr a = translate(k, t0, j);
          os << "L" << k.layer << " HG" << k.head_group << " " << to_string(k.tensor) << " slice=" << j << " tokens=[" << t0 << ","
             << t1 << ") die=" << a.die << " plane=" << a.plane << " block=" << a.block << " page=" << a.page << " offset=" << a.offset
             << "\n";
        }
      }
    }
    return os.str();
  }

 private:
  struct Owner {
    int sid;
    int slice;
    std::uint64_t block_index;
  };

  int slices() const { return L_.geo.planes_per_kv_head; }

  std::uint32_t local_block(BlockId b) const { return static_cast<std::uint32_t>(b % L_.blocks_per_plane); }

  void check_stream(const StreamKey& s) const {
    if (s.layer < 0 || s.layer >= L_.layers || s.head_group < 0 || s.head_group >= L_.kv_heads)
      throw LookupError("unknown stream L" + std::to_string(s.layer) + " HG" + std::to_string(s.head_group));
  }

  std::uint64_t next_flush_amount() const {
    const std::uint64_t tpp = L_.geo.tokens_per_page;
    return std::min(L_.geo.chunk_tokens, tpp - programmed_ % tpp);
  }

  void flush(std::uint64_t amount, std::vector<PageWrite>* out, std::uint64_t& programs) {
    const std::uint64_t tpp = L_.geo.tokens_per_page;
    const std::uint64_t page_idx = programmed_ / tpp;
    const bool new_block = programmed_ % tpp == 0 && page_idx % L_.pages_per_block == 0;
    for (int sid = 0; sid < L_.stream_count(); ++sid) {
      const StreamKey k = L_.stream_key(sid);
      for (int j = 0; j < slices(); ++j) {
        auto& blocks = cursors_[static_cast<std::size_t>(sid)][static_cast<std::size_t>(j)];
        const int gp = L_.global_plane(L_.kv_plane_of(k.head_group, k.tensor, j));
        if (new_block) {
          BlockId b = allocate_block(gp);
          owner_[b] = {sid, j, blocks.size()};
          blocks.push_back(b);
        }
        if (out)
          out->push_back({k, gp, blocks.back(), static_cast<std::uint32_t>(page_idx % L_.pages_per_block), programmed_, programmed_ + amount});
        ++programs;
      }
    }
    programs_ += static_cast<std::uint64_t>(L_.stream_count()) * static_cast<std::uint64_t>(slices());
    programmed_ += amount;
  }

  KvLayout L_;
  std::mt19937_64 rng_;
  ReliabilityLedger ledger_;
  std::vector<Owner> owner_;
  std::vector<std::vector<std::vector<BlockId>>> cursors_;
  std::uint64_t ingested_ = 0;
  std::uint64_t programmed_ = 0;
  std::uint64_t programs_ = 0;
};

// Generation-order reference layout: records appended as produced,
// token-major, then layer, then [K heads][V heads].
struct GenerationOrderLayout {
  int layers = 0;
  int kv_heads = 0;
  double kv_size_unit = 0;
  std::uint64_t page_bytes = 4096;
  std::uint64_t pages_per_block = 768;

  static GenerationOrderLayout make(const FlashConfig& f, const ModelConfig& m, const QuantScheme& q) {
    return {m.layers, m.kv_heads, kvnand::kv_size_unit(m, q), f.page_data_bytes, f.pages_per_block};
  }

  std::uint64_t record_bytes() const { return static_cast<std::uint64_t>(2 * kv_heads * kv_size_unit); }

  std::uint64_t slice_offset(std::uint64_t token, int layer, int hg, Tensor t) const {
    const auto unit = static_cast<std::uint64_t>(kv_size_unit);
    return (token * static_cast<std::uint64_t>(layers) + static_cast<std::uint64_t>(layer)) * record_bytes() +
           (static_cast<std::uint64_t>(t) * static_cast<std::uint64_t>(kv_heads) + static_cast<std::uint64_t>(hg)) * unit;
  }

  // visits each distinct page index holding slices of the stream, ascending
  template <class F>
  void for_each_page(const StreamKey& s, std::uint64_t seq_len, F&& f) const {
    const auto unit = static_cast<std::uint64_t>(kv_size_unit);
    std::uint64_t last = ~0ull;
    for (std::uint64_t j = 0; j < seq_len; ++j) {
      const std::uint64_t off = slice_offset(j, s.layer, s.head_group, s.tensor);
      for (std::uint64_t p = off / page_bytes; p <= (off + unit - 1) / page_bytes; ++p) {
        if (p != last) f(p);
        last = p;
      }
    }
  }

  std::uint64_t pages_for_stream(const StreamKey& s, std::uint64_t seq_len) const {
    std::uint64_t n = 0;
    for_each_page(s, seq_len, [&](std::uint64_t) { ++n; });
    return n;
  }

  ReadPlan read_plan(const StreamKey& s, std::uint64_t seq_len, bool with_pages = true) const {
    ReadPlan r;
    for_each_page(s, seq_len, [&](std::uint64_t p) {
      if (with_pages) r.pages.push_back({0, 0, static_cast<std::uint32_t>(p / pages_per_block), static_cast<std::uint32_t>(p % pages_per_block), 0});
      const auto b = static_cast<BlockId>(p / pages_per_block);
      if (!r.block_reads.empty() && r.block_reads.back().first == b)
        ++r.block_reads.back().second;
      else
        r.block_reads.emplace_back(b, 1);
      ++r.total_pages;
    });
    // no plane parallelism is guaranteed for a stream in this layout
    r.page_read_count = r.total_pages;
    return r;
  }
};

// Trace lines: "ingest <token_idx>" or "read <layer> <head_group> <K|V> <seq_len>".
inline void replay_trace(FtlTable& ftl, std::istream& in, std::ostream& out) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string op;
    if (!(ls >> op) || op[0] == '#') continue;
    if (op == "ingest") {
      std::uint64_t t = 0;
      if (!(ls >> t)) throw std::invalid_argument("trace:" + std::to_string(lineno) + ": ingest needs a token index");
      auto r = ftl.ingest_token(t, false);
      out << "ingest " << t << " programs=" << r.programs << "\n";
    } else if (op == "read") {
      int layer = 0, hg = 0;
      std::string tensor;
      std::uint64_t s = 0;
      if (!(ls >> layer >> hg >> tensor >> s) || (tensor != "K" && tensor != "V"))
        throw std::invalid_argument("trace:" + std::to_string(lineno) + ": read needs <layer> <head_group> <K|V> <seq_len>");
      auto r = ftl.read_plan(layer, hg, tensor == "K" ? Tensor::K : Tensor::V, s, false);
      out << "read " << layer << " " << hg << " " << tensor << " " << s << " pages=" << r.page_read_count << " total=" << r.total_pages
          << " buffered=" << r.buffered_tokens << "\n";
    } else {
      throw std::invalid_argument("trace:" + std::to_string(lineno) + ": unknown event " + op);
    }
  }
}

}  // namespace kvnand
