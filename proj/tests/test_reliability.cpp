// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <sstream>

#include "kvnand/catalog.hpp"
#include "kvnand/perf.hpp"
#include "kvnand/reliability.hpp"

using namespace kvnand;
using Catch::Approx;

namespace {

const auto fp16 = QuantScheme::make(16, 16);

FlashConfig tiny_flash() {
  FlashConfig f;
  f.page_data_bytes = 64;
  f.pages_per_block = 4;
  f.blocks_per_plane = 16;
  f.planes_per_die = 4;
  f.kv_buffer_per_plane_bytes = 128;
  f.max_partial_programs = 4;
  return f;
}

ModelConfig tiny_model(int layers = 2, int h = 2, int k = 1) {
  ModelConfig m;
  m.name = "tiny";
  m.layers = layers;
  m.q_heads = h;
  m.kv_heads = k;
  m.hidden = 8 * h;
  m.ffn_inner = 32;
  m.total_weight_params = 100;
  return m;
}

}  // namespace

TEST_CASE("lifetime estimate") {
  CHECK(lifetime_pe_estimate(143e12, 128e9) == Approx(1117.1875));
  CHECK(lifetime_pe_estimate(5e9, 5e9) == 1.0);
  CHECK(lifetime_pe_estimate(1e12, 64e9) == 2 * lifetime_pe_estimate(1e12, 128e9));
  CHECK_THROWS(lifetime_pe_estimate(1, 0));
}

TEST_CASE("single step charges each touched block once per read") {
  const auto f = tiny_flash();
  const auto m = tiny_model();
  FtlTable ftl(plan_layout(ArchVariant::compact(1), f, m, fp16), 3);
  ftl.ingest_bulk(24);
  std::vector<ReadPlan> plans;
  std::map<BlockId, std::uint64_t> want;
  for (int L = 0; L < m.layers; ++L)
    for (Tensor t : {Tensor::K, Tensor::V}) {
      plans.push_back(ftl.read_plan(L, 0, t, 24, false));
      for (auto [b, n] : plans.back().block_reads) want[b] += n;
    }
  ReliabilityLedger led(ftl.ledger().blocks.size(), f.blocks_per_plane);
  const auto total = pgrd_simulation(plans, led);
  std::uint64_t sum = 0;
  for (auto [b, n] : want) {
    CHECK(led.at(b).pgrd == n);
    sum += n;
  }
  CHECK(total == sum);
  CHECK(led.total_pgrd() == sum);
}

TEST_CASE("ledger reads match perf page reads") {
  const auto f = tiny_flash();
  const auto m = tiny_model();
  const auto a = ArchVariant::compact(1);
  const auto L = plan_layout(a, f, m, fp16);
  const std::int64_t s = 2 * static_cast<std::int64_t>(L.geo.tokens_per_page);
  FtlTable ftl(L, 5);
  const auto r = mapped_pgrd(ftl, {s - 1, 1, 0}, false);
  const auto d = decode_token_detail(a, f, NpuConfig{}, m, fp16, s);
  const double weight_pages = d.activity.pages_read - static_cast<double>(r.total_reads);
  CHECK(ftl.ledger().total_pgrd() == r.total_reads);
  // remaining page reads are weight pages
  double w = 0;
  const auto g = build_decode_graph(m, fp16, s);
  for (const auto& n : g.layers[0])
    if (n.is_weight_gemv()) w += std::ceil(n.weight_bytes / 64.0);
  CHECK(weight_pages == Approx(w * m.layers));

  // a token still in the plane buffer costs no flash read
  FtlTable ftl2(L, 5);
  const auto r2 = mapped_pgrd(ftl2, {s, 1, 0}, false);
  CHECK(r2.total_reads == r.total_reads);
}

TEST_CASE("unmitigated reads concentrate on early blocks") {
  const auto f = tiny_flash();
  const auto m = tiny_model(2, 4, 2);
  const auto r = unmitigated_pgrd(f, m, fp16, {16, 8, 8});
  REQUIRE(r.pgrd.size() > 2);
  for (std::size_t b = 1; b < r.pgrd.size(); ++b) CHECK(r.pgrd[b] <= r.pgrd[b - 1]);
  CHECK(r.steps == 8);
  CHECK(r.max_pgrd == r.pgrd.front());
}

TEST_CASE("unmitigated 50K workload") {
  FlashConfig f;
  const auto& m = Catalog::builtin().model("llama3.1-8b");
  const auto r = unmitigated_pgrd(f, m, fp16, {1024, 1024, 50000 - 1024});
  // one (token, layer) record per page, read by each of the 8 head-group passes every step
  CHECK(r.max_pgrd == 768ull * 8 * 1024);
  CHECK(r.max_pgrd > 1'000'000);
}

TEST_CASE("mapping never raises the peak") {
  const auto f = tiny_flash();
  for (auto m : {tiny_model(), tiny_model(2, 4, 2), tiny_model(1, 2, 2)}) {
    const SimRequest req{8, 16, 8};
    const auto un = unmitigated_pgrd(f, m, fp16, req);
    FtlTable ftl(plan_layout(ArchVariant::compact(1), f, m, fp16), 2);
    const auto mp = mapped_pgrd(ftl, req, false);
    CHECK(mp.max_pgrd <= un.max_pgrd);
  }
}

TEST_CASE("reclaim") {
  const auto f = tiny_flash();
  const auto m = tiny_model();
  ReliabilityLimits lim;
  lim.pgrd_limit = 100;
  FtlTable ftl(plan_layout(ArchVariant::compact(1), f, m, fp16), 9, lim);
  ftl.ingest_bulk(8);
  const auto addr = ftl.translate({0, 0, Tensor::K}, 0, 0);
  const BlockId b = ftl.block_id(addr.plane, addr.block);
  CHECK_THROWS(reclaim(ftl, b, 0));
  ftl.ledger().record_reads(b, 90);
  REQUIRE(ftl.ledger().needs_reclaim(b));
  const auto ev = reclaim(ftl, b, 42);
  CHECK(ev.from == b);
  CHECK(ev.to != b);
  CHECK(ftl.ledger().at(b).pgrd == 0);
  CHECK(ftl.ledger().at(ev.to).pgrd == 0);
  CHECK(ftl.ledger().at(ev.to).pe == 1);
  CHECK(ftl.translate({0, 0, Tensor::K}, 0, 0).block == ev.to % f.blocks_per_plane);
  REQUIRE(ftl.ledger().events.size() == 1);
  CHECK(ftl.ledger().events[0].time_ns == 42);

  ftl.ledger().at(b).retired = true;
  for (int i = 0; i < 50; ++i) {
    BlockId x = ftl.allocate_block(addr.plane);
    CHECK(x != b);
    ftl.release_block(x);
  }
}

TEST_CASE("reclaim fires during a long run and keeps data live") {
  const auto f = tiny_flash();
  const auto m = tiny_model();
  ReliabilityLimits lim;
  lim.pgrd_limit = 50;
  FtlTable ftl(plan_layout(ArchVariant::compact(1), f, m, fp16), 4, lim);
  const auto r = mapped_pgrd(ftl, {16, 32, 0}, true, 1000);
  CHECK(r.reclaims > 0);
  CHECK(r.max_pgrd < lim.pgrd_limit);
  for (const auto& c : ftl.ledger().blocks) CHECK(c.pgrd < lim.reclaim_trigger());
  for (std::uint64_t t = 0; t < ftl.tokens_programmed(); ++t) {
    const auto a = ftl.translate({1, 0, Tensor::V}, t, 1);
    CHECK_FALSE(ftl.ledger().at(ftl.block_id(a.plane, a.block)).retired);
  }
  std::ostringstream ev;
  write_events(ev, ftl.ledger());
  CHECK(ev.str().rfind("time_ns,event,block,target\n", 0) == 0);
}

TEST_CASE("reclaim without a spare block reports exhaustion") {
  FlashConfig f = tiny_flash();
  f.blocks_per_plane = 2;
  ReliabilityLimits lim;
  lim.pgrd_limit = 10;
  FtlTable ftl(plan_layout(ArchVariant::compact(1), f, tiny_model(), fp16), 1, lim);
  ftl.ingest_bulk(8);
  const auto a = ftl.translate({0, 0, Tensor::K}, 0, 0);
  const BlockId b = ftl.block_id(a.plane, a.block);
  ftl.ledger().record_reads(b, 10);
  CHECK_THROWS_AS(reclaim(ftl, b, 0), LifetimeExhausted);
}

TEST_CASE("five year lifetime stays inside the reserve") {
  FlashConfig f;
  const auto& m = Catalog::builtin().model("llama-65b");
  const auto g = kv_geometry(ArchVariant::compact(8), f, m, fp16, false);
  const auto r = lifetime_analysis({}, g, f);
  CHECK(r.lifetime_pe == Approx(1117.1875));
  CHECK(r.decode_steps == Approx(5 * 365 * 86400.0 * 3));
  CHECK(r.reclaim_pe_overhead <= 50000);
  CHECK(r.within_reserve);
}

TEST_CASE("histogram output") {
  ReliabilityLedger led(4, 2);
  led.record_reads(1, 7);
  led.at(3).pe = 2;
  std::ostringstream os;
  write_histogram(os, led);
  CHECK(os.str() == "block_id,pgrd,pe\n1,7,0\n3,0,2\n");
}
