// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <fstream>
#include <sstream>

#include "kvnand/catalog.hpp"
#include "kvnand/workload.hpp"

using namespace kvnand;
using Catch::Approx;

namespace {

const ModelConfig& model(const char* n) { return Catalog::builtin().model(n); }

ModelConfig toy() {
  ModelConfig m;
  m.name = "toy";
  m.layers = 1;
  m.hidden = 8;
  m.q_heads = 1;
  m.kv_heads = 1;
  m.ffn_inner = 16;
  m.total_weight_params = 8 * 24 + 8 * 8 + 3 * 8 * 16;
  return m;
}

double sum_kind(const DecodeGraph& g, std::size_t layer, OpKind k, double OperatorNode::*field) {
  double s = 0;
  for (const auto& n : g.layers[layer])
    if (n.kind == k) s += n.*field;
  return s;
}

}  // namespace

TEST_CASE("graph structure per layer") {
  auto g = build_decode_graph(model("llama3.1-8b"), QuantScheme::make(16, 16), 1024);
  REQUIRE(g.layers.size() == 32);
  CHECK(g.head_groups == 8);
  CHECK(g.q_heads_per_group == 4);
  std::vector<OpKind> kinds;
  for (const auto& n : g.layers[0]) kinds.push_back(n.kind);
  std::vector<OpKind> want{OpKind::Norm,   OpKind::QkvGen, OpKind::RoPE,     OpKind::Logit, OpKind::Softmax, OpKind::Attend,
                           OpKind::OProj,  OpKind::Residual, OpKind::Norm,   OpKind::FfnFc, OpKind::FfnFc,   OpKind::FfnFc,
                           OpKind::Residual};
  CHECK(kinds == want);

  auto t = build_decode_graph(toy(), QuantScheme::make(16, 16), 1);
  CHECK(t.head_groups == 1);
  CHECK(t.q_heads_per_group == 1);
  CHECK_THROWS(build_decode_graph(toy(), QuantScheme::make(16, 16), 0));
}

TEST_CASE("placement hints") {
  auto g = build_decode_graph(model("llama2-7b"), QuantScheme::make(16, 16), 10);
  for (const auto& n : g.layers[0]) {
    INFO(n.label);
    bool ifc = n.kind == OpKind::QkvGen || n.kind == OpKind::Logit || n.kind == OpKind::Attend || n.kind == OpKind::OProj ||
               n.kind == OpKind::FfnFc;
    CHECK((n.placement_hint == Placement::IFC) == ifc);
  }
  auto b = build_decode_graph(model("llama2-7b"), QuantScheme::make(16, 16), 10, {false, false});
  CHECK(b.layers[0][3].placement_hint == Placement::NPU);
}

TEST_CASE("moe graph reads only active experts") {
  const auto& mx = model("mixtral-8x7b");
  const auto int4 = QuantScheme::make(4, 16);
  auto g = build_decode_graph(mx, int4, 100);
  double ffn = sum_kind(g, 0, OpKind::FfnFc, &OperatorNode::weight_bytes);
  CHECK(ffn == 2 * expert_footprint(mx, int4));
  CHECK(ffn / (2 * 87.5e6) == Approx(1.0).margin(0.01));
  int routers = 0;
  for (const auto& n : g.layers[0]) routers += n.kind == OpKind::MoeRouter;
  CHECK(routers == 1);
}

TEST_CASE("fused gate and up") {
  const auto& m = model("llama2-7b");
  auto a = build_decode_graph(m, QuantScheme::make(16, 16), 10);
  auto b = build_decode_graph(m, QuantScheme::make(16, 16), 10, {true, true});
  CHECK(b.layers[0].size() + 1 == a.layers[0].size());
  CHECK(sum_kind(a, 0, OpKind::FfnFc, &OperatorNode::weight_bytes) == sum_kind(b, 0, OpKind::FfnFc, &OperatorNode::weight_bytes));
}

TEST_CASE("layer weights times l match footprint minus embeddings") {
  for (const char* name : {"llama2-7b", "llama3.1-8b", "llama3.1-70b", "opt-30b"}) {
    const auto& m = model(name);
    const auto q = QuantScheme::make(16, 16);
    auto g = build_decode_graph(m, q, 1);
    double w = 0;
    for (const auto& n : g.layers[0])
      if (n.is_weight_gemv()) w += n.weight_bytes;
    double embed = 2.0 * m.vocab * m.hidden * 2;
    if (std::string(name) == "opt-30b") embed /= 2;  // tied head
    INFO(name);
    CHECK((w * m.layers + embed) / weight_footprint(m, q) == Approx(1.0).margin(0.02));
  }
}

TEST_CASE("kv bytes scale with sequence length") {
  const auto& m = model("llama3.1-8b");
  const auto q = QuantScheme::make(16, 16);
  auto a = build_decode_graph(m, q, 1000);
  auto b = build_decode_graph(m, q, 2000);
  const double want = 1000.0 * kv_size_unit(m, q) * m.kv_heads;
  CHECK(sum_kind(a, 0, OpKind::Logit, &OperatorNode::kv_bytes_read) == want);
  CHECK(sum_kind(a, 0, OpKind::Attend, &OperatorNode::kv_bytes_read) == want);
  CHECK(sum_kind(b, 0, OpKind::Logit, &OperatorNode::kv_bytes_read) == 2 * want);
}

TEST_CASE("arithmetic intensity") {
  auto g = build_decode_graph(model("llama2-7b"), QuantScheme::make(16, 16), 4096);
  const auto& qkv = g.layers[0][1];
  CHECK(arithmetic_intensity(qkv) == Approx(1.0).margin(0.01));
  auto gq = build_decode_graph(model("llama3.1-8b"), QuantScheme::make(16, 16), 4096);
  const auto& logit = gq.layers[0][3];
  REQUIRE(logit.kind == OpKind::Logit);
  // score write-back adds h/(k*hd) of traffic
  CHECK(arithmetic_intensity(logit) == Approx(4.0).margin(0.2));
  CHECK(logit.flops / logit.kv_bytes_read == 4.0);

  OperatorNode zero{OpKind::Residual, "z"};
  zero.activation_in_bytes = 8;
  CHECK(arithmetic_intensity(zero) == 0.0);
  OperatorNode empty{OpKind::Residual, "e"};
  CHECK_THROWS(arithmetic_intensity(empty));
}

TEST_CASE("roofline classification") {
  FlashConfig f;
  const double bw = f.internal_read_bw_per_die();
  OperatorNode n{OpKind::QkvGen, "x"};
  n.weight_bytes = 1000;
  n.flops = 1000;
  CHECK(roofline_bound(n, bw, bw * 1.0) == Bound::MemoryBound);
  n.flops = 0;
  CHECK(roofline_bound(n, bw, bw) == Bound::MemoryBound);
  n.flops = 8000;
  CHECK(roofline_bound(n, bw, bw) == Bound::ComputeBound);
  CHECK_THROWS(roofline_bound(n, 0, 1));
}

TEST_CASE("graph dump is deterministic and matches golden file") {
  const auto q = QuantScheme::make(16, 16);
  auto a = dump_graph(build_decode_graph(toy(), q, 3));
  auto b = dump_graph(build_decode_graph(toy(), q, 3));
  CHECK(a == b);
  std::ifstream in(std::string(KVNAND_GOLDEN_DIR) + "/toy_graph.txt");
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(a == ss.str());
}

TEST_CASE("prefill summary") {
  const auto& m = model("llama2-7b");
  const auto q = QuantScheme::make(16, 16);
  FlashConfig f;
  NpuConfig n;
  auto arch = ArchVariant::discrete(8, 8);
  auto p = prefill_summary(m, q, 1024, n, f, arch);
  const double stream_oracle = 6.738e9 * 2 / (8 * 4.8e9) * 1e9;
  CHECK(p.stream_ns == Approx(stream_oracle));
  CHECK(p.stream_ns / 364e6 == Approx(1.0).margin(0.05));
  CHECK(p.total_ns == Approx(std::max(p.compute_ns, p.stream_ns) + p.kv_write_ns));

  auto ideal = prefill_summary(m, q, 1024, n, f, arch, 1.0);
  CHECK(p.compute_ns == Approx(2 * ideal.compute_ns));

  auto one = prefill_summary(m, q, 1, n, f, arch);
  CHECK(one.total_ns == Approx(one.stream_ns + one.kv_write_ns));
  CHECK_THROWS(prefill_summary(m, q, 0, n, f, arch));
}
