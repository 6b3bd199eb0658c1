// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dse.hpp"
#include "energy.hpp"
#include "kv_mapping.hpp"
#include "perf.hpp"
#include "reliability.hpp"
#include "scenario.hpp"
#include "simulate.hpp"

namespace kvnand {

struct RunOptions {
  std::filesystem::path out_dir = "out";
  unsigned jobs = 0;
};

namespace detail {

inline std::string fmt(const char* f, double v) {
  char b[64];
  std::snprintf(b, sizeof b, f, v);
  return b;
}

inline std::ofstream open_out(const std::filesystem::path& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / name, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + (dir / name).string());
  return os;
}

inline void write_file(const std::filesystem::path& dir, const std::string& name, const std::string& text) {
  auto os = open_out(dir, name);
  os << text;
}

inline std::string slug(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '-') c = '_';
  return s;
}

}  // namespace detail

inline double active_ffn_weight_bytes(const ModelConfig& m, const QuantScheme& q) {
  double b = 0;
  const auto g = build_decode_graph(m, q, 1);
  for (const auto& layer : g.layers)
    for (const auto& n : layer)
      if (n.kind == OpKind::FfnFc) b += n.weight_bytes;
  return b;
}

// summary.txt, breakdown.csv, energy.csv; an OOM is recorded in the summary and rethrown
inline std::string cmd_simulate(const ResolvedScenario& r, const RunOptions& ro) {
  using detail::fmt;
  const auto& s = r.spec;
  std::ostringstream sum;
  sum << "scenario: " << s.name << "\n"
      << "model: " << r.model.name << "\nquant: " << r.quant.label << "\narch: " << r.arch.name() << "\n"
      << "request: context=" << s.request.context_start << " input=" << s.request.input_tokens << " output=" << s.request.output_tokens
      << "\n";
  const auto prompt = s.request.context_start + s.request.input_tokens;
  const int wdies = r.arch.weight_dies() > 0 ? r.arch.weight_dies() : r.arch.total_dies;
  sum << "naive_kv_read_ms (" << prompt << " tokens, " << wdies << " dies): "
      << fmt("%.3f", naive_kv_read_latency(r.model, r.quant, prompt, wdies, r.flash) / 1e6) << "\n";
  sum << "ffn_ifc_read_ms (" << wdies << " dies): "
      << fmt("%.3f", ifc_gemv_latency(active_ffn_weight_bytes(r.model, r.quant), wdies, r.flash, r.flash.fmacs_per_plane,
                                      r.quant.weight_bits) /
                         1e6)
      << "\n";

  SimResult res;
  try {
    res = simulate_request(r.arch, r.flash, r.npu, r.model, r.quant, s.request);
  } catch (const OomError& e) {
    sum << "status: OOM (" << to_string(e.kind) << ") " << e.what() << "\n";
    detail::write_file(ro.out_dir, "summary.txt", sum.str());
    throw;
  }
  sum << "decode_steps: " << res.steps.size() << "\n"
      << "total_ns: " << res.total_ns << "\n"
      << "tokens_per_s: " << fmt("%.4f", res.mean_tokens_per_s) << "\n"
      << "energy_per_token_j: " << fmt("%.6f", res.joules_per_token()) << "\n"
      << "status: ok\n";
  {
    auto os = detail::open_out(ro.out_dir, "breakdown.csv");
    write_breakdown_csv(os, res);
  }
  {
    auto os = detail::open_out(ro.out_dir, "energy.csv");
    write_energy_csv(os, res);
  }
  detail::write_file(ro.out_dir, "summary.txt", sum.str());
  return sum.str();
}

inline std::vector<DseGrid> run_dse(const ResolvedScenario& r, unsigned jobs) {
  DseOptions o;
  o.flash = r.flash;
  o.npu = r.npu;
  o.metric = r.spec.metric;
  o.request_output_tokens = std::max<std::int64_t>(1, r.spec.request.output_tokens);
  o.jobs = jobs;
  auto models = r.models.empty() ? std::vector<ModelConfig>{r.model} : r.models;
  auto quants = r.quants.empty() ? std::vector<QuantScheme>{r.quant} : r.quants;
  return sweep(models, quants, r.configs, r.spec.contexts, o);
}

// heatmap_<model>_<quant>.csv/.svg and optima_<model>_<quant>.csv per grid
inline std::string cmd_dse(const ResolvedScenario& r, const RunOptions& ro) {
  std::ostringstream sum;
  sum << "scenario: " << r.spec.name << "\n";
  for (const auto& g : run_dse(r, ro.jobs)) {
    const std::string tag = detail::slug(g.model) + "_" + detail::slug(g.quant);
    {
      auto os = detail::open_out(ro.out_dir, "heatmap_" + tag + ".csv");
      write_heatmap_csv(os, g);
    }
    {
      auto os = detail::open_out(ro.out_dir, "heatmap_" + tag + ".svg");
      write_heatmap_svg(os, g);
    }
    std::ostringstream opt;
    write_optima_csv(opt, g);
    detail::write_file(ro.out_dir, "optima_" + tag + ".csv", opt.str());
    sum << "\n[" << g.model << " " << g.quant << "]\n" << opt.str();
  }
  detail::write_file(ro.out_dir, "summary.txt", sum.str());
  return sum.str();
}

// lifetime estimate, plus a paired unmapped/mapped read-disturb run on the request
inline std::string cmd_reliability(const ResolvedScenario& r, const RunOptions& ro) {
  using detail::fmt;
  const auto& s = r.spec;
  std::ostringstream sum;
  sum << "scenario: " << s.name << "\nmodel: " << r.model.name << "\narch: " << r.arch.name() << "\n";

  LifetimeScenario ls;
  ls.years = s.years;
  ls.tokens_per_s = s.tokens_per_s;
  ls.context_window = s.request.final_seq_len();
  ls.input_tokens = s.request.input_tokens;
  ls.output_tokens = s.request.output_tokens;
  if (ls.input_tokens + ls.output_tokens > 0) {
    const auto lt = lifetime_analysis(ls, kv_geometry(r.arch, r.flash, r.model, r.quant, false), r.flash);
    sum << "lifetime_pe: " << fmt("%.1f", lt.lifetime_pe) << "\n"
        << "decode_steps: " << fmt("%.0f", lt.decode_steps) << "\n"
        << "reclaims_per_block_life: " << fmt("%.0f", lt.reclaims_per_block_life) << "\n"
        << "reclaim_pe_overhead: " << fmt("%.0f", lt.reclaim_pe_overhead) << "\n"
        << "reserve_pe: " << fmt("%.0f", lt.reserve_pe) << "\n"
        << "within_reserve: " << (lt.within_reserve ? "yes" : "no") << "\n";
  }

  if (!s.ledger) {
    detail::write_file(ro.out_dir, "summary.txt", sum.str());
    return sum.str();
  }
  const auto cap = capacity_check(r.arch, r.flash, r.npu, r.model, r.quant, s.request.final_seq_len());
  if (!cap.fits()) {
    sum << "status: OOM (" << to_string(cap.oom) << ") " << cap.reason << "\n";
    detail::write_file(ro.out_dir, "summary.txt", sum.str());
    throw OomError(cap.oom, 0, "ledger run: " + cap.reason);
  }
  double step_ns = 0;
  try {
    if (s.request.output_tokens > 0)
      step_ns = static_cast<double>(decode_token_latency(r.arch, r.flash, r.npu, r.model, r.quant, s.request.seq_len_at(0)).total);
  } catch (const OomError&) {
  }
  FtlTable ftl(plan_layout(r.arch, r.flash, r.model, r.quant), s.seed);
  const auto mapped = mapped_pgrd(ftl, s.request, true, step_ns);
  {
    auto os = detail::open_out(ro.out_dir, "pgrd_mapped.csv");
    write_histogram(os, ftl.ledger());
  }
  {
    auto os = detail::open_out(ro.out_dir, "reclaim_events.csv");
    write_events(os, ftl.ledger());
  }
  sum << "mapped_max_pgrd: " << mapped.max_pgrd << "\nmapped_total_reads: " << mapped.total_reads << "\nreclaims: " << mapped.reclaims
      << "\n";
  if (s.paired) {
    const auto un = unmitigated_pgrd(r.flash, r.model, r.quant, s.request);
    auto os = detail::open_out(ro.out_dir, "pgrd_unmapped.csv");
    write_histogram(os, un);
    sum << "unmapped_max_pgrd: " << un.max_pgrd << "\n";
    if (mapped.max_pgrd > 0)
      sum << "pgrd_reduction: " << fmt("%.2f", static_cast<double>(un.max_pgrd) / static_cast<double>(mapped.max_pgrd)) << "\n";
  }
  sum << "status: ok\n";
  detail::write_file(ro.out_dir, "summary.txt", sum.str());
  return sum.str();
}

// speedup, energy and cost tables over the scenario's models and contexts
inline std::string cmd_report(const ResolvedScenario& r, const RunOptions& ro) {
  using detail::fmt;
  std::vector<ArchVariant> kv;
  for (const auto& a : r.configs)
    if (a.is_kvnand()) kv.push_back(a);
  const auto b1 = ArchVariant::base1(), b2 = ArchVariant::base2();
  auto models = r.models.empty() ? std::vector<ModelConfig>{r.model} : r.models;
  const auto q = r.quants.empty() ? r.quant : r.quants.front();

  auto lat = [&](const ArchVariant& a, const ModelConfig& m, std::int64_t s) -> std::optional<DecodeResult> {
    try {
      return decode_token_detail(a, r.flash, r.npu, m, q, s);
    } catch (const OomError&) {
      return std::nullopt;
    }
  };
  auto ns = [](const std::optional<DecodeResult>& d) { return d ? std::to_string(d->latency.total) : std::string("OOM"); };
  auto ratio = [&](const std::optional<DecodeResult>& base, const std::optional<DecodeResult>& x) {
    return base && x ? fmt("%.3f", static_cast<double>(base->latency.total) / static_cast<double>(x->latency.total)) : std::string("");
  };

  std::ostringstream sp, en, md;
  sp << "model,context_len,base1_ns,base2_ns,kvnand,kvnand_ns,speedup_vs_base1,speedup_vs_base2\n";
  en << "model,context_len,base2_pj,kvnand_pj,ratio\n";
  md << "# Report: " << r.spec.name << " (" << q.label << ")\n\n| model | context | best KVNAND | vs Base-1 | vs Base-2 |\n|---|---|---|---|---|\n";
  for (const auto& m : models)
    for (auto s : r.spec.contexts) {
      std::optional<DecodeResult> best;
      ArchVariant best_a;
      for (const auto& a : kv)
        if (auto d = lat(a, m, s); d && (!best || d->latency.total < best->latency.total)) {
          best = d;
          best_a = a;
        }
      const auto d1 = lat(b1, m, s), d2 = lat(b2, m, s);
      const std::string name = best ? best_a.name() : "OOM";
      sp << m.name << "," << s << "," << ns(d1) << "," << ns(d2) << "," << name << "," << ns(best) << "," << ratio(d1, best) << ","
         << ratio(d2, best) << "\n";
      if (d2 && best) {
        const double e2 = energy_per_token(b2, r.flash, r.npu, *d2).total_pj;
        const double ek = energy_per_token(best_a, r.flash, r.npu, *best).total_pj;
        en << m.name << "," << s << "," << fmt("%.0f", e2) << "," << fmt("%.0f", ek) << "," << fmt("%.3f", ek / e2) << "\n";
      }
      md << "| " << m.name << " | " << s << " | " << name << " | " << ratio(d1, best) << " | " << ratio(d2, best) << " |\n";
    }

  std::ostringstream cost;
  cost << "item,gb,usd\nkvnand_flash,128," << fmt("%.2f", memory_cost(128, 0)) << "\nbase1_dram,64," << fmt("%.2f", memory_cost(0, 64))
       << "\n";
  md << "\nMemory cost: 128 GB flash $" << fmt("%.2f", memory_cost(128, 0)) << ", 64 GB DRAM $" << fmt("%.2f", memory_cost(0, 64)) << "\n";

  detail::write_file(ro.out_dir, "speedup.csv", sp.str());
  detail::write_file(ro.out_dir, "energy.csv", en.str());
  detail::write_file(ro.out_dir, "cost.csv", cost.str());
  detail::write_file(ro.out_dir, "report.md", md.str());
  return md.str();
}

}  // namespace kvnand
