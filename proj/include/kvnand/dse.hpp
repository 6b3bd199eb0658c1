// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <future>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "params.hpp"
#include "perf.hpp"
#include "simulate.hpp"

namespace kvnand {

inline const std::vector<std::int64_t>& default_context_axis() {
  static const std::vector<std::int64_t> axis{128, 1000, 2000, 5000, 10000, 50000, 100000};
  return axis;
}

// D-(g1+rest) for g1 = 1..dies-1, then C-dies
inline std::vector<ArchVariant> split_configs(int dies, int channels) {
  if (dies < 2) throw std::invalid_argument("split_configs: need at least 2 dies");
  std::vector<ArchVariant> v;
  for (int g1 = 1; g1 < dies; ++g1) v.push_back(ArchVariant::discrete(g1, dies - g1, channels));
  v.push_back(ArchVariant::compact(dies, channels));
  return v;
}

inline std::vector<ArchVariant> fig15_configs() { return split_configs(8, 8); }
inline std::vector<ArchVariant> main_eval_configs() { return split_configs(16, 8); }

enum class CellMetric { StepLatency, FullRequest };

struct DseOptions {
  FlashConfig flash;
  NpuConfig npu;
  PerfOptions perf;
  CellMetric metric = CellMetric::StepLatency;
  std::int64_t request_output_tokens = 16;  // FullRequest only
  unsigned jobs = 0;                        // 0 = hardware concurrency
};

struct DseCell {
  std::optional<Nanos> latency_ns;
  OomKind oom = OomKind::None;
  std::string reason;

  bool feasible() const { return latency_ns.has_value(); }
};

struct DseGrid {
  std::string model;
  std::string quant;
  std::vector<ArchVariant> configs;
  std::vector<std::int64_t> context_lens;
  std::vector<DseCell> cells;  // row-major, rows = configs

  const DseCell& at(std::size_t config, std::size_t ctx) const { return cells.at(config * context_lens.size() + ctx); }
  std::size_t column_of(std::int64_t context_len) const {
    auto it = std::find(context_lens.begin(), context_lens.end(), context_len);
    if (it == context_lens.end()) throw std::out_of_range("dse: context " + std::to_string(context_len) + " not on axis");
    return static_cast<std::size_t>(it - context_lens.begin());
  }
};

inline DseCell evaluate_cell(const ArchVariant& a, const ModelConfig& m, const QuantScheme& q, std::int64_t s, const DseOptions& opt) {
  DseCell c;
  const std::int64_t last = opt.metric == CellMetric::FullRequest ? s - 1 + opt.request_output_tokens : s;
  const auto cap = capacity_check(a, opt.flash, opt.npu, m, q, last);
  if (!cap.fits()) {
    c.oom = cap.oom;
    c.reason = cap.reason;
    return c;
  }
  try {
    if (opt.metric == CellMetric::StepLatency) {
      c.latency_ns = decode_token_latency(a, opt.flash, opt.npu, m, q, s, opt.perf).total;
    } else {
      const auto r = simulate_request(a, opt.flash, opt.npu, m, q, {0, opt.request_output_tokens, s - 1}, opt.perf);
      c.latency_ns = r.total_ns;
    }
  } catch (const OomError& e) {
    c.oom = e.kind;
    c.reason = e.what();
  }
  return c;
}

inline DseGrid sweep_grid(const ModelConfig& m, const QuantScheme& q, const std::vector<ArchVariant>& configs,
                          const std::vector<std::int64_t>& context_lens, const DseOptions& opt = {}) {
  if (configs.empty() || context_lens.empty()) throw std::invalid_argument("dse: axes must be nonempty");
  DseGrid g{m.name, q.label, configs, context_lens, {}};
  const std::size_t n = configs.size() * context_lens.size();
  g.cells.resize(n);
  unsigned jobs = opt.jobs ? opt.jobs : std::max(1u, std::thread::hardware_concurrency());
  jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, n));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;)
      g.cells[i] = evaluate_cell(configs[i / context_lens.size()], m, q, context_lens[i % context_lens.size()], opt);
  };
  std::vector<std::future<void>> pool;
  for (unsigned j = 1; j < jobs; ++j) pool.push_back(std::async(std::launch::async, worker));
  worker();
  for (auto& f : pool) f.get();
  return g;
}

// one grid per (model, quant), models outermost
inline std::vector<DseGrid> sweep(const std::vector<ModelConfig>& models, const std::vector<QuantScheme>& quants,
                                  const std::vector<ArchVariant>& configs, const std::vector<std::int64_t>& context_lens,
                                  const DseOptions& opt = {}) {
  if (models.empty() || quants.empty()) throw std::invalid_argument("dse: axes must be nonempty");
  std::vector<DseGrid> out;
  for (const auto& m : models)
    for (const auto& q : quants) out.push_back(sweep_grid(m, q, configs, context_lens, opt));
  return out;
}

struct Optimum {
  bool feasible = false;
  std::size_t config_index = 0;
  ArchVariant arch;
  Nanos latency_ns = 0;
  double dispersion = 0;  // max/min over feasible cells of the column
};

inline bool prefer_on_tie(const ArchVariant& a, const ArchVariant& b) {
  if (a.effective_g1() != b.effective_g1()) return a.effective_g1() > b.effective_g1();
  return a.kind == ArchKind::KvnandC && b.kind != ArchKind::KvnandC;
}

inline Optimum find_optimum_at(const DseGrid& g, std::size_t col) {
  Optimum o;
  Nanos worst = 0;
  for (std::size_t r = 0; r < g.configs.size(); ++r) {
    const auto& c = g.at(r, col);
    if (!c.feasible()) continue;
    const Nanos t = *c.latency_ns;
    worst = std::max(worst, t);
    if (!o.feasible || t < o.latency_ns || (t == o.latency_ns && prefer_on_tie(g.configs[r], o.arch))) {
      o.feasible = true;
      o.config_index = r;
      o.arch = g.configs[r];
      o.latency_ns = t;
    }
  }
  if (o.feasible && o.latency_ns > 0) o.dispersion = static_cast<double>(worst) / static_cast<double>(o.latency_ns);
  return o;
}

inline Optimum find_optimum(const DseGrid& g, std::int64_t context_len) { return find_optimum_at(g, g.column_of(context_len)); }

// once a config runs out of memory it stays out at longer contexts
inline bool oom_upward_closed(const DseGrid& g) {
  for (std::size_t r = 0; r < g.configs.size(); ++r) {
    bool oom = false;
    for (std::size_t c = 0; c < g.context_lens.size(); ++c) {
      if (oom && g.at(r, c).feasible()) return false;
      oom = oom || !g.at(r, c).feasible();
    }
  }
  return true;
}

inline void write_heatmap_csv(std::ostream& os, const DseGrid& g) {
  os << "config";
  for (auto s : g.context_lens) os << "," << s;
  os << "\n";
  for (std::size_t r = 0; r < g.configs.size(); ++r) {
    os << g.configs[r].name();
    for (std::size_t c = 0; c < g.context_lens.size(); ++c) {
      const auto& cell = g.at(r, c);
      os << ",";
      if (cell.feasible())
        os << *cell.latency_ns;
      else
        os << "OOM";
    }
    os << "\n";
  }
}

inline void write_optima_csv(std::ostream& os, const DseGrid& g) {
  os << "context_len,optimum,latency_ns,g1,g2,dispersion\n";
  for (std::size_t c = 0; c < g.context_lens.size(); ++c) {
    const auto o = find_optimum_at(g, c);
    os << g.context_lens[c] << ",";
    if (!o.feasible) {
      os << "NO_FEASIBLE_CONFIG,OOM,,,\n";
      continue;
    }
    char disp[32];
    std::snprintf(disp, sizeof disp, "%.4f", o.dispersion);
    os << o.arch.name() << "," << o.latency_ns << "," << o.arch.effective_g1() << "," << o.arch.effective_g2() << "," << disp << "\n";
  }
}

// log-latency color ramp, blue (fast) to red (slow); OOM cells left blank
inline void write_heatmap_svg(std::ostream& os, const DseGrid& g) {
  constexpr int cw = 90, ch = 24, left = 140, top = 30;
  double lo = 0, hi = 0;
  bool any = false;
  for (const auto& c : g.cells)
    if (c.feasible()) {
      const double v = std::log(static_cast<double>(std::max<Nanos>(1, *c.latency_ns)));
      lo = any ? std::min(lo, v) : v;
      hi = any ? std::max(hi, v) : v;
      any = true;
    }
  const int w = left + cw * static_cast<int>(g.context_lens.size()) + 10;
  const int h = top + ch * static_cast<int>(g.configs.size()) + 10;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"monospace\" font-size=\"11\">\n";
  os << "<text x=\"4\" y=\"14\">" << g.model << " " << g.quant << "</text>\n";
  for (std::size_t c = 0; c < g.context_lens.size(); ++c)
    os << "<text x=\"" << left + cw * static_cast<int>(c) + 4 << "\" y=\"" << top - 4 << "\">" << g.context_lens[c] << "</text>\n";
  for (std::size_t r = 0; r < g.configs.size(); ++r) {
    const int y = top + ch * static_cast<int>(r);
    os << "<text x=\"4\" y=\"" << y + 16 << "\">" << g.configs[r].name() << "</text>\n";
    for (std::size_t c = 0; c < g.context_lens.size(); ++c) {
      const auto& cell = g.at(r, c);
      if (!cell.feasible()) continue;
      const double v = std::log(static_cast<double>(std::max<Nanos>(1, *cell.latency_ns)));
      const double t = hi > lo ? (v - lo) / (hi - lo) : 0.0;
      const int red = static_cast<int>(std::lround(255 * t)), blue = 255 - red;
      const int x = left + cw * static_cast<int>(c);
      os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cw - 2 << "\" height=\"" << ch - 2 << "\" fill=\"rgb(" << red
         << ",80," << blue << ")\"/>\n";
      char label[32];
      std::snprintf(label, sizeof label, "%.2f", static_cast<double>(*cell.latency_ns) / 1e6);
      os << "<text x=\"" << x + 4 << "\" y=\"" << y + 16 << "\" fill=\"white\">" << label << "</text>\n";
    }
  }
  os << "</svg>\n";
}

}  // namespace kvnand
