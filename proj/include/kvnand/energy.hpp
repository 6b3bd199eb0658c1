// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "params.hpp"
#include "perf.hpp"

namespace kvnand {

struct EnergyBreakdown {
  double flash_internal_read = 0;
  double flash_program = 0;
  double flash_interface = 0;
  double dram_access = 0;
  double npu_compute = 0;
  double ifc_logic = 0;
  double sram = 0;
  double total_pj = 0;

  static const std::vector<std::string>& columns() {
    static const std::vector<std::string> c{"flash_internal_read", "flash_program", "flash_interface", "dram_access",
                                            "npu_compute",         "ifc_logic",     "sram"};
    return c;
  }
  std::vector<double> components() const {
    return {flash_internal_read, flash_program, flash_interface, dram_access, npu_compute, ifc_logic, sram};
  }
  void finish() {
    total_pj = 0;
    for (double c : components()) total_pj += c;
  }
  double joules() const { return total_pj * 1e-12; }
  double data_movement_pj() const { return flash_internal_read + flash_program + flash_interface + dram_access; }
};

struct EnergyOptions {
  double idle_fraction = 0.1;
};

inline EnergyBreakdown energy_from_activity(const ArchVariant& a, const FlashConfig& f, const NpuConfig& npu, const StepActivity& act,
                                            double wall_ns, const EnergyOptions& opt = {}) {
  if (wall_ns < 0) throw std::invalid_argument("energy: negative step duration");
  EnergyBreakdown e;
  e.flash_internal_read = energy_pj(act.flash_read_bytes, f.e_internal_read_pj_per_bit);
  e.flash_program = energy_pj(act.program_bytes, f.e_program_pj_per_bit);
  e.flash_interface = energy_pj(act.interface_bytes, f.e_interface_pj_per_bit);
  e.dram_access = energy_pj(act.dram_bytes, npu.e_dram_pj_per_bit);

  const double npu_active = std::min(act.npu_active_ns, wall_ns);
  e.npu_compute = power_energy_pj(npu.npu_power_w, npu_active) + power_energy_pj(npu.npu_power_w * opt.idle_fraction, wall_ns - npu_active);

  const double die_power = f.plane_logic_power_w * f.planes_per_die;
  const double die_time = static_cast<double>(a.ifc_dies()) * wall_ns;
  const double busy = std::min(act.ifc_die_busy_ns, die_time);
  e.ifc_logic = power_energy_pj(die_power, busy) + power_energy_pj(die_power * opt.idle_fraction, die_time - busy) +
                power_energy_pj(f.ecc_dec_power_w, act.pages_read * f.t_read_page_ns);

  e.sram = power_energy_pj(npu.sram_power_w, wall_ns);
  e.finish();
  return e;
}

inline EnergyBreakdown energy_per_token(const ArchVariant& a, const FlashConfig& f, const NpuConfig& npu, const DecodeResult& step,
                                        const EnergyOptions& opt = {}) {
  return energy_from_activity(a, f, npu, step.activity, static_cast<double>(step.latency.total), opt);
}

inline EnergyBreakdown energy_per_token(const ArchVariant& a, const FlashConfig& f, const NpuConfig& npu, const ModelConfig& m,
                                        const QuantScheme& q, std::int64_t seq_len, const PerfOptions& perf = {},
                                        const EnergyOptions& opt = {}) {
  return energy_per_token(a, f, npu, decode_token_detail(a, f, npu, m, q, seq_len, perf), opt);
}

struct CostModel {
  double tlc_usd_per_gb = 0.11;
  double tlc_density_gb_per_mm2 = 8.5;
  double slc_density_gb_per_mm2 = 1.8;
  double area_factor = 1.22;  // folded into the yield estimate
  double base_yield = 0.80;
  double yield = 0.58;
  double dram_usd_per_gb = 4.62;

  static double to_cents(double usd) { return std::round(usd * 100.0) / 100.0; }

  double slc_usd_per_gb() const { return to_cents(tlc_usd_per_gb * tlc_density_gb_per_mm2 / slc_density_gb_per_mm2); }
  double flash_usd_per_gb() const { return to_cents(slc_usd_per_gb() * base_yield / yield); }
};

inline double memory_cost(double flash_gb, double dram_gb, const CostModel& c = {}) {
  if (flash_gb < 0 || dram_gb < 0) throw std::invalid_argument("memory_cost: capacities must be nonnegative");
  const auto cents = [](double gb, double usd_per_gb) {
    return std::llround(gb * 1000.0) * std::llround(usd_per_gb * 100.0);  // milli-GB x cents
  };
  const long long milli_cents = cents(flash_gb, c.flash_usd_per_gb()) + cents(dram_gb, c.dram_usd_per_gb);
  return static_cast<double>(std::llround(static_cast<double>(milli_cents) / 1000.0)) / 100.0;
}

inline double memory_cost(const ArchVariant& a, const FlashConfig& f, const NpuConfig& npu, const CostModel& c = {}) {
  const double flash_gb = static_cast<double>(a.total_dies) * static_cast<double>(f.die_capacity_bytes()) / kGB;
  const double dram_gb = a.kv_in_dram() ? a.channels * static_cast<double>(npu.dram_capacity_per_channel_bytes) / kGiB : 0.0;
  return memory_cost(flash_gb, dram_gb, c);
}

}  // namespace kvnand
