// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace kvnand {

// Time is carried as integer nanoseconds at API boundaries and as double ns
// inside formulas. Energy is picojoules. Bandwidths are decimal bytes/s,
// page/block geometry is binary.
using Nanos = std::int64_t;

inline constexpr double kGB = 1e9;
inline constexpr double kGiB = 1073741824.0;
inline constexpr double kNsPerSecond = 1e9;
inline constexpr double kBitsPerByte = 8.0;

inline double transfer_ns(double bytes, double bytes_per_s) {
  if (!(bytes_per_s > 0.0)) throw std::invalid_argument("transfer_ns: bandwidth must be positive");
  return bytes / bytes_per_s * kNsPerSecond;
}

inline double seconds_to_ns(double s) { return s * kNsPerSecond; }

inline Nanos round_ns(double ns) { return static_cast<Nanos>(std::llround(ns)); }

inline double energy_pj(double bytes, double pj_per_bit) { return bytes * kBitsPerByte * pj_per_bit; }

// watts * ns -> pJ
inline double power_energy_pj(double watts, double ns) { return watts * ns * 1e3; }

inline double bits_to_bytes(double elems, int bits) { return elems * bits / kBitsPerByte; }

constexpr std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return b == 0 ? 0 : (a + b - 1) / b; }

inline std::uint64_t ceil_div_real(double a, double b) {
  if (a <= 0.0) return 0;
  return static_cast<std::uint64_t>(std::ceil(a / b - 1e-12));
}

}  // namespace kvnand
