// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "kvnand/report.hpp"

using namespace kvnand;

namespace {

int fail(const char* kind, const std::string& msg, int code = 1) {
  std::string one = msg;
  for (char& c : one)
    if (c == '\n') c = ' ';
  std::cerr << "error: " << kind << ": " << one << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KVNAND decode simulator"};
  app.require_subcommand(0, 1);
  bool list = false;
  app.add_flag("--list-presets", list, "Print builtin preset names");

  std::string scenario_path, preset_name, out = "out";
  std::optional<std::uint64_t> seed;
  unsigned jobs = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--scenario", scenario_path, "Scenario file (key = value)");
    sub->add_option("--preset", preset_name, "Builtin preset name");
    sub->add_option("--out", out, "Output directory")->capture_default_str();
    sub->add_option("--seed", seed, "Override the scenario seed");
    sub->add_option("--jobs", jobs, "Parallel workers (0 = all cores)")->capture_default_str();
    return sub;
  };
  auto* simulate = add_common(app.add_subcommand("simulate", "Run one request and write latency/energy breakdowns"));
  auto* dse = add_common(app.add_subcommand("dse", "Sweep configurations and write heatmaps with per-column optima"));
  auto* reliability = add_common(app.add_subcommand("reliability", "Lifetime estimate and read-disturb ledger reports"));
  auto* report = add_common(app.add_subcommand("report", "Speedup, energy and cost tables"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  if (list) {
    for (const auto& [name, s] : presets()) std::cout << name << "\n";
    return 0;
  }
  if (app.get_subcommands().empty()) return fail("usage", "a subcommand is required (simulate, dse, reliability, report)", 2);
  if (scenario_path.empty() == preset_name.empty()) return fail("usage", "give exactly one of --scenario or --preset", 2);

  try {
    Scenario s = preset_name.empty() ? load_scenario(scenario_path) : preset(preset_name);
    if (seed) s.seed = *seed;
    const auto r = resolve(s);
    const RunOptions ro{out, jobs};
    std::string text;
    if (simulate->parsed()) text = cmd_simulate(r, ro);
    else if (dse->parsed()) text = cmd_dse(r, ro);
    else if (reliability->parsed()) text = cmd_reliability(r, ro);
    else if (report->parsed()) text = cmd_report(r, ro);
    std::cout << text;
    return 0;
  } catch (const ResolutionError& e) {
    return fail("resolution", e.what());
  } catch (const ScenarioParseError& e) {
    return fail("parse", e.what());
  } catch (const CatalogParseError& e) {
    return fail("parse", e.what());
  } catch (const OomError& e) {
    return fail("oom", e.what());
  } catch (const LifetimeExhausted& e) {
    return fail("lifetime", e.what());
  } catch (const std::exception& e) {
    return fail("runtime", e.what());
  }
}
