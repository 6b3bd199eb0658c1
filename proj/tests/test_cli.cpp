// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "kvnand/report.hpp"

using namespace kvnand;
namespace fs = std::filesystem;

namespace {

struct Run {
  int rc = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("kvnand_cli_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(d);
  fs::create_directories(d.parent_path());
  return d;
}

Run cli(const std::string& args) {
  static int n = 0;
  const auto base = scratch("io_" + std::to_string(n++));
  fs::create_directories(base);
  const std::string cmd =
      std::string(KVNAND_CLI_PATH) + " " + args + " >" + (base / "o").string() + " 2>" + (base / "e").string();
  const int st = std::system(cmd.c_str());
  return {WIFEXITED(st) ? WEXITSTATUS(st) : -1, slurp(base / "o"), slurp(base / "e")};
}

fs::path write_text(const std::string& name, const std::string& text) {
  const auto p = scratch(name);
  std::ofstream(p) << text;
  return p;
}

std::map<std::string, std::string> dir_contents(const fs::path& d) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::directory_iterator(d)) m[e.path().filename().string()] = slurp(e.path());
  return m;
}

double summary_value(const std::string& text, const std::string& key) {
  const auto p = text.find(key);
  REQUIRE(p != std::string::npos);
  return std::stod(text.substr(text.find(':', p) + 1));
}

void check_error(const Run& r, const std::string& kind) {
  CHECK(r.rc != 0);
  CHECK(r.err.rfind("error: " + kind + ": ", 0) == 0);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
}

}  // namespace

TEST_CASE("scenario parsing") {
  std::istringstream in(
      "[scenario]\n# comment\nname = x\nmodel = llama2-7b  # trailing\narch = C-16\ninput_tokens = 10\noutput_tokens=2\n"
      "context = 5\nseed = 9\nmodels = a, b\ncontexts = 1,2\nmetric = request\npaired = false\n");
  const auto s = parse_scenario(in);
  CHECK(s.name == "x");
  CHECK(s.model == "llama2-7b");
  CHECK(s.arch == "C-16");
  CHECK(s.request.input_tokens == 10);
  CHECK(s.request.output_tokens == 2);
  CHECK(s.request.context_start == 5);
  CHECK(s.seed == 9);
  CHECK(s.models == std::vector<std::string>{"a", "b"});
  CHECK(s.contexts == std::vector<std::int64_t>{1, 2});
  CHECK(s.metric == CellMetric::FullRequest);
  CHECK_FALSE(s.paired);

  for (const char* bad : {"nokey\n", "modle = x\n", "seed = -1\n", "output_tokens = 1.5\n", "metric = fast\n"}) {
    std::istringstream b(std::string("model = x\n") + bad);
    INFO(bad);
    try {
      parse_scenario(b, "f.scn");
      FAIL("expected parse error");
    } catch (const ScenarioParseError& e) {
      CHECK(std::string(e.what()).rfind("f.scn:2: ", 0) == 0);
    }
  }
}

TEST_CASE("presets resolve") {
  for (const char* n : {"mixtral-naive-check", "fig15", "main-eval", "lifetime-65b", "read-disturb-8b", "long-context-8b"}) {
    INFO(n);
    CHECK_NOTHROW(resolve(preset(n)));
  }
  CHECK_THROWS_AS(preset("nope"), ResolutionError);
  CHECK(resolve(preset("fig15")).configs.size() == 8);
  CHECK(resolve(preset("main-eval")).configs.size() == 18);

  Scenario s;
  s.model = "gpt-9";
  try {
    resolve(s);
    FAIL("expected resolution error");
  } catch (const ResolutionError& e) {
    CHECK(e.key == "gpt-9");
    CHECK(std::string(e.what()).find("gpt-9") != std::string::npos);
  }
  s = Scenario{};
  s.quant = "W3A3";
  CHECK_THROWS_AS(resolve(s), ResolutionError);
  s = Scenario{};
  s.configs = {"D-9"};
  CHECK_THROWS_AS(resolve(s), ResolutionError);
}

TEST_CASE("mixtral check reproduces the naive-design pair") {
  const auto d = scratch("mixtral");
  const auto r = cli("simulate --preset mixtral-naive-check --out " + d.string());
  REQUIRE(r.rc == 0);
  CHECK(summary_value(r.out, "naive_kv_read_ms") == Catch::Approx(6.9).epsilon(0.05));
  CHECK(summary_value(r.out, "ffn_ifc_read_ms") == Catch::Approx(44).epsilon(0.05));
  CHECK(slurp(d / "summary.txt") == r.out);
}

TEST_CASE("empty request writes zero decode rows") {
  const auto d = scratch("empty");
  const auto sc = write_text("empty.scn", "model = llama3.1-8b\narch = C-16\ninput_tokens = 100\noutput_tokens = 0\n");
  const auto r = cli("simulate --scenario " + sc.string() + " --out " + d.string());
  REQUIRE(r.rc == 0);
  CHECK(summary_value(r.out, "decode_steps") == 0);
  const auto csv = slurp(d / "breakdown.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1);
}

TEST_CASE("errors are single machine-readable lines") {
  const auto d = scratch("err");
  const auto unknown = write_text("unknown.scn", "model = nonexistent-model\n");
  auto r = cli("simulate --scenario " + unknown.string() + " --out " + d.string());
  check_error(r, "resolution");
  CHECK(r.err.find("nonexistent-model") != std::string::npos);
  CHECK_FALSE(fs::exists(d));

  check_error(cli("simulate --scenario " + write_text("p.scn", "bogus = 1\n").string()), "parse");
  const auto oom = write_text("oom.scn", "model = llama2-7b\narch = base1\ncontext = 40000\n");
  r = cli("simulate --scenario " + oom.string() + " --out " + d.string());
  check_error(r, "oom");
  CHECK(slurp(d / "summary.txt").find("status: OOM (kv)") != std::string::npos);
  check_error(cli("simulate"), "usage");
  check_error(cli("simulate --preset fig15 --scenario x"), "usage");
  check_error(cli("frobnicate"), "usage");
  check_error(cli("dse --preset no-such-preset"), "resolution");
}

TEST_CASE("one-cell sweep equals a simulate cell") {
  const auto d = scratch("cell");
  const auto sc = write_text("cell.scn", "model = llama3.1-8b\nconfigs = D-5+11\ncontexts = 4096\n");
  REQUIRE(cli("dse --scenario " + sc.string() + " --out " + d.string()).rc == 0);
  const auto want = decode_token_latency(ArchVariant::discrete(5, 11), FlashConfig{}, NpuConfig{},
                                         Catalog::builtin().model("llama3.1-8b"), QuantScheme::make(16, 16), 4096)
                        .total;
  CHECK(slurp(d / "heatmap_llama3.1-8b_FP16.csv") == "config,4096\nKVNAND-D-(5+11)," + std::to_string(want) + "\n");
}

TEST_CASE("fig15 preset emits four grids") {
  const auto d = scratch("fig15");
  REQUIRE(cli("dse --preset fig15 --out " + d.string()).rc == 0);
  for (const char* m : {"opt-30b", "llama3.1-70b"})
    for (const char* q : {"W8A8", "W4A16"}) {
      const std::string tag = std::string(m) + "_" + q;
      CHECK(fs::exists(d / ("heatmap_" + tag + ".csv")));
      CHECK(fs::exists(d / ("heatmap_" + tag + ".svg")));
      CHECK(fs::exists(d / ("optima_" + tag + ".csv")));
    }
  CHECK(slurp(d / "optima_llama3.1-70b_W4A16.csv").find("\n100000,KVNAND-D-(4+4),") != std::string::npos);
}

TEST_CASE("all-oom column is flagged in the sidecar") {
  const auto cat = write_text("tiny.cat", "[flash tiny]\nblocks_per_plane = 4\n");
  const auto sc = write_text("tiny.scn", "catalog = " + cat.string() +
                                             "\nflash = tiny\nmodel = llama3.1-8b\nconfigs = D-1+7, C-8\ncontexts = 128, 100000\n");
  const auto d = scratch("tiny");
  // weights alone do not fit 16 MiB dies, so every column is infeasible
  REQUIRE(cli("dse --scenario " + sc.string() + " --out " + d.string()).rc == 0);
  const auto opt = slurp(d / "optima_llama3.1-8b_FP16.csv");
  CHECK(opt.find("\n128,NO_FEASIBLE_CONFIG,OOM,,,\n") != std::string::npos);
  CHECK(opt.find("\n100000,NO_FEASIBLE_CONFIG,OOM,,,\n") != std::string::npos);
}

TEST_CASE("reliability reports") {
  const auto d = scratch("life");
  auto r = cli("reliability --preset lifetime-65b --out " + d.string());
  REQUIRE(r.rc == 0);
  CHECK(summary_value(r.out, "lifetime_pe") == Catch::Approx(1000).epsilon(0.2));
  CHECK(r.out.find("within_reserve: yes") != std::string::npos);

  const auto z = scratch("zero");
  const auto zero = write_text("zero.scn", "model = llama3.1-8b\narch = C-16\ninput_tokens = 64\noutput_tokens = 0\nyears = 0\n");
  r = cli("reliability --scenario " + zero.string() + " --out " + z.string());
  REQUIRE(r.rc == 0);
  CHECK(summary_value(r.out, "decode_steps") == 0);
  CHECK(summary_value(r.out, "mapped_total_reads") == 0);
  CHECK(slurp(z / "reclaim_events.csv") == "time_ns,event,block,target\n");
  std::istringstream hist(slurp(z / "pgrd_mapped.csv"));
  std::string line;
  std::getline(hist, line);
  while (std::getline(hist, line)) CHECK(line.find(",0,") != std::string::npos);

  const auto p = scratch("paired");
  const auto paired = write_text("paired.scn", "model = llama3.1-8b\narch = C-16\ninput_tokens = 2048\noutput_tokens = 32\n");
  r = cli("reliability --scenario " + paired.string() + " --out " + p.string());
  REQUIRE(r.rc == 0);
  const double red = summary_value(r.out, "pgrd_reduction");
  CHECK(red == Catch::Approx(summary_value(r.out, "unmapped_max_pgrd") / summary_value(r.out, "mapped_max_pgrd")).epsilon(0.01));
  CHECK(red > 1);
  CHECK(fs::exists(p / "pgrd_unmapped.csv"));
}

TEST_CASE("report tables") {
  const auto d = scratch("report");
  REQUIRE(cli("report --preset main-eval --out " + d.string()).rc == 0);
  CHECK(slurp(d / "cost.csv") == "item,gb,usd\nkvnand_flash,128,92.16\nbase1_dram,64,295.68\n");
  const auto sp = slurp(d / "speedup.csv");
  CHECK(sp.rfind("model,context_len,base1_ns,base2_ns,kvnand,kvnand_ns,speedup_vs_base1,speedup_vs_base2\n", 0) == 0);
  CHECK(std::count(sp.begin(), sp.end(), '\n') == 1 + 5 * 4);
  CHECK(fs::exists(d / "report.md"));
}

TEST_CASE("identical runs are byte-identical") {
  for (const char* p : {"mixtral-naive-check", "long-context-8b", "fig15", "main-eval", "lifetime-65b"}) {
    const std::string cmd = std::string(p) == "fig15" ? "dse" : std::string(p) == "main-eval" ? "report"
                            : std::string(p) == "lifetime-65b"                         ? "reliability"
                                                                                       : "simulate";
    const auto a = scratch(std::string(p) + "_a"), b = scratch(std::string(p) + "_b");
    const auto ra = cli(cmd + " --preset " + p + " --seed 3 --jobs 1 --out " + a.string());
    const auto rb = cli(cmd + " --preset " + p + " --seed 3 --jobs 4 --out " + b.string());
    INFO(p);
    REQUIRE(ra.rc == 0);
    CHECK(ra.out == rb.out);
    CHECK(dir_contents(a) == dir_contents(b));
  }
  const auto sc = write_text("rd.scn", "model = llama3.1-8b\narch = C-16\ninput_tokens = 512\noutput_tokens = 16\n");
  const auto a = scratch("rd_a"), b = scratch("rd_b");
  REQUIRE(cli("reliability --scenario " + sc.string() + " --seed 11 --out " + a.string()).rc == 0);
  REQUIRE(cli("reliability --scenario " + sc.string() + " --seed 11 --out " + b.string()).rc == 0);
  CHECK(dir_contents(a) == dir_contents(b));
}
