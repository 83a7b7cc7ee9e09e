#include <catch_amalgamated.hpp>

#include "inclusol/runner.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace inclusol;
using Catch::Matchers::ContainsSubstring;
namespace fs = std::filesystem;

namespace {

const fs::path kScenarios = INCLUSOL_SCENARIO_DIR;
const fs::path kScratch = fs::temp_directory_path() / ("inclusol-test-" + std::to_string(::getpid()));

struct Cleanup {
  ~Cleanup() {
    std::error_code ec;
    fs::remove_all(kScratch, ec);
  }
} cleanup;

fs::path scratch(const std::string& name) {
  fs::path p = kScratch / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Run {
  int status;
  std::string out;
};

Run cli(const std::string& args, const fs::path& capture) {
  std::string cmd = std::string("\"") + INCLUSOL_CLI + "\" " + args + " >\"" + capture.string() + "\" 2>&1";
  int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(capture)};
}

std::vector<fs::path> bundled() {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(kScenarios)) {
    if (e.path().extension() == ".yaml") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("minimal scenario gets defaults", "[scenario]") {
  Scenario s = parse_scenario("name: minimal\n");
  CHECK(s.dimension == 1);
  CHECK(s.steps == 100);
  CHECK(s.horizon == 1.0);
  CHECK(s.x0 == std::vector<double>{0.0});
  CHECK(s.F.type == "zero");
  CHECK(s.kernel.type == "zero");
  CHECK(s.run.command == "solve");

  auto dir = scratch("minimal");
  auto rep = run_scenario(s, RunOptions{std::nullopt, std::nullopt, std::nullopt, dir.string()});
  CHECK(rep.pass());
  CHECK(fs::exists(dir / "summary.json"));
  CHECK(fs::exists(dir / "trajectory.dat"));
}

TEST_CASE("validation errors name the failed invariant", "[scenario]") {
  const std::string sweep = R"(name: bad
x0: [0.0]
moving_set:
  set: {type: halfspace, normal: [-1], offset: -t}
  zeta: t
  L: 1.2
run: {command: sweep}
)";
  CHECK_THROWS_WITH(parse_scenario(sweep), ContainsSubstring("L must lie in [0,1)"));

  CHECK_THROWS_WITH(parse_scenario("name: x\nsteps: 0\n"), ContainsSubstring("empty grid"));
  CHECK_THROWS_WITH(parse_scenario("name: x\nrun: {command: solve, study: [100, 250]}\n"),
                    ContainsSubstring("misaligned grids"));
  CHECK_THROWS_WITH(parse_scenario("name: x\ndimension: 2\nx0: [1]\n"), ContainsSubstring("x0"));
  CHECK_THROWS_WITH(parse_scenario("name: x\nrun: {command: sweep}\n"), ContainsSubstring("moving_set"));
  CHECK_THROWS_WITH(parse_scenario("name: x\nenvelope: {c: -1}\n"), ContainsSubstring("nonnegative"));
}

TEST_CASE("unknown keys and syntax errors carry a position", "[scenario]") {
  CHECK_THROWS_WITH(parse_scenario("name: x\nstepz: 10\n", "f.yaml"),
                    ContainsSubstring("f.yaml") && ContainsSubstring("line 2, column 1") &&
                        ContainsSubstring("unknown key 'stepz'"));
  CHECK_THROWS_WITH(parse_scenario("name: x\ndynamics:\n  F: {type: warp}\n"),
                    ContainsSubstring("unknown velocity map 'warp'"));
  CHECK_THROWS_WITH(parse_scenario("name: [unclosed\n"), ContainsSubstring("parse error at line"));
  CHECK_THROWS_WITH(parse_scenario("name: x\nenvelope: {c: 't +'}\n"), ContainsSubstring("column"));
  CHECK_THROWS_WITH(load_scenario("/nonexistent/file.yaml"), ContainsSubstring("cannot open"));
}

TEST_CASE("bundled scenarios round-trip through serialization", "[scenario]") {
  auto files = bundled();
  REQUIRE(files.size() >= 10);
  for (const auto& f : files) {
    INFO(f.filename().string());
    Scenario s = load_scenario(f.string());
    Scenario again = parse_scenario(serialize(s));
    CHECK(again == s);
    CHECK(serialize(again) == serialize(s));
  }
}

TEST_CASE("halfline scenario parses to the wall-riding problem", "[scenario]") {
  Scenario s = load_scenario((kScenarios / "halfline_sweep.yaml").string());
  Model m = build_model(s);
  REQUIRE(m.spec.C);
  CHECK(m.spec.C->L == 0.0);
  Vector x = Vector::Constant(1, 0.2);
  CHECK(distance(m.spec.C->at(0.5, x), x) == Catch::Approx(0.3));
  CHECK(m.spec.C->zeta_dot(0.3) == 1.0);
}

TEST_CASE("linear benchmark report", "[scenario]") {
  Scenario s = load_scenario((kScenarios / "linear_idi.yaml").string());
  auto dir = scratch("linear");
  auto rep = run_scenario(s, RunOptions{std::nullopt, std::nullopt, std::nullopt, dir.string()});
  CHECK(rep.pass());
  CHECK(rep.exit_status() == 0);
  const auto& m = rep.summary["metrics"];
  CHECK(m["oracle_gap"].get<double>() < 5e-3);
  CHECK(std::abs(m["order"].get<double>() - 1.0) < 0.2);
}

TEST_CASE("command line runs", "[scenario][cli]") {
  auto dir = scratch("cli");

  SECTION("passing scenario") {
    auto r = cli("solve \"" + (kScenarios / "halfline_sweep.yaml").string() + "\" --out \"" + (dir / "a").string() +
                     "\"",
                 dir / "log");
    CHECK(r.status == 0);
    CHECK_THAT(r.out, ContainsSubstring("PASS check_bounds"));
    CHECK(fs::exists(dir / "a" / "trajectory.dat"));
    CHECK(fs::exists(dir / "a" / "bounds.dat"));
    auto summary = nlohmann::json::parse(slurp(dir / "a" / "summary.json"));
    CHECK(summary["pass"].get<bool>());
    // One header line, then one row per node.
    std::ifstream traj(dir / "a" / "trajectory.dat");
    std::string header;
    std::getline(traj, header);
    CHECK(header == "t x1 v1");
    std::size_t rows = 0;
    for (std::string line; std::getline(traj, line);) ++rows;
    CHECK(rows == 1001);
  }

  SECTION("negative scenario names the failing check") {
    auto r = cli("solve \"" + (kScenarios / "negative" / "envelope_too_small.yaml").string() + "\" --out \"" +
                     (dir / "neg").string() + "\"",
                 dir / "log");
    CHECK(r.status != 0);
    CHECK_THAT(r.out, ContainsSubstring("FAIL check_bounds"));
  }

  SECTION("overrides") {
    auto r = cli("solve \"" + (kScenarios / "galerkin_diagonal.yaml").string() + "\" --steps 200 --dims 2,5,16 --out \"" +
                     (dir / "g").string() + "\"",
                 dir / "log");
    CHECK(r.status == 0);
    auto summary = nlohmann::json::parse(slurp(dir / "g" / "summary.json"));
    CHECK(summary["steps"].get<long long>() == 200);
    CHECK(slurp(dir / "g" / "scenario.yaml").find("dims: [2, 5, 16]") != std::string::npos);
  }

  SECTION("bad arguments") {
    auto unknown = cli("solve \"" + (kScenarios / "constant.yaml").string() + "\" --bogus 1", dir / "log");
    CHECK(unknown.status != 0);
    CHECK_THAT(unknown.out, ContainsSubstring("bogus"));
    CHECK(cli("solve /nonexistent.yaml", dir / "log").status != 0);
    CHECK(cli("solve \"" + (kScenarios / "constant.yaml").string() + "\" --dims 1,x", dir / "log").status != 0);
    CHECK(cli("", dir / "log").status != 0);
  }

  SECTION("deterministic output") {
    for (const char* name : {"double_integrator.yaml", "decaying_kernel.yaml", "union_sweep.yaml"}) {
      auto file = (kScenarios / name).string();
      REQUIRE(cli("solve \"" + file + "\" --out \"" + (dir / "d1").string() + "\"", dir / "log").status == 0);
      REQUIRE(cli("solve \"" + file + "\" --out \"" + (dir / "d2").string() + "\"", dir / "log").status == 0);
      std::size_t compared = 0;
      for (const auto& e : fs::directory_iterator(dir / "d1")) {
        INFO(e.path().filename().string());
        CHECK(slurp(e.path()) == slurp(dir / "d2" / e.path().filename()));
        ++compared;
      }
      CHECK(compared >= 3);
      fs::remove_all(dir / "d1");
      fs::remove_all(dir / "d2");
    }
  }
}
