// Command-line front end: inclusol solve <scenario.yaml> [--steps N] [--dims a,b,c] [--seed k] [--out dir]

#include "inclusol/runner.hpp"

#include "CLI11.hpp"

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Integro-differential inclusion and sweeping-process solver"};
  app.require_subcommand(1);
  app.allow_extras(false);

  auto* solve = app.add_subcommand("solve", "Run a scenario file");
  std::string file;
  long long steps = 0;
  std::string dims;
  std::uint64_t seed = 0;
  std::string out;
  solve->add_option("file", file, "Scenario file")->required()->check(CLI::ExistingFile);
  auto* steps_opt = solve->add_option("--steps", steps, "Override the number of time steps")->check(CLI::PositiveNumber);
  auto* dims_opt = solve->add_option("--dims", dims, "Comma-separated Galerkin ranks");
  auto* seed_opt = solve->add_option("--seed", seed, "Seed for multi-start optimization");
  solve->add_option("--out", out, "Output directory (default: scenario output, then $INCLUSOL_OUT/<name>)");

  CLI11_PARSE(app, argc, argv);

  inclusol::RunOptions opt;
  if (*steps_opt) opt.steps = steps;
  if (*seed_opt) opt.seed = seed;
  opt.output = out;
  if (*dims_opt) {
    std::vector<long long> ranks;
    std::stringstream ss(dims);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        std::size_t used = 0;
        ranks.push_back(std::stoll(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        std::cerr << "error: --dims expects integers, got '" << item << "'\n";
        return 2;
      }
    }
    opt.dims = ranks;
  }

  inclusol::Scenario scenario;
  try {
    scenario = inclusol::load_scenario(file);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  inclusol::RunReport report = inclusol::run_scenario(scenario, opt);
  for (const auto& c : report.checks) {
    std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
  }
  std::cout << "output: " << report.output_dir << "\n";
  if (!report.pass()) {
    std::cerr << "failed checks:";
    for (const auto& name : report.failed()) std::cerr << " " << name;
    std::cerr << "\n";
  }
  return report.exit_status();
}
