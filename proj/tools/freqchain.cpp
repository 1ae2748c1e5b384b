// freqchain: compile frequency chains, simulate and analyze measurement
// campaigns, and check the results.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "freqchain/acceptance.hpp"
#include "freqchain/workflow.hpp"

namespace fs = std::filesystem;
using namespace freqchain;

namespace {

fs::path shipped(const std::string& name) {
#ifdef FREQCHAIN_DATA_DIR
  const fs::path p = fs::path(FREQCHAIN_DATA_DIR) / name;
  if (fs::exists(p)) return p;
#endif
  return fs::path("data") / name;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exact frequency-chain bookkeeping and quantum-jump line-center analysis"};
  app.require_subcommand(1);

  std::string chain_path;
  std::string scenario_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> sessions;
  std::optional<std::string> out_dir;
  std::string format = "json";

  auto add_run_options = [&](CLI::App* sub) {
    sub->add_option("--scenario", scenario_path, "Scenario file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Override the scenario seed");
    sub->add_option("--sessions", sessions, "Override the number of sessions")->check(CLI::PositiveNumber);
    sub->add_option("--out", out_dir, "Output directory");
  };

  auto* compile = app.add_subcommand("compile", "Compile a chain file to its measurement equation");
  compile->add_option("--chain", chain_path, "Chain file")->required();
  compile->add_option("--format", format, "Output format")->check(CLI::IsMember({"csv", "json"}));

  auto* simulate = app.add_subcommand("simulate", "Simulate counter and quantum-jump records");
  add_run_options(simulate);

  std::string records_dir;
  auto* analyze = app.add_subcommand("analyze", "Analyze simulated or recorded sessions");
  add_run_options(analyze);
  analyze->add_option("--records", records_dir, "Directory with session_NN_*.csv files (default: scenario output)");
  analyze->add_option("--format", format, "Report format")->check(CLI::IsMember({"csv", "json"}));

  auto* reproduce = app.add_subcommand("reproduce", "Evaluate the shipped chain and recover it from simulation");
  add_run_options(reproduce);

  bool quick = false;
  auto* verify = app.add_subcommand("verify", "Run the acceptance checks");
  verify->add_flag("--quick", quick, "Use 20 campaigns instead of 100 for the Monte Carlo check");

  CLI11_PARSE(app, argc, argv);

  const fs::path scenario = scenario_path.empty() ? shipped("paper.scenario") : fs::path(scenario_path);
  RunOverrides o;
  o.seed = seed;
  o.sessions = sessions;
  if (out_dir) o.out = fs::path(*out_dir);
  const bool json = format == "json";

  if (*compile) return cmd_compile(chain_path, json, std::cout, std::cerr);
  if (*simulate) return cmd_simulate(scenario, o, std::cout, std::cerr);
  if (*analyze) {
    fs::path records = records_dir;
    if (records.empty()) {
      try {
        records = load_scenario_with(scenario, o).output_dir;
      } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
      }
    }
    return cmd_analyze(scenario, records, o, json, std::cout, std::cerr);
  }
  if (*reproduce) return cmd_reproduce(scenario, o, std::cout, std::cerr);
  if (*verify) {
    AcceptanceConfig cfg;
    cfg.chain_file = shipped("indium.chain");
    cfg.scenario_file = shipped("paper.scenario");
    if (quick) cfg.monte_carlo_runs = 20;
    const bool ok = run_acceptance(cfg, std::cout);
    return ok ? kExitOk : kExitAcceptance;
  }
  return kExitOk;
}
