#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "freqchain/workflow.hpp"

using namespace freqchain;
namespace fs = std::filesystem;

namespace {

Frequency hz(std::int64_t v) { return Frequency::from_hz(v); }

const fs::path kData = FREQCHAIN_DATA_DIR;

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("freqchain_test_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(path_ / name, std::ios::binary) << text;
    return path_ / name;
  }

 private:
  fs::path path_;
};

// Paper scenario with a few edits, written next to a copy of the chain.
fs::path edited_scenario(const TempDir& dir, const std::string& from, const std::string& to) {
  std::string text = read_text_file(kData / "paper.scenario");
  const auto pos = text.find(from);
  EXPECT_NE(pos, std::string::npos) << from;
  if (pos != std::string::npos) text.replace(pos, from.size(), to);
  dir.write("indium.chain", read_text_file(kData / "indium.chain"));
  return dir.write("s.scenario", text);
}

}  // namespace

TEST(Scenario, ShippedScenarioParses) {
  const Scenario sc = load_scenario(kData / "paper.scenario");
  EXPECT_EQ(sc.sessions, 11);
  EXPECT_EQ(sc.scan.spectra, 21);
  EXPECT_EQ(sc.ion.true_center_fB, hz(49'174'925));
  EXPECT_EQ(sc.counter.noise_sigma, Frequency::from_ticks(300'000));
  EXPECT_EQ(sc.slips.probability, 1e-3);
  EXPECT_EQ(sc.reference_sigma_fB, hz(42));
  EXPECT_EQ(sc.reference_sigmas.at("f_HeNe"), hz(10));
  EXPECT_EQ(sc.analysis.attempts_per_step, 16);
  EXPECT_TRUE(fs::exists(sc.chain_file));
}

TEST(Scenario, Errors) {
  const char* bad[] = {
      "[chain]\n",                                           // no chain file
      "file = x\n",                                          // outside a section
      "[chain]\nfile = x\n[comb]\nbogus = 1\n",              // unknown key
      "[chain]\nfile = x\n[comb]\nceo = 1 parsec\n",          // bad frequency
      "[chain]\nfile = x\n[comb]\nslip_probability = 2\n",   // out of range
      "[chain]\nfile = x\n[comb]\ngate_ms = 3\n",            // gate not representable
      "[chain]\nfile = x\n[run]\nsessions = 0\n",
      "[chain]\nfile = x\nfile = y\n",                       // duplicate
      "[chain]\nfile = x\n[analysis]\nweighting = magic\n",
      "[chain]\nfile = x\n[ion]\nb_field = 1 T\n",
  };
  for (const char* text : bad) EXPECT_THROW(parse_scenario(text), ParseError) << text;
  try {
    parse_scenario("[chain]\nfile = x\n\n[scan]\nattempts = lots\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 5);
  }
}

TEST(Scenario, SlipCyclesAndOverrides) {
  const Scenario sc = parse_scenario(
      "[chain]\nfile = c\n[references]\nf_HeNe = 1 THz\n[comb]\nslip_cycles = 2 -3\n[run]\nseed = 7\n");
  ASSERT_EQ(sc.slips.magnitudes.size(), 2u);
  EXPECT_EQ(sc.slips.magnitudes[1].first, -3);
  EXPECT_EQ(sc.reference_values.at("f_HeNe"), hz(1'000'000'000'000));
  EXPECT_EQ(sc.seed, 7u);
}

TEST(Workflow, EquationInputsRejectUnknownOverrides) {
  Scenario sc = load_scenario(kData / "paper.scenario");
  const auto eq = load_chain(sc.chain_file).equation;
  sc.reference_values["nope"] = hz(1);
  EXPECT_THROW(equation_inputs(eq, sc), ConfigError);
}

TEST(Cli, CompileShippedChain) {
  std::ostringstream out, err;
  EXPECT_EQ(cmd_compile(kData / "indium.chain", false, out, err), kExitOk);
  EXPECT_NE(out.str().find("comb.f_rep,-1929140,1"), std::string::npos);
  EXPECT_NE(out.str().find("f_HeNe,16,1"), std::string::npos);
  EXPECT_NE(out.str().find("f_B,-4,1"), std::string::npos);
  EXPECT_NE(out.str().find("f_LO,-1,1"), std::string::npos);
  std::ostringstream js;
  EXPECT_EQ(cmd_compile(kData / "indium.chain", true, js, err), kExitOk);
  const auto j = nlohmann::json::parse(js.str());
  EXPECT_EQ(j["target"], "f_In");
}

TEST(Cli, CompileErrors) {
  TempDir dir("compile");
  std::ostringstream out, err;
  EXPECT_EQ(cmd_compile(dir.write("bad.chain", "osc a\nlock a = 2 *\ntarget a\n"), false, out, err), kExitConfig);
  EXPECT_NE(err.str().find("line 2"), std::string::npos) << err.str();
  std::ostringstream err2;
  EXPECT_EQ(cmd_compile(dir.write("free.chain", "ref r 1 Hz sigma 0 Hz\nosc a\nosc t\nlock t = 2 * a\ntarget t\n"),
                        false, out, err2),
            kExitConfig);
  EXPECT_NE(err2.str().find("underdetermined"), std::string::npos) << err2.str();
  EXPECT_EQ(cmd_compile(dir.path() / "missing.chain", false, out, err), kExitConfig);
}

TEST(Cli, SimulateWritesOneFilePairPerSession) {
  TempDir dir("simulate");
  RunOverrides o;
  o.out = dir.path() / "rec";
  std::ostringstream out, err;
  ASSERT_EQ(cmd_simulate(kData / "paper.scenario", o, out, err), kExitOk) << err.str();
  int beats = 0, exc = 0;
  for (const auto& e : fs::directory_iterator(dir.path() / "rec")) {
    const auto name = e.path().filename().string();
    beats += name.ends_with("_beats.csv");
    exc += name.ends_with("_excitations.csv");
  }
  EXPECT_EQ(beats, 11);
  EXPECT_EQ(exc, 11);
}

TEST(Cli, AnalyzeReportsThePaperBudget) {
  TempDir dir("analyze");
  RunOverrides o;
  o.out = dir.path() / "rec";
  std::ostringstream out, err;
  ASSERT_EQ(cmd_simulate(kData / "paper.scenario", o, out, err), kExitOk);
  RunOverrides a;
  a.out = dir.path() / "report";
  ASSERT_EQ(cmd_analyze(kData / "paper.scenario", dir.path() / "rec", a, true, out, err), kExitOk) << err.str();
  const auto j = nlohmann::json::parse(read_text_file(dir.path() / "report" / "report.json"));
  EXPECT_EQ(j["f_target"]["sigma"], "232 Hz");
  EXPECT_EQ(j["sessions"].size(), 11u);
  const Frequency value = parse_frequency(j["f_target"]["value"].get<std::string>());
  EXPECT_LE(abs(value - hz(1'267'402'452'899'916)), hz(232));
  EXPECT_TRUE(fs::exists(dir.path() / "report" / "fig2b.csv"));
  EXPECT_TRUE(fs::exists(dir.path() / "report" / "fig2a_session_01.csv"));
  const std::string fig = read_text_file(dir.path() / "report" / "fig2a_session_01.csv");
  EXPECT_EQ(fig.substr(0, fig.find('\n')), "bin_center_hz,trials,jumps,probability,sigma,fit");
}

TEST(Cli, AnalyzeWithoutDataExitsThree) {
  TempDir dir("nodata");
  std::ostringstream out, err;
  RunOverrides o;
  o.out = dir.path() / "report";
  EXPECT_EQ(cmd_analyze(kData / "paper.scenario", dir.path(), o, true, out, err), kExitData);
  EXPECT_NE(err.str().find("no data"), std::string::npos);
  EXPECT_EQ(cmd_analyze(kData / "paper.scenario", dir.path() / "absent", o, true, out, err), kExitData);
}

TEST(Cli, ZeroPeakIsADegenerateDataError) {
  TempDir dir("zeropeak");
  const fs::path sc = edited_scenario(dir, "peak = 0.4", "peak = 0");
  RunOverrides o;
  o.out = dir.path() / "rec";
  o.sessions = 2;
  std::ostringstream out, err;
  ASSERT_EQ(cmd_simulate(sc, o, out, err), kExitOk) << err.str();
  EXPECT_NE(out.str().find("(0 quantum jumps)"), std::string::npos) << out.str();
  o.out = dir.path() / "report";
  EXPECT_EQ(cmd_analyze(sc, dir.path() / "rec", o, true, out, err), kExitData);
  EXPECT_NE(err.str().find("no excitations"), std::string::npos) << err.str();
}

TEST(Cli, ReproducePrintsTheVerdict) {
  std::ostringstream out, err;
  EXPECT_EQ(cmd_reproduce(kData / "paper.scenario", {}, out, err), kExitOk) << out.str() << err.str();
  EXPECT_NE(out.str().find("f_In+ = 1 267 402 452 899.92 kHz (paper) / recovered within budget: PASS"),
            std::string::npos)
      << out.str();
}

TEST(Cli, ReproduceVerdictStableAcrossSeeds) {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    std::ostringstream out, err;
    RunOverrides o;
    o.seed = seed;
    EXPECT_EQ(cmd_reproduce(kData / "paper.scenario", o, out, err), kExitOk) << out.str();
  }
}

TEST(Cli, ReproduceWithCorruptChainFails) {
  TempDir dir("corrupt");
  const fs::path sc = edited_scenario(dir, "file = indium.chain", "file = broken.chain");
  dir.write("broken.chain", "osc f_In\nlock f_In = 4 * \ntarget f_In\n");
  std::ostringstream out, err;
  EXPECT_EQ(cmd_reproduce(sc, {}, out, err), kExitConfig);
  EXPECT_EQ(out.str().rfind("FAIL", 0), 0u) << out.str();
  EXPECT_NE(err.str().find("line 2"), std::string::npos);
}

TEST(Workflow, CombOffsetDoesNotChangeTheResult) {
  Scenario sc = load_scenario(kData / "paper.scenario");
  sc.sessions = 2;
  const auto eq = load_chain(sc.chain_file).equation;
  const auto base = analyze(sc, eq, simulate_all(sc, eq));
  for (const std::int64_t ceo : {20'000'000LL, -20'000'000LL}) {
    sc.comb_ceo = hz(ceo);
    const auto r = analyze(sc, eq, simulate_all(sc, eq));
    EXPECT_EQ(r.final.f_target, base.final.f_target);
  }
}

TEST(Workflow, RepJitterMovesTheBeatNotTheTarget) {
  Scenario sc = load_scenario(kData / "paper.scenario");
  sc.sessions = 1;
  sc.comb_rep_jitter = Frequency::from_ticks(1);  // 1 uHz of f_rep moves f_B by 482 285 uHz
  const auto eq = load_chain(sc.chain_file).equation;
  const auto jittered = simulate_session(sc, eq, 1);
  sc.comb_rep_jitter = Frequency{};
  const auto clean = simulate_session(sc, eq, 1);
  EXPECT_EQ(jittered.excitations, clean.excitations);
  bool moved = false;
  for (std::size_t i = 0; i < clean.beats.readings.size(); ++i)
    moved = moved || jittered.beats.readings[i].value != clean.beats.readings[i].value;
  EXPECT_TRUE(moved);
}

// Each session's center lies within 3 of its own fit sigmas of the injected
// line center for nearly every seed.
TEST(Workflow, PerSessionCoverage) {
  Scenario sc = load_scenario(kData / "paper.scenario");
  const auto eq = load_chain(sc.chain_file).equation;
  int inside = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    sc.seed = 5000 + seed;
    auto s = simulate_session(sc, eq, 1);
    const auto r = analyze_session(1, s.beats.readings, s.beats.monitor_deviations, s.excitations, s.spectra, sc.analysis);
    if (abs(r.center_fB - effective_center(sc.ion)) <= r.stat_sigma * 3) ++inside;
  }
  EXPECT_GE(inside, 99);
}

TEST(Workflow, SessionsIndependentOfThreading) {
  Scenario sc = load_scenario(kData / "paper.scenario");
  sc.sessions = 4;
  const auto eq = load_chain(sc.chain_file).equation;
  const auto all = simulate_all(sc, eq);
  const auto third = simulate_session(sc, eq, 3);
  EXPECT_EQ(all[2].excitations, third.excitations);
  EXPECT_EQ(all[2].beats.monitor_deviations, third.beats.monitor_deviations);
}
