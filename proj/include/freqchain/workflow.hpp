#pragma once

// compile -> simulate -> analyze -> report, as used by the freqchain tool.

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <ostream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "freqchain/analysis.hpp"
#include "freqchain/chainspec.hpp"
#include "freqchain/combsim.hpp"
#include "freqchain/exactfreq.hpp"
#include "freqchain/ionsim.hpp"
#include "freqchain/rng.hpp"
#include "freqchain/scenario.hpp"

namespace freqchain {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,      // chain or scenario error
  kExitData = 3,        // missing or unusable data
  kExitAcceptance = 4,  // a check failed
};

struct LoadedChain {
  ChainSpec spec;
  MeasurementEquation equation;
};

inline LoadedChain load_chain(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  LoadedChain c;
  c.spec = parse_chain(text);
  c.equation = compile_equation(c.spec);
  return c;
}

// Values and sigmas for every non-counted symbol: the chain file's, then the
// scenario's overrides. Comb offsets take the scenario's f_ceo.
struct EquationInputs {
  Assignment values;
  Assignment sigmas;
};

inline EquationInputs equation_inputs(const MeasurementEquation& eq, const Scenario& sc) {
  EquationInputs in{nominal_values(eq), nominal_sigmas(eq)};
  for (const auto& [sym, info] : eq.symbols) {
    if (sym.size() > 6 && sym.compare(sym.size() - 6, 6, ".f_ceo") == 0) in.values[sym] = sc.comb_ceo;
  }
  for (const auto& [sym, v] : sc.reference_values) {
    if (!eq.symbols.count(sym)) throw ConfigError("scenario overrides unknown symbol '" + sym + "'");
    in.values[sym] = v;
  }
  for (const auto& [sym, s] : sc.reference_sigmas) {
    if (!eq.symbols.count(sym)) throw ConfigError("scenario sets sigma of unknown symbol '" + sym + "'");
    in.sigmas[sym] = s;
  }
  in.values.erase(sc.counted_symbol);
  in.sigmas.erase(sc.counted_symbol);
  return in;
}

// ---------------------------------------------------------------------------
// Simulation

struct SimulatedSession {
  int index = 0;  // 1-based
  BeatSeries beats;
  std::vector<ExcitationRecord> excitations;
  int spectra = 0;
};

// Name of the comb whose repetition rate enters the equation, if any.
inline std::optional<std::string> equation_comb(const MeasurementEquation& eq) {
  for (const auto& [sym, c] : eq.terms) {
    if (!c.is_zero() && sym.size() > 6 && sym.compare(sym.size() - 6, 6, ".f_rep") == 0) return sym.substr(0, sym.size() - 6);
  }
  return std::nullopt;
}

inline SimulatedSession simulate_session(const Scenario& sc, const MeasurementEquation& eq, int index) {
  SimulatedSession s;
  s.index = index;
  s.spectra = sc.scan.spectra;
  Rng ion_rng(sc.seed, StreamTag::kIonSession, static_cast<std::uint64_t>(index));
  s.excitations = run_session(sc.ion, sc.scan, ion_rng);

  std::vector<Frequency> beats = gate_setpoints(s.excitations, sc.scan.attempts_per_step);
  if (sc.comb_rep_jitter > Frequency{}) {
    // A repetition-rate excursion moves the counted beat while the clock
    // laser stays put: d(f_B) = -(c_rep / c_B) d(f_rep).
    if (const auto comb = equation_comb(eq)) {
      const Ratio factor = -(eq.coefficient(comb_rep_symbol(*comb)) / eq.coefficient(sc.counted_symbol));
      const CombState state(eq.symbols.at(comb_rep_symbol(*comb)).nominal.value, sc.comb_ceo, sc.comb_rep_jitter);
      Rng comb_rng(sc.seed, StreamTag::kCombJitter, static_cast<std::uint64_t>(index));
      for (auto& b : beats) b += scale_exact(state.sample_rep(comb_rng) - state.f_rep, factor);
    }
  }
  Rng beat_rng(sc.seed, StreamTag::kBeatCounter, static_cast<std::uint64_t>(index));
  s.beats = simulate_beat_series(beats, sc.counter, sc.slips, beat_rng);
  return s;
}

inline std::vector<SimulatedSession> simulate_all(const Scenario& sc, const MeasurementEquation& eq) {
  std::vector<std::future<SimulatedSession>> jobs;
  for (int i = 1; i <= sc.sessions; ++i) {
    jobs.push_back(std::async(std::launch::async, [&sc, &eq, i] { return simulate_session(sc, eq, i); }));
  }
  std::vector<SimulatedSession> out;
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

inline std::string session_file_stem(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "session_%02d", index);
  return buf;
}

inline std::vector<std::filesystem::path> write_simulation(const std::filesystem::path& dir,
                                                           std::span<const SimulatedSession> sessions) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (const auto& s : sessions) {
    const auto beats = dir / (session_file_stem(s.index) + "_beats.csv");
    const auto exc = dir / (session_file_stem(s.index) + "_excitations.csv");
    {
      std::ofstream os(beats, std::ios::binary);
      write_beat_csv(os, s.beats.readings, s.beats.monitor_deviations);
      if (!os) throw ConfigError("cannot write '" + beats.string() + "'");
    }
    {
      std::ofstream os(exc, std::ios::binary);
      write_excitation_csv(os, s.excitations);
      if (!os) throw ConfigError("cannot write '" + exc.string() + "'");
    }
    written.push_back(beats);
    written.push_back(exc);
  }
  return written;
}

// Reads every session_NN_{beats,excitations}.csv pair in a directory.
inline std::vector<SimulatedSession> read_simulation(const std::filesystem::path& dir, const Scenario& sc) {
  if (!std::filesystem::is_directory(dir)) throw DataError("no data: '" + dir.string() + "' is not a directory");
  const std::regex pattern(R"(session_(\d+)_beats\.csv)");
  std::vector<int> indices;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) indices.push_back(std::stoi(m[1]));
  }
  std::sort(indices.begin(), indices.end());
  if (indices.empty()) throw DataError("no data: no session record files in '" + dir.string() + "'");
  std::vector<SimulatedSession> out;
  for (int idx : indices) {
    SimulatedSession s;
    s.index = idx;
    s.spectra = sc.scan.spectra;
    const auto beats = dir / (session_file_stem(idx) + "_beats.csv");
    const auto exc = dir / (session_file_stem(idx) + "_excitations.csv");
    try {
      std::ifstream b(beats, std::ios::binary);
      s.beats = read_beat_csv(b, sc.counter.gate);
      std::ifstream e(exc, std::ios::binary);
      if (!e) throw DataError("missing '" + exc.string() + "'");
      s.excitations = read_excitation_csv(e);
    } catch (const ParseError& e) {
      throw DataError(beats.parent_path().string() + "/" + session_file_stem(idx) + ": " + e.what());
    }
    out.push_back(std::move(s));
  }
  return out;
}

// Adds delta to every beat label in the records (readings and setpoints).
inline void shift_records(std::span<SimulatedSession> sessions, Frequency delta) {
  for (auto& s : sessions) {
    for (auto& r : s.beats.readings) r.value += delta;
    for (auto& e : s.excitations) e.fB_setpoint += delta;
  }
}

// ---------------------------------------------------------------------------
// Analysis

struct AnalysisReport {
  MeasurementEquation equation;
  std::vector<SessionResult> sessions;
  FinalResult final;
  Frequency injected_target;   // equation at the injected line center, B = 0
  Frequency expected_target;   // same, including the simulated Zeeman shift
};

inline AnalysisReport analyze(const Scenario& sc, const MeasurementEquation& eq,
                              std::vector<SimulatedSession> sessions) {
  if (sessions.empty()) throw DataError("no data");
  std::vector<std::future<SessionResult>> jobs;
  for (auto& s : sessions) {
    jobs.push_back(std::async(std::launch::async, [&sc, &s] {
      return analyze_session(s.index, s.beats.readings, s.beats.monitor_deviations, s.excitations, s.spectra, sc.analysis);
    }));
  }
  AnalysisReport rep;
  rep.equation = eq;
  for (auto& j : jobs) rep.sessions.push_back(j.get());
  const EquationInputs in = equation_inputs(eq, sc);
  const SessionAverage avg = average_sessions(rep.sessions, sc.reference_sigma_fB);
  rep.final = compute_final(eq, avg, sc.counted_symbol, in.values, in.sigmas);

  Assignment truth = in.values;
  truth[sc.counted_symbol] = sc.ion.true_center_fB;
  rep.injected_target = evaluate(eq, truth);
  truth[sc.counted_symbol] = effective_center(sc.ion);
  rep.expected_target = evaluate(eq, truth);
  return rep;
}

// ---------------------------------------------------------------------------
// Reports

inline nlohmann::ordered_json equation_json(const MeasurementEquation& eq) {
  nlohmann::ordered_json terms = nlohmann::ordered_json::array();
  for (const auto& [sym, c] : eq.terms) {
    const auto it = eq.symbols.find(sym);
    nlohmann::ordered_json t;
    t["symbol"] = sym;
    t["numerator"] = detail::to_string(c.num());
    t["denominator"] = detail::to_string(c.den());
    t["kind"] = it == eq.symbols.end() ? "?" : std::string(to_string(it->second.kind));
    t["sigma"] = format_frequency(it == eq.symbols.end() ? Frequency{} : it->second.nominal.sigma);
    terms.push_back(t);
  }
  nlohmann::ordered_json j;
  j["target"] = eq.target;
  j["equation"] = describe(eq);
  j["terms"] = terms;
  return j;
}

inline void write_equation(std::ostream& os, const MeasurementEquation& eq, bool json) {
  if (json) {
    os << equation_json(eq).dump(2) << '\n';
    return;
  }
  os << "symbol,numerator,denominator,sigma_hz\n";
  for (const auto& [sym, c] : eq.terms) {
    const auto it = eq.symbols.find(sym);
    os << sym << ',' << detail::to_string(c.num()) << ',' << detail::to_string(c.den()) << ','
       << format_hz_fixed(it == eq.symbols.end() ? Frequency{} : it->second.nominal.sigma) << '\n';
  }
}

inline nlohmann::ordered_json report_json(const AnalysisReport& rep) {
  nlohmann::ordered_json sessions = nlohmann::ordered_json::array();
  for (const auto& s : rep.sessions) {
    nlohmann::ordered_json j;
    j["session"] = s.session_id;
    j["center_fB"] = format_frequency(s.center_fB);
    j["stat_sigma"] = format_frequency(s.stat_sigma);
    j["width_sigma"] = format_frequency(s.fit.width_sigma);
    j["amplitude"] = s.fit.amplitude;
    j["chi2"] = s.fit.chi2;
    j["dof"] = s.fit.dof;
    j["iterations"] = s.fit.iterations;
    j["jumps"] = s.jump_count;
    j["spectra"] = s.spectra_count;
    j["bins"] = s.histogram.bins.size();
    j["dropped_gates"] = s.dropped_gates;
    sessions.push_back(j);
  }
  const auto& f = rep.final;
  nlohmann::ordered_json budget = nlohmann::ordered_json::array();
  for (const auto& b : f.budget) {
    nlohmann::ordered_json j;
    j["symbol"] = b.symbol;
    j["coefficient"] = b.coefficient.to_string();
    j["sigma"] = format_frequency(b.sigma);
    j["contribution"] = format_frequency(b.contribution);
    budget.push_back(j);
  }
  nlohmann::ordered_json j;
  j["sessions"] = sessions;
  j["mean_fB"] = {{"value", format_frequency(f.mean_fB.mean.value)},
                  {"sigma", format_frequency(f.mean_fB.mean.sigma)},
                  {"sem", format_frequency(f.mean_fB.sem)},
                  {"stat_sigma", format_frequency(f.mean_fB.stat_sigma)}};
  j["equation"] = equation_json(rep.equation);
  j["f_target"] = {{"value", format_frequency(f.f_target.value)},
                   {"sigma", format_frequency(f.f_target.sigma)},
                   {"value_khz", format_scaled(f.f_target.value, "kHz", 2)},
                   {"sigma_khz", format_scaled(f.f_target.sigma, "kHz", 2)},
                   {"stat_sigma", format_frequency(f.target_stat_sigma)}};
  j["budget"] = budget;
  j["fractional_uncertainty"] = f.fractional_uncertainty;
  j["injected_target"] = format_frequency(rep.injected_target);
  j["expected_target"] = format_frequency(rep.expected_target);
  return j;
}

inline void write_report_csv(std::ostream& os, const AnalysisReport& rep) {
  const auto& f = rep.final;
  os << "key,value\n";
  for (const auto& s : rep.sessions) {
    const std::string p = "session_" + std::to_string(s.session_id) + ".";
    os << p << "center_fB_hz," << format_hz_fixed(s.center_fB) << '\n';
    os << p << "stat_sigma_hz," << format_hz_fixed(s.stat_sigma) << '\n';
    os << p << "jumps," << s.jump_count << '\n';
  }
  os << "mean_fB_hz," << format_hz_fixed(f.mean_fB.mean.value) << '\n';
  os << "mean_fB_sigma_hz," << format_hz_fixed(f.mean_fB.mean.sigma) << '\n';
  os << "mean_fB_sem_hz," << format_hz_fixed(f.mean_fB.sem) << '\n';
  os << "f_target_hz," << format_hz_fixed(f.f_target.value) << '\n';
  os << "f_target_khz," << format_scaled(f.f_target.value, "kHz", 2) << '\n';
  os << "f_target_sigma_hz," << format_hz_fixed(f.f_target.sigma) << '\n';
  os << "f_target_stat_sigma_hz," << format_hz_fixed(f.target_stat_sigma) << '\n';
  for (const auto& b : f.budget) os << "budget." << b.symbol << "_hz," << format_hz_fixed(b.contribution) << '\n';
  std::ostringstream frac;
  frac << std::setprecision(6) << f.fractional_uncertainty;
  os << "fractional_uncertainty," << frac.str() << '\n';
}

// Excitation spectrum with fit curve, one file per session.
inline void write_fig2a_csv(std::ostream& os, const SessionResult& s) {
  os << "bin_center_hz,trials,jumps,probability,sigma,fit\n";
  for (const auto& b : s.histogram.bins) {
    char buf[96];
    std::snprintf(buf, sizeof buf, ",%.10g,%.10g,%.10g", b.probability, b.sigma, s.fit(b.center));
    os << format_hz_fixed(b.center) << ',' << b.trials << ',' << b.jumps << buf << '\n';
  }
}

// Line center per session.
inline void write_fig2b_csv(std::ostream& os, const AnalysisReport& rep) {
  os << "session,center_hz,stat_sigma_hz,error_bar_hz\n";
  for (const auto& s : rep.sessions) {
    os << s.session_id << ',' << format_hz_fixed(s.center_fB) << ',' << format_hz_fixed(s.stat_sigma) << ','
       << format_hz_fixed(rep.final.mean_fB.mean.sigma) << '\n';
  }
}

inline void write_report_files(const std::filesystem::path& dir, const AnalysisReport& rep, bool json) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / (json ? "report.json" : "report.csv"), std::ios::binary);
    if (json) {
      os << report_json(rep).dump(2) << '\n';
    } else {
      write_report_csv(os, rep);
    }
    if (!os) throw ConfigError("cannot write report in '" + dir.string() + "'");
  }
  for (const auto& s : rep.sessions) {
    std::ofstream os(dir / ("fig2a_" + session_file_stem(s.session_id) + ".csv"), std::ios::binary);
    write_fig2a_csv(os, s);
  }
  std::ofstream os(dir / "fig2b.csv", std::ios::binary);
  write_fig2b_csv(os, rep);
}

// ---------------------------------------------------------------------------
// Commands. Each returns a process exit code and prints diagnostics to err.

struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> sessions;
  std::optional<std::filesystem::path> out;
};

inline Scenario load_scenario_with(const std::filesystem::path& path, const RunOverrides& o) {
  Scenario sc = load_scenario(path);
  if (o.seed) sc.seed = *o.seed;
  if (o.sessions) {
    if (*o.sessions < 1) throw ConfigError("--sessions must be >= 1");
    sc.sessions = *o.sessions;
  }
  if (o.out) sc.output_dir = *o.out;
  return sc;
}

template <typename F>
int run_guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

inline int cmd_compile(const std::filesystem::path& chain, bool json, std::ostream& out, std::ostream& err) {
  return run_guarded(err, [&] {
    const auto loaded = load_chain(chain);
    write_equation(out, loaded.equation, json);
    return kExitOk;
  });
}

inline int cmd_simulate(const std::filesystem::path& scenario, const RunOverrides& o, std::ostream& out,
                        std::ostream& err) {
  return run_guarded(err, [&] {
    const Scenario sc = load_scenario_with(scenario, o);
    const auto chain = load_chain(sc.chain_file);
    const auto sessions = simulate_all(sc, chain.equation);
    const auto files = write_simulation(sc.output_dir, sessions);
    std::int64_t jumps = 0;
    for (const auto& s : sessions) {
      jumps += std::count_if(s.excitations.begin(), s.excitations.end(), [](const ExcitationRecord& r) { return r.jumped; });
    }
    out << "simulated " << sessions.size() << " sessions (" << jumps << " quantum jumps), wrote " << files.size()
        << " files to " << sc.output_dir.string() << '\n';
    return kExitOk;
  });
}

inline int cmd_analyze(const std::filesystem::path& scenario, const std::filesystem::path& records,
                       const RunOverrides& o, bool json, std::ostream& out, std::ostream& err) {
  return run_guarded(err, [&] {
    const Scenario sc = load_scenario_with(scenario, o);
    const auto chain = load_chain(sc.chain_file);
    auto sessions = read_simulation(records, sc);
    const AnalysisReport rep = analyze(sc, chain.equation, std::move(sessions));
    write_report_files(sc.output_dir, rep, json);
    out << "mean f_B = " << format_frequency(rep.final.mean_fB.mean.value) << " ("
        << format_frequency(rep.final.mean_fB.mean.sigma) << ")\n"
        << chain.equation.target << " = " << format_scaled(rep.final.f_target.value, "kHz", 2, true) << " ("
        << format_scaled(rep.final.f_target.sigma, "kHz", 2) << ")\n";
    return kExitOk;
  });
}

// Published values the reproduction is checked against.
struct PaperValues {
  Frequency f_target = parse_frequency("1267402452899.92 kHz");
  Frequency sigma = parse_frequency("0.23 kHz");
  Frequency mean_fB = Frequency::from_hz(49'174'925);
  Frequency mean_fB_sigma = Frequency::from_hz(42);
  double fractional_low = 1.80e-13;
  double fractional_high = 1.86e-13;
};

inline int cmd_reproduce(const std::filesystem::path& scenario, const RunOverrides& o, std::ostream& out,
                         std::ostream& err) {
  const PaperValues paper;
  bool pass = true;
  auto verdict = [&](bool ok) {
    pass = pass && ok;
    return ok ? "PASS" : "FAIL";
  };
  LoadedChain chain;
  Scenario sc;
  try {
    sc = load_scenario_with(scenario, o);
    chain = load_chain(sc.chain_file);
  } catch (const Error& e) {
    out << "FAIL: " << e.what() << '\n';
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return run_guarded(err, [&] {
    const auto& eq = chain.equation;
    const EquationInputs in = equation_inputs(eq, sc);

    // Published inputs through the compiled equation.
    const FinalResult exact = compute_final(eq, UncertainFrequency(paper.mean_fB, paper.mean_fB_sigma),
                                            sc.counted_symbol, in.values, in.sigmas);
    const std::string shown = format_scaled(exact.f_target.value, "kHz", 2, true);
    const std::string shown_sigma = format_scaled(exact.f_target.sigma, "kHz", 2);
    out << "equation:  " << describe(eq) << '\n';
    out << "published inputs -> " << eq.target << " = " << shown << " (" << shown_sigma << ")  ["
        << format_frequency(exact.f_target.value) << ", sigma " << format_frequency(exact.f_target.sigma) << "]  "
        << verdict(shown == format_scaled(paper.f_target, "kHz", 2, true) &&
                   shown_sigma == format_scaled(paper.sigma, "kHz", 2))
        << '\n';
    char frac[64];
    std::snprintf(frac, sizeof frac, "%.3e", exact.fractional_uncertainty);
    out << "fractional uncertainty = " << frac << "  "
        << verdict(exact.fractional_uncertainty >= paper.fractional_low &&
                   exact.fractional_uncertainty <= paper.fractional_high)
        << '\n';

    // Simulated measurement with the published values injected.
    const AnalysisReport rep = analyze(sc, eq, simulate_all(sc, eq));
    std::int64_t jumps = 0;
    for (const auto& s : rep.sessions) jumps += s.jump_count;
    const Frequency diff = rep.final.f_target.value - paper.f_target;
    out << "simulated " << rep.sessions.size() << " sessions, " << jumps / static_cast<std::int64_t>(rep.sessions.size())
        << " jumps/session, seed " << sc.seed << '\n';
    out << "mean f_B = " << format_frequency(rep.final.mean_fB.mean.value) << " (stat "
        << format_frequency(rep.final.mean_fB.stat_sigma) << ", sem " << format_frequency(rep.final.mean_fB.sem)
        << ")\n";
    out << "recovered " << eq.target << " = " << format_scaled(rep.final.f_target.value, "kHz", 2, true) << " ("
        << format_scaled(rep.final.f_target.sigma, "kHz", 2) << "), offset from published "
        << format_frequency(diff) << ", stat sigma " << format_frequency(rep.final.target_stat_sigma) << '\n';
    const bool within = abs(diff) <= rep.final.f_target.sigma;
    out << "f_In+ = " << format_scaled(paper.f_target, "kHz", 2, true)
        << " (paper) / recovered within budget: " << verdict(within) << '\n';
    return pass ? kExitOk : kExitAcceptance;
  });
}

}  // namespace freqchain
