#pragma once

// Scenario files: flat "key = value" lines grouped under [section] headers,
// '#' comments, frequencies in the canonical decimal format.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "freqchain/analysis.hpp"
#include "freqchain/chainspec.hpp"
#include "freqchain/combsim.hpp"
#include "freqchain/error.hpp"
#include "freqchain/exactfreq.hpp"
#include "freqchain/ionsim.hpp"

namespace freqchain {

struct Scenario {
  std::filesystem::path chain_file;
  std::string counted_symbol = "f_B";
  // Overrides of chain-file values and sigmas, by symbol.
  Assignment reference_values;
  Assignment reference_sigmas;

  Frequency comb_ceo;
  Frequency comb_rep_jitter;
  CounterModel counter;
  SlipProcess slips;

  IonConfig ion;
  ScanProtocol scan;
  AnalysisOptions analysis;
  Frequency reference_sigma_fB = Frequency::from_hz(42);

  int sessions = 11;
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "out";
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

class KeyValueFile {
 public:
  struct Entry {
    std::string value;
    int line;
  };

  explicit KeyValueFile(std::string_view text) {
    std::istringstream is{std::string(text)};
    std::string raw;
    std::string section;
    int line = 0;
    while (std::getline(is, raw)) {
      ++line;
      const auto hash = raw.find('#');
      const std::string s = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']') throw ParseError("unterminated section header", line, 1);
        section = trim(s.substr(1, s.size() - 2));
        if (section.empty()) throw ParseError("empty section name", line, 1);
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ParseError("expected 'key = value'", line, 1);
      const std::string key = trim(s.substr(0, eq));
      if (key.empty()) throw ParseError("empty key", line, 1);
      if (section.empty()) throw ParseError("key '" + key + "' outside of any [section]", line, 1);
      const std::string full = section + "." + key;
      if (entries_.count(full)) throw ParseError("duplicate key '" + full + "'", line, 1);
      entries_[full] = {trim(s.substr(eq + 1)), line};
    }
  }

  std::optional<Entry> take(const std::string& key) {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    used_.insert(key);
    return it->second;
  }

  // Keys of a section not yet consumed.
  std::vector<std::string> remaining(std::string_view section) const {
    std::vector<std::string> out;
    const std::string prefix = std::string(section) + ".";
    for (const auto& [k, v] : entries_) {
      if (k.rfind(prefix, 0) == 0 && !used_.count(k)) out.push_back(k);
    }
    return out;
  }

  void reject_unused() const {
    for (const auto& [k, v] : entries_) {
      if (!used_.count(k)) throw ParseError("unknown scenario key '" + k + "'", v.line, 1);
    }
  }

 private:
  std::map<std::string, Entry> entries_;
  std::set<std::string> used_;
};

template <typename F>
auto scenario_value(const KeyValueFile::Entry& e, const std::string& key, F&& convert) {
  try {
    return convert(e.value);
  } catch (const Error& ex) {
    throw ParseError(key + ": " + ex.what(), e.line, 1);
  } catch (const std::exception&) {
    throw ParseError(key + ": invalid value '" + e.value + "'", e.line, 1);
  }
}

inline long long to_integer(const std::string& s) {
  std::size_t used = 0;
  const long long v = std::stoll(s, &used);
  if (used != s.size()) throw std::invalid_argument(s);
  return v;
}

inline double to_real(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument(s);
  return v;
}

inline bool to_bool(const std::string& s) {
  if (s == "true" || s == "yes" || s == "1") return true;
  if (s == "false" || s == "no" || s == "0") return false;
  throw std::invalid_argument(s);
}

}  // namespace detail

inline Scenario parse_scenario(std::string_view text, const std::filesystem::path& base_dir = {}) {
  detail::KeyValueFile kv(text);
  Scenario sc;

  auto freq = [&](const std::string& key, Frequency& out) {
    if (auto e = kv.take(key)) out = detail::scenario_value(*e, key, [](const std::string& v) { return parse_frequency(v); });
  };
  auto integer = [&](const std::string& key, auto& out) {
    if (auto e = kv.take(key))
      out = static_cast<std::decay_t<decltype(out)>>(detail::scenario_value(*e, key, detail::to_integer));
  };
  auto real = [&](const std::string& key, double& out) {
    if (auto e = kv.take(key)) out = detail::scenario_value(*e, key, detail::to_real);
  };
  auto millis = [&](const std::string& key, std::chrono::milliseconds& out) {
    long long v = out.count();
    integer(key, v);
    out = std::chrono::milliseconds(v);
  };

  const auto chain = kv.take("chain.file");
  if (!chain) throw ParseError("scenario has no [chain] file");
  sc.chain_file = base_dir / chain->value;
  if (auto e = kv.take("chain.counted")) sc.counted_symbol = e->value;

  for (const auto& key : kv.remaining("references")) {
    auto e = *kv.take(key);
    std::string sym = key.substr(std::string("references.").size());
    const Frequency v = detail::scenario_value(e, key, [](const std::string& s) { return parse_frequency(s); });
    constexpr std::string_view kSigma = ".sigma";
    if (sym.size() > kSigma.size() && sym.compare(sym.size() - kSigma.size(), kSigma.size(), kSigma) == 0) {
      if (v < Frequency{}) throw ParseError(key + ": sigma must be non-negative", e.line, 1);
      sc.reference_sigmas[sym.substr(0, sym.size() - kSigma.size())] = v;
    } else {
      sc.reference_values[sym] = v;
    }
  }

  freq("comb.ceo", sc.comb_ceo);
  freq("comb.rep_jitter", sc.comb_rep_jitter);
  freq("comb.counter_noise", sc.counter.noise_sigma);
  freq("comb.monitor_noise", sc.counter.monitor_noise_sigma);
  {
    std::chrono::milliseconds gate = sc.counter.gate.duration();
    millis("comb.gate_ms", gate);
    try {
      sc.counter.gate = GateTime(gate);
    } catch (const ConfigError& e) {
      throw ParseError(std::string("comb.gate_ms: ") + e.what());
    }
  }
  real("comb.slip_probability", sc.slips.probability);
  if (auto e = kv.take("comb.slip_cycles")) {
    sc.slips.magnitudes.clear();
    std::istringstream is(e->value);
    std::string tok;
    while (is >> tok) {
      const detail::KeyValueFile::Entry one{tok, e->line};
      const long long cycles = detail::scenario_value(one, "comb.slip_cycles", detail::to_integer);
      sc.slips.magnitudes.emplace_back(static_cast<int>(cycles), 1.0);
    }
  }
  freq("comb.threshold", sc.analysis.slip_threshold);

  freq("ion.center", sc.ion.true_center_fB);
  freq("ion.width", sc.ion.width_sigma);
  real("ion.peak", sc.ion.peak_probability);
  real("ion.lifetime_s", sc.ion.metastable_lifetime_s);
  if (auto e = kv.take("ion.b_field"))
    sc.ion.b_field = detail::scenario_value(*e, "ion.b_field", [](const std::string& v) { return parse_magnetic_field(v); });
  freq("ion.zeeman_per_gauss", sc.ion.zeeman_per_gauss);
  real("ion.bright_miss_probability", sc.ion.bright_miss_probability);
  real("ion.dark_count_probability", sc.ion.dark_count_probability);

  freq("scan.step", sc.scan.step);
  integer("scan.attempts", sc.scan.attempts_per_step);
  millis("scan.clock_pulse_ms", sc.scan.clock_pulse);
  millis("scan.probe_window_ms", sc.scan.probe_window);
  integer("scan.extra_windows", sc.scan.max_extra_windows);
  freq("scan.start", sc.scan.scan_start);
  freq("scan.stop", sc.scan.scan_stop);
  integer("scan.spectra", sc.scan.spectra);
  freq("scan.range_jitter", sc.scan.range_jitter);

  freq("analysis.bin_width", sc.analysis.bin_width);
  freq("analysis.reference_sigma", sc.reference_sigma_fB);
  if (auto e = kv.take("analysis.weighting")) {
    if (e->value == "reciprocal_trials") sc.analysis.fit.weighting = Weighting::kReciprocalTrials;
    else if (e->value == "binomial") sc.analysis.fit.weighting = Weighting::kBinomial;
    else throw ParseError("analysis.weighting: expected reciprocal_trials or binomial", e->line, 1);
  }
  if (auto e = kv.take("analysis.fit_offset"))
    sc.analysis.fit.fit_offset = detail::scenario_value(*e, "analysis.fit_offset", detail::to_bool);
  if (auto e = kv.take("analysis.label")) {
    if (e->value == "counted") sc.analysis.label = BeatLabel::kCounted;
    else if (e->value == "setpoint") sc.analysis.label = BeatLabel::kSetpoint;
    else throw ParseError("analysis.label: expected counted or setpoint", e->line, 1);
  }

  integer("run.sessions", sc.sessions);
  if (auto e = kv.take("run.seed"))
    sc.seed = static_cast<std::uint64_t>(detail::scenario_value(*e, "run.seed", detail::to_integer));
  if (auto e = kv.take("run.out")) sc.output_dir = base_dir / e->value;

  kv.reject_unused();

  sc.analysis.attempts_per_step = sc.scan.attempts_per_step;
  try {
    sc.ion.validate();
    sc.scan.validate();
    sc.slips.validate();
  } catch (const ConfigError& e) {
    throw ParseError(e.what());
  }
  if (sc.sessions < 1) throw ParseError("run.sessions must be >= 1");
  return sc;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  return parse_scenario(read_text_file(path), path.parent_path());
}

}  // namespace freqchain
