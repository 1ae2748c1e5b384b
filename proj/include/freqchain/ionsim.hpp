#pragma once

// Quantum-jump spectroscopy on a single trapped ion: scan protocol, the
// double-resonance detection state machine and the Zeeman shift of the
// probed component.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "freqchain/combsim.hpp"
#include "freqchain/error.hpp"
#include "freqchain/exactfreq.hpp"
#include "freqchain/rng.hpp"

namespace freqchain {

// Magnetic field as an exact count of micro-gauss.
struct MagneticField {
  std::int64_t micro_gauss = 0;

  static MagneticField from_micro_gauss(std::int64_t ug) { return {ug}; }
  double gauss() const { return static_cast<double>(micro_gauss) * 1e-6; }
  friend bool operator==(const MagneticField&, const MagneticField&) = default;
};

// "0.01 G", "10 mG", "-0.5G".
inline MagneticField parse_magnetic_field(std::string_view text) {
  std::string s(text);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.pop_back();
  int scale = 6;  // decimal digits of micro-gauss per unit
  if (s.size() >= 2 && s.compare(s.size() - 2, 2, "mG") == 0) {
    scale = 3;
    s.resize(s.size() - 2);
  } else if (!s.empty() && s.back() == 'G') {
    s.pop_back();
  }
  // Reuse the frequency parser: "x Hz" at uHz resolution is x * 1e6 ticks.
  Frequency f;
  try {
    f = parse_frequency(s);
  } catch (const ParseError&) {
    throw ParseError("magnetic field '" + std::string(text) + "' is not a decimal in G or mG");
  }
  const Int128 scaled = f.ticks();  // value * 1e6
  const Int128 div = detail::pow10(6 - scale);
  if (scaled % div != 0) throw ParseError("magnetic field '" + std::string(text) + "' finer than 1 uG");
  return {static_cast<std::int64_t>(scaled / div)};
}

struct IonConfig {
  // Line center expressed as a beat-frequency setpoint at 946 nm, B = 0.
  Frequency true_center_fB;
  Frequency width_sigma = Frequency::from_hz(150);
  double peak_probability = 0.4;
  Frequency natural_linewidth = Frequency::from_ticks(800'000);
  // 1 / (2 pi * 0.8 Hz)
  double metastable_lifetime_s = 1.0 / (2.0 * std::numbers::pi * 0.8);
  MagneticField b_field;
  Frequency zeeman_per_gauss = Frequency::from_hz(-636);  // at the clock transition
  // Coefficient of the counted beat in the measurement equation; converts a
  // shift of the clock transition into a shift of the f_B line center.
  Ratio beat_coefficient = Ratio(-4);
  // Detection imperfections per 40 ms window.
  double bright_miss_probability = 0.0;
  double dark_count_probability = 0.0;
  int bright_counts = 120;

  void validate() const {
    if (width_sigma <= Frequency{}) throw ConfigError("ion line width must be positive");
    if (!(peak_probability >= 0.0 && peak_probability <= 1.0)) throw ConfigError("peak probability must be in [0, 1]");
    if (!(metastable_lifetime_s > 0.0)) throw ConfigError("metastable lifetime must be positive");
    if (beat_coefficient.is_zero()) throw ConfigError("beat coefficient must be nonzero");
    if (!(bright_miss_probability >= 0.0 && bright_miss_probability <= 1.0) ||
        !(dark_count_probability >= 0.0 && dark_count_probability <= 1.0))
      throw ConfigError("detection probabilities must be in [0, 1]");
    if (bright_counts < 1) throw ConfigError("bright counts must be >= 1");
  }
};

struct ScanProtocol {
  Frequency step = Frequency::from_hz(80);
  int attempts_per_step = 16;
  std::chrono::milliseconds clock_pulse{15};
  std::chrono::milliseconds probe_window{40};
  int max_extra_windows = 10;
  Frequency scan_start;
  Frequency scan_stop;
  int spectra = 1;
  // Each spectrum's range is shifted by a whole-Hz offset drawn uniformly
  // from [-range_jitter, +range_jitter].
  Frequency range_jitter;

  void validate() const {
    if (step <= Frequency{}) throw ConfigError("scan step must be positive");
    if (attempts_per_step < 1) throw ConfigError("attempts per step must be >= 1");
    if (max_extra_windows < 0) throw ConfigError("extra probe windows must be >= 0");
    if (clock_pulse.count() <= 0 || probe_window.count() <= 0) throw ConfigError("pulse durations must be positive");
    if (scan_stop < scan_start) throw ConfigError("scan range is empty");
    if (spectra < 1) throw ConfigError("need at least one spectrum per session");
    if (range_jitter < Frequency{}) throw ConfigError("range jitter must be non-negative");
  }

  std::vector<Frequency> setpoints(Frequency offset = {}) const {
    std::vector<Frequency> out;
    for (Frequency f = scan_start; f <= scan_stop; f += step) out.push_back(f + offset);
    return out;
  }
};

struct ExcitationRecord {
  Frequency fB_setpoint;
  std::int64_t attempt_index = 0;  // running index within the session
  bool jumped = false;
  std::optional<int> windows_to_decay;

  friend bool operator==(const ExcitationRecord&, const ExcitationRecord&) = default;
};

// Shift of the clock transition itself: zeeman_per_gauss * B, exact.
inline Frequency zeeman_shift(const IonConfig& config) {
  return scale_exact(config.zeeman_per_gauss, Ratio(config.b_field.micro_gauss, 1'000'000));
}

// Line center in the f_B domain. A transition shift d moves the resonant
// beat by d / beat_coefficient, i.e. by -d/4 for the indium chain.
inline Frequency effective_center(const IonConfig& config) {
  return config.true_center_fB + scale_exact(zeeman_shift(config), Ratio(1) / config.beat_coefficient);
}

inline double excitation_probability(const IonConfig& config, Frequency fB_setpoint) {
  const double x = (fB_setpoint - effective_center(config)).to_hz();
  const double s = config.width_sigma.to_hz();
  return config.peak_probability * std::exp(-(x * x) / (2.0 * s * s));
}

struct DetectionOutcome {
  bool jumped = false;
  std::optional<int> windows_to_decay;
};

// counts[0] is the first 40 ms probe after the clock pulse; further entries
// are the extra waiting windows. Dark first window means the ion was shelved;
// windows_to_decay is the index of the first window with counts after that,
// or the cap when fluorescence never came back.
inline DetectionOutcome detect_jump(std::span<const int> counts, int max_extra_windows = 10) {
  if (counts.empty()) throw DataError("detect_jump: no probe windows");
  if (static_cast<int>(counts.size()) > 1 + max_extra_windows)
    throw DataError("detect_jump: more windows than the protocol allows");
  if (counts[0] > 0) return {false, std::nullopt};
  for (std::size_t w = 1; w < counts.size(); ++w) {
    if (counts[w] > 0) return {true, static_cast<int>(w)};
  }
  return {true, max_extra_windows};
}

namespace detail {

// Photon counts seen in window w given the ion's state.
inline int window_counts(bool bright, const IonConfig& config, Rng& rng) {
  const double u = rng.uniform();
  if (bright) return u < config.bright_miss_probability ? 0 : config.bright_counts;
  return u < config.dark_count_probability ? 1 : 0;
}

}  // namespace detail

// One clock-pulse-plus-probe cycle. Returns the detector's verdict.
inline DetectionOutcome run_attempt(const IonConfig& config, const ScanProtocol& protocol, double p, Rng& rng) {
  const bool excited = rng.uniform() < p;
  // Time after the first probe window at which the shelved ion decays.
  const double decay_s = rng.exponential(config.metastable_lifetime_s);
  const double window_s = static_cast<double>(protocol.probe_window.count()) / 1000.0;
  std::vector<int> counts;
  counts.reserve(static_cast<std::size_t>(protocol.max_extra_windows) + 1);
  counts.push_back(detail::window_counts(!excited, config, rng));
  if (counts[0] == 0) {
    for (int w = 1; w <= protocol.max_extra_windows; ++w) {
      const bool bright = !excited || decay_s < w * window_s;
      counts.push_back(detail::window_counts(bright, config, rng));
      if (counts.back() > 0) break;
    }
  }
  return detect_jump(counts, protocol.max_extra_windows);
}

// All spectra of one session. Attempt indices run through the whole session;
// attempt_index / attempts_per_step is the counter gate of that step.
inline std::vector<ExcitationRecord> run_session(const IonConfig& config, const ScanProtocol& protocol, Rng& rng) {
  config.validate();
  protocol.validate();
  std::vector<ExcitationRecord> out;
  std::int64_t attempt = 0;
  const auto jitter_hz = static_cast<std::int64_t>(protocol.range_jitter.ticks() / Frequency::kTicksPerHz);
  for (int s = 0; s < protocol.spectra; ++s) {
    const Frequency offset = Frequency::from_hz(rng.uniform_int(-jitter_hz, jitter_hz));
    for (Frequency fB : protocol.setpoints(offset)) {
      const double p = excitation_probability(config, fB);
      for (int a = 0; a < protocol.attempts_per_step; ++a) {
        const auto outcome = run_attempt(config, protocol, p, rng);
        out.push_back({fB, attempt++, outcome.jumped, outcome.windows_to_decay});
      }
    }
  }
  return out;
}

inline std::vector<ExcitationRecord> run_session(const IonConfig& config, const ScanProtocol& protocol,
                                                 std::uint64_t seed) {
  Rng rng(seed, StreamTag::kIonSession, 0);
  return run_session(config, protocol, rng);
}

// Setpoint of each counter gate (one gate per scan step).
inline std::vector<Frequency> gate_setpoints(std::span<const ExcitationRecord> records, int attempts_per_step) {
  std::vector<Frequency> out;
  for (const auto& r : records) {
    const auto gate = static_cast<std::size_t>(r.attempt_index / attempts_per_step);
    if (gate >= out.size()) out.resize(gate + 1);
    out[gate] = r.fB_setpoint;
  }
  return out;
}

// Expected number of jumps for one pass over the given setpoints.
inline double expected_jumps(const IonConfig& config, const ScanProtocol& protocol, Frequency offset = {}) {
  double sum = 0.0;
  for (Frequency fB : protocol.setpoints(offset)) sum += excitation_probability(config, fB);
  return sum * protocol.attempts_per_step;
}

// ---------------------------------------------------------------------------
// CSV: fB_setpoint_hz,attempt_index,jumped,windows_to_decay

inline constexpr const char* kExcitationCsvHeader = "fB_setpoint_hz,attempt_index,jumped,windows_to_decay";

inline void write_excitation_csv(std::ostream& os, std::span<const ExcitationRecord> records) {
  os << kExcitationCsvHeader << '\n';
  for (const auto& r : records) {
    os << format_hz_fixed(r.fB_setpoint) << ',' << r.attempt_index << ',' << (r.jumped ? 1 : 0) << ',';
    if (r.windows_to_decay) os << *r.windows_to_decay;
    os << '\n';
  }
}

inline std::vector<ExcitationRecord> read_excitation_csv(std::istream& is) {
  std::vector<ExcitationRecord> out;
  std::string line;
  int line_no = 1;
  if (!std::getline(is, line)) throw ParseError("excitation CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kExcitationCsvHeader) throw ParseError("unexpected excitation CSV header", 1, 1);
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 4) throw ParseError("expected 4 fields", line_no, 1);
    ExcitationRecord r;
    r.fB_setpoint = parse_frequency(f[0]);
    r.attempt_index = detail::parse_int(f[1], line_no);
    const auto j = detail::parse_int(f[2], line_no);
    if (j != 0 && j != 1) throw ParseError("jumped must be 0 or 1", line_no, 1);
    r.jumped = j == 1;
    if (!f[3].empty()) r.windows_to_decay = static_cast<int>(detail::parse_int(f[3], line_no));
    if (r.jumped != r.windows_to_decay.has_value())
      throw ParseError("windows_to_decay must be present exactly for jumps", line_no, 1);
    out.push_back(r);
  }
  return out;
}

}  // namespace freqchain
