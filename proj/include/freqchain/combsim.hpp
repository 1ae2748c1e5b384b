#pragma once

// Frequency comb, gated beat counters and the redundant lost-cycle monitor.

#include <chrono>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "freqchain/error.hpp"
#include "freqchain/exactfreq.hpp"
#include "freqchain/rng.hpp"

namespace freqchain {

struct CombState {
  Frequency f_rep;
  Frequency f_ceo;
  Frequency rep_jitter_sigma;  // per counter gate

  CombState(Frequency rep, Frequency ceo, Frequency jitter = {}) : f_rep(rep), f_ceo(ceo), rep_jitter_sigma(jitter) {
    if (f_rep <= Frequency{}) throw ConfigError("comb repetition rate must be positive");
    if (rep_jitter_sigma < Frequency{}) throw ConfigError("comb jitter sigma must be non-negative");
  }

  // Repetition rate averaged over one gate, with white jitter.
  Frequency sample_rep(Rng& rng) const {
    if (rep_jitter_sigma == Frequency{}) return f_rep;
    return f_rep + Frequency::from_hz_rounded(rng.normal() * rep_jitter_sigma.to_hz());
  }
};

// f_ceo + m * f_rep
inline Frequency mode_frequency(const CombState& comb, Int128 m) {
  if (m < 0) throw Error("negative comb mode index");
  return comb.f_ceo + comb.f_rep * m;
}

// Counter gate. The reading resolution 1/gate must be a whole number of uHz.
class GateTime {
 public:
  explicit GateTime(std::chrono::milliseconds duration = std::chrono::seconds(1)) : duration_(duration) {
    const auto ms = duration_.count();
    if (ms <= 0) throw ConfigError("counter gate must be positive");
    if (1'000'000'000LL % ms != 0) throw ConfigError("counter gate must divide 1e9 ms to resolve whole uHz");
  }

  std::chrono::milliseconds duration() const { return duration_; }
  double seconds() const { return static_cast<double>(duration_.count()) / 1000.0; }
  Frequency resolution() const { return Frequency::from_ticks(1'000'000'000LL / duration_.count()); }

  friend bool operator==(const GateTime&, const GateTime&) = default;

 private:
  std::chrono::milliseconds duration_;
};

struct CounterReading {
  std::int64_t index = 0;
  Frequency value;  // multiple of gate.resolution()
  GateTime gate;
  bool valid = true;
};

// Cycle slips: integer numbers of cycles lost or gained within one gate.
struct SlipProcess {
  double probability = 0.0;
  std::vector<std::pair<int, double>> magnitudes{{+1, 0.5}, {-1, 0.5}};  // (cycles, weight)

  void validate() const {
    if (!(probability >= 0.0 && probability <= 1.0)) throw ConfigError("slip probability must be in [0, 1]");
    if (probability > 0.0 && magnitudes.empty()) throw ConfigError("slip magnitude distribution is empty");
    for (const auto& [cycles, w] : magnitudes) {
      if (cycles == 0 || !(w > 0.0)) throw ConfigError("slip magnitudes must be nonzero with positive weight");
    }
  }

  // Returns 0 for no slip. Always consumes two variates.
  int draw(Rng& rng) const {
    const bool slipped = rng.bernoulli(probability);
    const double pick = rng.uniform();
    if (!slipped) return 0;
    double total = 0.0;
    for (const auto& m : magnitudes) total += m.second;
    double u = pick * total;
    for (const auto& [cycles, w] : magnitudes) {
      if (u < w) return cycles;
      u -= w;
    }
    return magnitudes.back().first;
  }
};

struct CounterModel {
  Frequency noise_sigma = Frequency::from_ticks(300'000);  // 0.3 Hz white counter noise
  // In-lock residual seen by the redundant monitor counters.
  Frequency monitor_noise_sigma = Frequency::from_ticks(20'000);
  GateTime gate;
};

struct SlipEvent {
  std::int64_t index;
  int cycles;
};

struct BeatSeries {
  std::vector<CounterReading> readings;
  std::vector<Frequency> monitor_deviations;
  std::vector<SlipEvent> slips;  // injected, for verification
};

inline Frequency quantize(Frequency f, Frequency step) {
  const Int128 s = step.ticks();
  return Frequency::from_ticks(detail::floor_div(detail::checked_add(f.ticks(), s / 2), s) * s);
}

// One gate per entry of true_beats. Each reading is the true beat plus
// Gaussian counter noise plus any slip, quantized to the gate resolution; the
// monitor stream sees the slip plus the in-lock residual.
inline BeatSeries simulate_beat_series(std::span<const Frequency> true_beats, const CounterModel& counter,
                                       const SlipProcess& slips, Rng& rng) {
  slips.validate();
  if (counter.noise_sigma < Frequency{} || counter.monitor_noise_sigma < Frequency{})
    throw ConfigError("noise sigmas must be non-negative");
  const Frequency step = counter.gate.resolution();
  const double noise_hz = counter.noise_sigma.to_hz();
  const double monitor_hz = counter.monitor_noise_sigma.to_hz();

  BeatSeries out;
  out.readings.reserve(true_beats.size());
  out.monitor_deviations.reserve(true_beats.size());
  for (std::size_t i = 0; i < true_beats.size(); ++i) {
    const auto index = static_cast<std::int64_t>(i);
    // Fixed draw order per gate keeps streams aligned whatever the parameters.
    const double noise = rng.normal();
    const double residual = rng.normal();
    const int cycles = slips.draw(rng);
    const Frequency slip = step * cycles;
    if (cycles != 0) out.slips.push_back({index, cycles});
    const Frequency raw = true_beats[i] + Frequency::from_hz_rounded(noise * noise_hz) + slip;
    out.readings.push_back({index, quantize(raw, step), counter.gate, true});
    out.monitor_deviations.push_back(slip + Frequency::from_hz_rounded(residual * monitor_hz));
  }
  return out;
}

inline BeatSeries simulate_beat_series(Frequency true_beat, const CounterModel& counter, std::int64_t count,
                                       const SlipProcess& slips, std::uint64_t seed) {
  if (count < 1) throw ConfigError("beat series needs at least one gate");
  Rng rng(seed, StreamTag::kBeatCounter, 0);
  const std::vector<Frequency> beats(static_cast<std::size_t>(count), true_beat);
  return simulate_beat_series(beats, counter, slips, rng);
}

inline Frequency default_slip_threshold() { return Frequency::from_ticks(500'000); }

// valid[i] is false iff |deviation_i| > threshold.
inline std::vector<bool> flag_lost_cycles(std::span<const Frequency> deviations,
                                          Frequency threshold = default_slip_threshold()) {
  if (threshold <= Frequency{}) throw ConfigError("lost-cycle threshold must be positive");
  std::vector<bool> valid;
  valid.reserve(deviations.size());
  for (Frequency d : deviations) valid.push_back(!(abs(d) > threshold));
  return valid;
}

// Applies the monitor verdict to the readings in place.
inline void flag_lost_cycles(std::span<CounterReading> readings, std::span<const Frequency> deviations,
                             Frequency threshold = default_slip_threshold()) {
  if (readings.size() != deviations.size())
    throw DataError("beat readings and monitor deviations differ in length (" + std::to_string(readings.size()) +
                    " vs " + std::to_string(deviations.size()) + ")");
  const auto mask = flag_lost_cycles(deviations, threshold);
  for (std::size_t i = 0; i < readings.size(); ++i) readings[i].valid = mask[i];
}

// ---------------------------------------------------------------------------
// CSV: gate_index,value_hz,monitor_deviation_hz,valid

inline constexpr const char* kBeatCsvHeader = "gate_index,value_hz,monitor_deviation_hz,valid";

inline void write_beat_csv(std::ostream& os, std::span<const CounterReading> readings,
                           std::span<const Frequency> deviations) {
  if (readings.size() != deviations.size()) throw DataError("beat CSV: stream length mismatch");
  os << kBeatCsvHeader << '\n';
  for (std::size_t i = 0; i < readings.size(); ++i) {
    os << readings[i].index << ',' << format_hz_fixed(readings[i].value) << ','
       << format_hz_fixed(deviations[i]) << ',' << (readings[i].valid ? 1 : 0) << '\n';
  }
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::int64_t parse_int(const std::string& s, int line) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("expected integer, got '" + s + "'", line, 1);
  }
}

}  // namespace detail

inline BeatSeries read_beat_csv(std::istream& is, GateTime gate = GateTime{}) {
  BeatSeries out;
  std::string line;
  int line_no = 0;
  if (!std::getline(is, line)) throw ParseError("beat CSV is empty");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kBeatCsvHeader) throw ParseError("unexpected beat CSV header", 1, 1);
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 4) throw ParseError("expected 4 fields", line_no, 1);
    CounterReading r;
    r.index = detail::parse_int(f[0], line_no);
    r.value = parse_frequency(f[1]);
    r.gate = gate;
    const auto v = detail::parse_int(f[3], line_no);
    if (v != 0 && v != 1) throw ParseError("valid must be 0 or 1", line_no, 1);
    r.valid = v == 1;
    out.readings.push_back(r);
    out.monitor_deviations.push_back(parse_frequency(f[2]));
  }
  return out;
}

}  // namespace freqchain
