#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <sstream>
#include <vector>

#include "freqchain/ionsim.hpp"

using namespace freqchain;

namespace {

Frequency hz(std::int64_t v) { return Frequency::from_hz(v); }

IonConfig paper_ion() {
  IonConfig c;
  c.true_center_fB = hz(49'174'925);
  return c;
}

ScanProtocol paper_scan() {
  ScanProtocol p;
  p.scan_start = hz(49'174'445);
  p.scan_stop = hz(49'175'405);
  return p;
}

}  // namespace

TEST(IonField, Parse) {
  EXPECT_EQ(parse_magnetic_field("0.01 G").micro_gauss, 10'000);
  EXPECT_EQ(parse_magnetic_field("10 mG").micro_gauss, 10'000);
  EXPECT_EQ(parse_magnetic_field("-1G").micro_gauss, -1'000'000);
  EXPECT_EQ(parse_magnetic_field("0.000001 G").micro_gauss, 1);
  EXPECT_THROW(parse_magnetic_field("0.0000001 G"), ParseError);
  EXPECT_THROW(parse_magnetic_field("1 T"), ParseError);
}

TEST(IonZeeman, Examples) {
  IonConfig c = paper_ion();
  EXPECT_EQ(effective_center(c), c.true_center_fB);
  EXPECT_EQ(zeeman_shift(c), Frequency{});
  c.b_field = parse_magnetic_field("0.01 G");
  EXPECT_EQ(zeeman_shift(c), Frequency::from_ticks(-6'360'000));
  EXPECT_EQ(effective_center(c) - c.true_center_fB, Frequency::from_ticks(1'590'000));
  c.b_field = parse_magnetic_field("1 G");
  EXPECT_EQ(zeeman_shift(c), hz(-636));
  EXPECT_EQ(effective_center(c) - c.true_center_fB, hz(159));
}

TEST(IonZeeman, ExactlyLinear) {
  Rng rng(41);
  IonConfig c = paper_ion();
  for (int i = 0; i < 1000; ++i) {
    const std::int64_t a = rng.uniform_int(-2'000'000, 2'000'000), b = rng.uniform_int(-2'000'000, 2'000'000);
    IonConfig ca = c, cb = c, cab = c;
    ca.b_field.micro_gauss = a * 4;
    cb.b_field.micro_gauss = b * 4;
    cab.b_field.micro_gauss = (a + b) * 4;
    EXPECT_EQ(zeeman_shift(ca) + zeeman_shift(cb), zeeman_shift(cab));
    EXPECT_EQ((effective_center(ca) - c.true_center_fB) * -4, zeeman_shift(ca));
  }
}

TEST(IonProbability, Examples) {
  const IonConfig c = paper_ion();
  EXPECT_DOUBLE_EQ(excitation_probability(c, c.true_center_fB), 0.4);
  EXPECT_NEAR(excitation_probability(c, c.true_center_fB + hz(150)), 0.4 * std::exp(-0.5), 1e-15);
  // Sum over a fine grid approximates peak * sigma * sqrt(2 pi).
  double sum = 0.0;
  for (int k = -2000; k <= 2000; ++k) sum += excitation_probability(c, c.true_center_fB + hz(k));
  EXPECT_NEAR(sum, 0.4 * 150.0 * std::sqrt(2.0 * std::numbers::pi), 1e-6);
}

TEST(IonProbability, SymmetricAndBounded) {
  const IonConfig c = paper_ion();
  Rng rng(42);
  for (int i = 0; i < 1000; ++i) {
    const Frequency d = Frequency::from_ticks(rng.uniform_int(0, 2'000'000'000));
    const double up = excitation_probability(c, c.true_center_fB + d);
    EXPECT_EQ(up, excitation_probability(c, c.true_center_fB - d));
    EXPECT_LE(up, c.peak_probability);
  }
}

TEST(IonDetect, Examples) {
  const std::vector<int> decay_after_two{0, 0, 120, 0};
  auto r = detect_jump(decay_after_two);
  EXPECT_TRUE(r.jumped);
  EXPECT_EQ(r.windows_to_decay, 2);
  const std::vector<int> bright{150};
  r = detect_jump(bright);
  EXPECT_FALSE(r.jumped);
  EXPECT_FALSE(r.windows_to_decay.has_value());
  const std::vector<int> all_dark(11, 0);
  r = detect_jump(all_dark);
  EXPECT_TRUE(r.jumped);
  EXPECT_EQ(r.windows_to_decay, 10);
  EXPECT_THROW(detect_jump(std::vector<int>{}), DataError);
  EXPECT_THROW(detect_jump(std::vector<int>(12, 0)), DataError);
}

TEST(IonSession, ZeroPeakGivesNoJumps) {
  IonConfig c = paper_ion();
  c.peak_probability = 0.0;
  const auto recs = run_session(c, paper_scan(), 5);
  EXPECT_FALSE(recs.empty());
  for (const auto& r : recs) {
    EXPECT_FALSE(r.jumped);
    EXPECT_FALSE(r.windows_to_decay.has_value());
  }
}

TEST(IonSession, RecordInvariants) {
  ScanProtocol p = paper_scan();
  p.spectra = 3;
  p.range_jitter = hz(40);
  const auto recs = run_session(paper_ion(), p, 6);
  ASSERT_EQ(recs.size(), 3u * 13u * 16u);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(recs[i].attempt_index, static_cast<std::int64_t>(i));
    EXPECT_EQ(recs[i].jumped, recs[i].windows_to_decay.has_value());
    if (recs[i].windows_to_decay) {
      EXPECT_GE(*recs[i].windows_to_decay, 1);
      EXPECT_LE(*recs[i].windows_to_decay, p.max_extra_windows);
    }
    // One setpoint per step of 16 attempts.
    EXPECT_EQ(recs[i].fB_setpoint, recs[i - i % 16].fB_setpoint);
  }
}

TEST(IonSession, Deterministic) {
  ScanProtocol p = paper_scan();
  p.spectra = 2;
  EXPECT_EQ(run_session(paper_ion(), p, 7), run_session(paper_ion(), p, 7));
  EXPECT_NE(run_session(paper_ion(), p, 7), run_session(paper_ion(), p, 8));
}

TEST(IonSession, PerSetpointFrequencyMatchesProbability) {
  // 100 spectra -> 1600 attempts per setpoint.
  ScanProtocol p = paper_scan();
  p.spectra = 100;
  const IonConfig c = paper_ion();
  const auto recs = run_session(c, p, 9);
  std::map<Frequency, std::pair<int, int>> tally;  // setpoint -> (trials, jumps)
  for (const auto& r : recs) {
    auto& t = tally[r.fB_setpoint];
    ++t.first;
    t.second += r.jumped ? 1 : 0;
  }
  EXPECT_EQ(tally.size(), 13u);
  for (const auto& [f, t] : tally) {
    const double prob = excitation_probability(c, f);
    const double mean = prob * t.first;
    const double sd = std::sqrt(t.first * prob * (1.0 - prob));
    EXPECT_LE(std::fabs(t.second - mean), 3.0 * sd + 1e-9) << format_frequency(f);
  }
}

TEST(IonSession, DecayWindowsFollowTheLifetime) {
  IonConfig c = paper_ion();
  c.peak_probability = 1.0;
  ScanProtocol p;
  p.scan_start = p.scan_stop = c.true_center_fB;
  p.attempts_per_step = 20'000;
  const auto recs = run_session(c, p, 10);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (const auto& r : recs) {
    ASSERT_TRUE(r.jumped);
    sum += *r.windows_to_decay;
    sum_sq += static_cast<double>(*r.windows_to_decay) * *r.windows_to_decay;
  }
  const double n = static_cast<double>(recs.size());
  const double mean = sum / n;
  const double sd = std::sqrt(sum_sq / n - mean * mean);
  // W = min(floor(T / 40 ms) + 1, cap), so E[W] = sum_{j<cap} q^j with q = exp(-0.04/tau).
  const double q = std::exp(-0.04 / c.metastable_lifetime_s);
  double expect = 0.0;
  for (int j = 0; j < p.max_extra_windows; ++j) expect += std::pow(q, j);
  EXPECT_NEAR(mean, expect, 4.0 * sd / std::sqrt(n));
}

TEST(IonSession, ExpectedJumpCountAtPaperScale) {
  IonConfig c = paper_ion();
  c.width_sigma = hz(160);
  ScanProtocol p = paper_scan();
  p.spectra = 21;
  p.range_jitter = hz(40);
  const double per_pass = expected_jumps(c, p);
  EXPECT_NEAR(per_pass * 21, 674.0, 15.0);
  // Monte Carlo mean over sessions.
  double total = 0.0;
  const int sessions = 40;
  for (int s = 0; s < sessions; ++s) {
    Rng rng(100, StreamTag::kIonSession, static_cast<std::uint64_t>(s));
    const auto recs = run_session(c, p, rng);
    for (const auto& r : recs) total += r.jumped ? 1 : 0;
  }
  const double mean = total / sessions;
  EXPECT_NEAR(mean, 674.0, 4.0 * std::sqrt(674.0 / sessions) + 10.0);
}

TEST(IonConfigValidation, Rejects) {
  IonConfig c = paper_ion();
  c.width_sigma = Frequency{};
  EXPECT_THROW(c.validate(), ConfigError);
  c = paper_ion();
  c.peak_probability = 1.2;
  EXPECT_THROW(c.validate(), ConfigError);
  ScanProtocol p = paper_scan();
  p.scan_stop = p.scan_start - hz(1);
  EXPECT_THROW(p.validate(), ConfigError);
  p = paper_scan();
  p.attempts_per_step = 0;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(IonCsv, RoundTrip) {
  ScanProtocol p = paper_scan();
  p.spectra = 2;
  const auto recs = run_session(paper_ion(), p, 11);
  std::stringstream ss;
  write_excitation_csv(ss, recs);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "fB_setpoint_hz,attempt_index,jumped,windows_to_decay");
  EXPECT_EQ(read_excitation_csv(ss), recs);
  std::stringstream bad("fB_setpoint_hz,attempt_index,jumped,windows_to_decay\n1.0,0,1,\n");
  EXPECT_THROW(read_excitation_csv(bad), ParseError);
}
