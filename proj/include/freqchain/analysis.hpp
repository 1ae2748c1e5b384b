#pragma once

// Data reduction: lost-cycle filtering, 30 Hz binning of the quantum-jump
// record, weighted Gaussian line fit, session averaging and the final
// evaluation of the measurement equation with its uncertainty budget.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "freqchain/chainspec.hpp"
#include "freqchain/combsim.hpp"
#include "freqchain/error.hpp"
#include "freqchain/exactfreq.hpp"
#include "freqchain/ionsim.hpp"

namespace freqchain {

class FitError : public DataError {
 public:
  using DataError::DataError;
};

// ---------------------------------------------------------------------------
// Filtering

// Which frequency labels an attempt: the counted beat of its gate, or the
// synthesizer setpoint.
enum class BeatLabel { kCounted, kSetpoint };

struct JointRecord {
  Frequency fB;
  bool jumped = false;
  std::int64_t gate = 0;
};

struct FilterResult {
  std::vector<JointRecord> records;
  std::size_t dropped_attempts = 0;
  std::size_t dropped_gates = 0;
  bool all_invalid = false;  // warning: nothing survived
};

// Keeps the attempts whose counter gate is valid. Gate of an attempt is
// attempt_index / attempts_per_step; readings must be indexed 0..n-1.
inline FilterResult filter_records(std::span<const CounterReading> readings,
                                   std::span<const ExcitationRecord> records, int attempts_per_step,
                                   BeatLabel label = BeatLabel::kCounted) {
  if (attempts_per_step < 1) throw ConfigError("attempts per step must be >= 1");
  for (std::size_t i = 0; i < readings.size(); ++i) {
    if (readings[i].index != static_cast<std::int64_t>(i))
      throw DataError("beat readings are not indexed consecutively at gate " + std::to_string(i));
  }
  FilterResult out;
  std::vector<bool> gate_dropped(readings.size(), false);
  for (const auto& r : records) {
    if (r.attempt_index < 0) throw DataError("negative attempt index");
    const auto gate = r.attempt_index / attempts_per_step;
    if (gate >= static_cast<std::int64_t>(readings.size()))
      throw DataError("attempt " + std::to_string(r.attempt_index) + " has no counter gate");
    const auto& reading = readings[static_cast<std::size_t>(gate)];
    if (!reading.valid) {
      ++out.dropped_attempts;
      gate_dropped[static_cast<std::size_t>(gate)] = true;
      continue;
    }
    out.records.push_back({label == BeatLabel::kCounted ? reading.value : r.fB_setpoint, r.jumped, gate});
  }
  out.dropped_gates = static_cast<std::size_t>(std::count(gate_dropped.begin(), gate_dropped.end(), true));
  out.all_invalid = out.records.empty() && !records.empty();
  return out;
}

// ---------------------------------------------------------------------------
// Binning

enum class BinCenter {
  kMidpoint,   // middle of the interval
  kTrialMean,  // mean label of the attempts in the bin
};

struct HistogramBin {
  Frequency center;
  std::int64_t trials = 0;
  std::int64_t jumps = 0;
  double probability = 0.0;
  double sigma = 0.0;  // 1 / trials
};

struct Histogram {
  Frequency bin_width;
  Frequency anchor;
  std::vector<HistogramBin> bins;  // sorted, non-empty bins only
};

// Half-open bins [anchor + k w, anchor + (k+1) w).
inline Histogram bin_records(std::span<const JointRecord> records, Frequency bin_width, Frequency anchor = {},
                             BinCenter center = BinCenter::kMidpoint) {
  if (bin_width <= Frequency{}) throw ConfigError("bin width must be positive");
  if (records.empty()) throw DataError("no records to bin");
  struct Acc {
    std::int64_t trials = 0;
    std::int64_t jumps = 0;
    Int128 label_sum = 0;
  };
  std::map<Int128, Acc> acc;
  for (const auto& r : records) {
    const Int128 k = detail::floor_div((r.fB - anchor).ticks(), bin_width.ticks());
    auto& a = acc[k];
    ++a.trials;
    a.jumps += r.jumped ? 1 : 0;
    a.label_sum = detail::checked_add(a.label_sum, r.fB.ticks());
  }
  Histogram h{bin_width, anchor, {}};
  h.bins.reserve(acc.size());
  for (const auto& [k, a] : acc) {
    HistogramBin b;
    if (center == BinCenter::kMidpoint) {
      b.center = anchor + bin_width * k + Frequency::from_ticks(bin_width.ticks() / 2);
    } else {
      b.center = Frequency::from_ticks(detail::floor_div(2 * a.label_sum + a.trials, 2 * Int128(a.trials)));
    }
    b.trials = a.trials;
    b.jumps = a.jumps;
    b.probability = static_cast<double>(a.jumps) / static_cast<double>(a.trials);
    b.sigma = 1.0 / static_cast<double>(a.trials);
    h.bins.push_back(b);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Gaussian fit

enum class Weighting {
  kReciprocalTrials,  // sigma_i = 1/N_i, w_i = N_i^2
  kBinomial,          // w_i = N_i / (p_i (1 - p_i)), p_i regularized
};

struct FitOptions {
  Weighting weighting = Weighting::kReciprocalTrials;
  bool fit_offset = false;
  int max_iterations = 200;
  double tolerance = 1e-10;
};

struct GaussianFit {
  double amplitude = 0.0;
  Frequency center;
  Frequency width_sigma;
  double offset = 0.0;
  // Parameter order: amplitude, center [Hz], width [Hz], offset (if fitted).
  // Sandwich estimate with binomial variance of each bin about the model.
  Eigen::MatrixXd covariance;
  // Inverse normal matrix scaled by chi2 / dof.
  Eigen::MatrixXd covariance_scaled;
  double chi2 = 0.0;
  int dof = 0;
  int iterations = 0;
  bool converged = false;
  Frequency reference;  // absolute frequency of the fit's zero offset

  Frequency center_sigma() const { return Frequency::from_hz_rounded(std::sqrt(covariance(1, 1))); }

  // Model value at an absolute frequency.
  double operator()(Frequency f) const {
    const double x = (f - center).to_hz();
    const double s = width_sigma.to_hz();
    return amplitude * std::exp(-(x * x) / (2.0 * s * s)) + offset;
  }
};

namespace detail {

struct FitProblem {
  std::vector<double> x;  // Hz relative to the first bin center
  std::vector<double> y;
  std::vector<double> w;
  std::vector<double> trials;
  bool offset = false;

  int n_params() const { return offset ? 4 : 3; }

  double model(const Eigen::VectorXd& t, double xi) const {
    const double d = xi - t(1);
    return t(0) * std::exp(-(d * d) / (2.0 * t(2) * t(2))) + (offset ? t(3) : 0.0);
  }

  double chi2(const Eigen::VectorXd& t) const {
    double c = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double r = y[i] - model(t, x[i]);
      c += w[i] * r * r;
    }
    return c;
  }

  Eigen::MatrixXd jacobian(const Eigen::VectorXd& t) const {
    Eigen::MatrixXd J(static_cast<Eigen::Index>(x.size()), n_params());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - t(1);
      const double s2 = t(2) * t(2);
      const double e = std::exp(-(d * d) / (2.0 * s2));
      const auto row = static_cast<Eigen::Index>(i);
      J(row, 0) = e;
      J(row, 1) = t(0) * e * d / s2;
      J(row, 2) = t(0) * e * d * d / (s2 * t(2));
      if (offset) J(row, 3) = 1.0;
    }
    return J;
  }
};

}  // namespace detail

// Weighted least squares fit of A exp(-(f - mu)^2 / 2 s^2) [+ c] to the bin
// probabilities by damped Gauss-Newton (Levenberg-Marquardt) iteration.
inline GaussianFit fit_gaussian(const Histogram& hist, const FitOptions& options = {}) {
  const auto& bins = hist.bins;
  if (bins.size() < 4) throw DataError("gaussian fit needs at least 4 non-empty bins, got " + std::to_string(bins.size()));
  if (std::none_of(bins.begin(), bins.end(), [](const HistogramBin& b) { return b.probability > 0.0; }))
    throw DataError("gaussian fit: no excitations in any bin");
  if (std::all_of(bins.begin(), bins.end(), [&](const HistogramBin& b) { return b.probability == bins[0].probability; }))
    throw DataError("gaussian fit: degenerate data, all probabilities equal");

  detail::FitProblem prob;
  prob.offset = options.fit_offset;
  const Frequency reference = bins.front().center;
  for (const auto& b : bins) {
    prob.x.push_back((b.center - reference).to_hz());
    prob.y.push_back(b.probability);
    prob.trials.push_back(static_cast<double>(b.trials));
    if (options.weighting == Weighting::kReciprocalTrials) {
      prob.w.push_back(1.0 / (b.sigma * b.sigma));
    } else {
      const double n = static_cast<double>(b.trials);
      const double p = (static_cast<double>(b.jumps) + 0.5) / (n + 1.0);
      prob.w.push_back(n / (p * (1.0 - p)));
    }
  }

  // Deterministic, scale-free start: weighted moments of the probabilities.
  double sp = 0.0, sx = 0.0, pmax = 0.0;
  for (std::size_t i = 0; i < prob.x.size(); ++i) {
    sp += prob.y[i];
    sx += prob.y[i] * prob.x[i];
    pmax = std::max(pmax, prob.y[i]);
  }
  const double mu0 = sx / sp;
  double var0 = 0.0;
  for (std::size_t i = 0; i < prob.x.size(); ++i) var0 += prob.y[i] * (prob.x[i] - mu0) * (prob.x[i] - mu0);
  const double width_hz = hist.bin_width.to_hz();
  const double s0 = std::max(std::sqrt(var0 / sp), width_hz / 2.0);

  const int k = prob.n_params();
  Eigen::VectorXd theta(k);
  theta(0) = pmax;
  theta(1) = mu0;
  theta(2) = s0;
  if (prob.offset) theta(3) = 0.0;

  GaussianFit fit;
  double chi2 = prob.chi2(theta);
  double lambda = 1e-3;
  const Eigen::VectorXd wv = Eigen::Map<const Eigen::VectorXd>(prob.w.data(), static_cast<Eigen::Index>(prob.w.size()));
  int it = 0;
  for (; it < options.max_iterations && !fit.converged; ++it) {
    const Eigen::MatrixXd J = prob.jacobian(theta);
    Eigen::VectorXd r(static_cast<Eigen::Index>(prob.x.size()));
    for (std::size_t i = 0; i < prob.x.size(); ++i) r(static_cast<Eigen::Index>(i)) = prob.y[i] - prob.model(theta, prob.x[i]);
    const Eigen::MatrixXd JtW = J.transpose() * wv.asDiagonal();
    const Eigen::MatrixXd H = JtW * J;
    const Eigen::VectorXd g = JtW * r;
    // Retry with growing damping until chi2 does not increase.
    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd A = H;
      for (int d = 0; d < k; ++d) A(d, d) += lambda * H(d, d);
      const Eigen::VectorXd step = A.ldlt().solve(g);
      Eigen::VectorXd trial = theta + step;
      trial(2) = std::abs(trial(2));
      const double trial_chi2 = prob.chi2(trial);
      if (std::isfinite(trial_chi2) && trial_chi2 <= chi2) {
        // Center changes are measured against the width, the rest relative to themselves.
        double rel = 0.0;
        rel = std::max(rel, std::abs(step(0)) / std::max(std::abs(trial(0)), 1e-300));
        rel = std::max(rel, std::abs(step(1)) / trial(2));
        rel = std::max(rel, std::abs(step(2)) / trial(2));
        if (prob.offset) rel = std::max(rel, std::abs(step(3)) / std::max(std::abs(trial(0)), 1e-300));
        theta = trial;
        chi2 = trial_chi2;
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
        if (rel < options.tolerance) fit.converged = true;
      } else {
        lambda *= 10.0;
        if (lambda > 1e16) {
          // No downhill direction left: the current point is the minimum.
          accepted = true;
          fit.converged = true;
        }
      }
    }
  }
  fit.iterations = it;
  if (!fit.converged) throw FitError("gaussian fit did not converge in " + std::to_string(options.max_iterations) + " iterations");
  theta(2) = std::abs(theta(2));
  if (theta(2) < width_hz / 10.0) throw FitError("gaussian fit: width collapsed below a tenth of the bin width");
  if (!(theta(0) > 0.0)) throw FitError("gaussian fit: non-positive amplitude");

  fit.amplitude = theta(0);
  fit.reference = reference;
  fit.center = reference + Frequency::from_hz_rounded(theta(1));
  fit.width_sigma = Frequency::from_hz_rounded(theta(2));
  fit.offset = prob.offset ? theta(3) : 0.0;
  fit.chi2 = chi2;
  fit.dof = static_cast<int>(prob.x.size()) - k;

  const Eigen::MatrixXd J = prob.jacobian(theta);
  const Eigen::MatrixXd JtW = J.transpose() * wv.asDiagonal();
  const Eigen::MatrixXd Hinv = (JtW * J).inverse();
  Eigen::VectorXd v(static_cast<Eigen::Index>(prob.x.size()));
  for (std::size_t i = 0; i < prob.x.size(); ++i) {
    const double m = std::clamp(prob.model(theta, prob.x[i]), 0.0, 1.0);
    v(static_cast<Eigen::Index>(i)) = m * (1.0 - m) / prob.trials[i];
  }
  fit.covariance = Hinv * (JtW * v.asDiagonal() * JtW.transpose()) * Hinv;
  fit.covariance_scaled = Hinv * (fit.dof > 0 ? chi2 / fit.dof : 0.0);
  return fit;
}

// ---------------------------------------------------------------------------
// Sessions

struct SessionResult {
  int session_id = 0;
  Frequency center_fB;
  Frequency stat_sigma;
  std::int64_t jump_count = 0;
  int spectra_count = 0;
  GaussianFit fit;
  Histogram histogram;
  std::size_t dropped_gates = 0;
};

struct AnalysisOptions {
  Frequency bin_width = Frequency::from_hz(30);
  Frequency slip_threshold = default_slip_threshold();
  int attempts_per_step = 16;
  BeatLabel label = BeatLabel::kCounted;
  BinCenter bin_center = BinCenter::kTrialMean;
  // Anchor bins at the lowest label instead of at 0 Hz, which makes the
  // whole reduction exactly translation-equivariant.
  bool data_anchored = true;
  FitOptions fit;
};

inline SessionResult analyze_session(int session_id, std::span<CounterReading> readings,
                                     std::span<const Frequency> monitor_deviations,
                                     std::span<const ExcitationRecord> excitations, int spectra,
                                     const AnalysisOptions& options = {}) {
  flag_lost_cycles(readings, monitor_deviations, options.slip_threshold);
  const FilterResult kept = filter_records(readings, excitations, options.attempts_per_step, options.label);
  if (kept.records.empty()) throw DataError("session " + std::to_string(session_id) + ": no valid records");
  Frequency anchor;
  if (options.data_anchored) {
    anchor = std::min_element(kept.records.begin(), kept.records.end(),
                              [](const JointRecord& a, const JointRecord& b) { return a.fB < b.fB; })
                 ->fB;
  }
  SessionResult s;
  s.session_id = session_id;
  s.histogram = bin_records(kept.records, options.bin_width, anchor, options.bin_center);
  try {
    s.fit = fit_gaussian(s.histogram, options.fit);
  } catch (const DataError& e) {
    throw DataError("session " + std::to_string(session_id) + ": " + e.what());
  }
  s.center_fB = s.fit.center;
  s.stat_sigma = s.fit.center_sigma();
  s.jump_count = std::count_if(kept.records.begin(), kept.records.end(), [](const JointRecord& r) { return r.jumped; });
  s.spectra_count = spectra;
  s.dropped_gates = kept.dropped_gates;
  return s;
}

struct SessionAverage {
  UncertainFrequency mean;  // sigma: the reference-limited value supplied
  Frequency sem;            // standard error of the mean of the centers
  Frequency stat_sigma;     // sqrt(sum stat_sigma_i^2) / N from the fits
};

inline SessionAverage average_sessions(std::span<const SessionResult> sessions, Frequency reference_sigma) {
  if (sessions.empty()) throw DataError("no sessions to average");
  if (reference_sigma < Frequency{}) throw ConfigError("reference sigma must be non-negative");
  const auto n = static_cast<Int128>(sessions.size());
  Int128 sum = 0;
  Int128 stat_sq = 0;
  for (const auto& s : sessions) {
    sum = detail::checked_add(sum, s.center_fB.ticks());
    stat_sq = detail::checked_add(stat_sq, detail::checked_mul(s.stat_sigma.ticks(), s.stat_sigma.ticks()));
  }
  const Frequency mean = Frequency::from_ticks(detail::floor_div(2 * sum + n, 2 * n));
  Frequency sem;
  if (sessions.size() > 1) {
    // Deviations are small; long double keeps them exact to well below 1 uHz.
    long double ss = 0.0L;
    for (const auto& s : sessions) {
      const long double d = static_cast<long double>((s.center_fB - mean).ticks());
      ss += d * d;
    }
    const long double nn = static_cast<long double>(sessions.size());
    sem = Frequency::from_ticks(static_cast<Int128>(std::llround(std::sqrt(ss / (nn * (nn - 1.0L))))));
  }
  return {UncertainFrequency(mean, reference_sigma), sem, sqrt_rounded(Ratio(stat_sq, n * n))};
}

// ---------------------------------------------------------------------------
// Final result

struct BudgetItem {
  std::string symbol;
  Ratio coefficient;
  Frequency sigma;
  Frequency contribution;  // |coefficient| * sigma
};

struct FinalResult {
  SessionAverage mean_fB;
  UncertainFrequency f_target;
  Frequency target_stat_sigma;  // |c_fB| * statistical sigma of the mean
  double fractional_uncertainty = 0.0;
  std::vector<BudgetItem> budget;
};

// values/sigmas: every symbol of the equation except the counted beat.
inline FinalResult compute_final(const MeasurementEquation& eq, const SessionAverage& mean_fB,
                                 const std::string& counted_symbol, Assignment values, Assignment sigmas) {
  values[counted_symbol] = mean_fB.mean.value;
  sigmas[counted_symbol] = mean_fB.mean.sigma;
  FinalResult out;
  out.mean_fB = mean_fB;
  const Frequency value = evaluate(eq, values);
  const Frequency sigma = propagate_uncertainty(eq, sigmas);
  out.f_target = UncertainFrequency(value, sigma);
  for (const auto& [sym, c] : eq.terms) {
    const auto it = sigmas.find(sym);
    if (c.is_zero() || it == sigmas.end() || it->second == Frequency{}) continue;
    const Ratio prod = c.abs() * Ratio(it->second.ticks());
    out.budget.push_back({sym, c, it->second, sqrt_rounded(prod * prod)});
  }
  const Ratio c_fB = eq.coefficient(counted_symbol).abs();
  const Ratio stat = c_fB * Ratio(mean_fB.stat_sigma.ticks());
  out.target_stat_sigma = sqrt_rounded(stat * stat);
  out.fractional_uncertainty =
      value == Frequency{} ? 0.0
                           : static_cast<double>(static_cast<long double>(sigma.ticks()) /
                                                 std::fabs(static_cast<long double>(value.ticks())));
  return out;
}

inline FinalResult compute_final(const MeasurementEquation& eq, const UncertainFrequency& mean_fB,
                                 const std::string& counted_symbol, Assignment values, Assignment sigmas) {
  return compute_final(eq, SessionAverage{mean_fB, {}, {}}, counted_symbol, std::move(values), std::move(sigmas));
}

}  // namespace freqchain
