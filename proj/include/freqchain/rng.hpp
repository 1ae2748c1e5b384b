#pragma once

// Seeded random streams with bit-reproducible output on every conforming
// standard library. std::mt19937_64 and std::seed_seq have fully specified
// output; the std::*_distribution templates do not, so the variates used by
// the simulators are derived here from raw engine words.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace freqchain {

// Independent stream tags. A stream is identified by (scenario seed, tag,
// index), so the result of a session never depends on which thread ran it or
// in what order.
enum class StreamTag : std::uint32_t {
  kBeatCounter = 1,
  kIonSession = 2,
  kCombJitter = 3,
  kGeneric = 99,
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : Rng(seed, StreamTag::kGeneric, 0) {}

  Rng(std::uint64_t seed, StreamTag tag, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(index >> 32)};
    engine_.seed(seq);
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1], safe for log().
  double uniform_open0() { return 1.0 - uniform(); }

  // Uniform integer in [lo, hi], unbiased by rejection.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(engine_());
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return lo + static_cast<std::int64_t>(x % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform_open0()));
    const double theta = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  double exponential(double mean) { return -mean * std::log(uniform_open0()); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace freqchain
