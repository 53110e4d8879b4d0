#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "sslink/error.hpp"

namespace sslink {

/// Real-valued discrete-time signal with an explicit sample rate in Hz.
struct SampleBuffer {
  std::vector<double> samples;
  double sample_rate = 8000.0;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  double duration() const noexcept { return static_cast<double>(samples.size()) / sample_rate; }

  std::span<const double> view() const noexcept { return samples; }

  void append(const SampleBuffer& other) {
    samples.insert(samples.end(), other.samples.begin(), other.samples.end());
  }
};

inline double db_to_power(double db) { return std::pow(10.0, db / 10.0); }
inline double power_to_db(double p) { return 10.0 * std::log10(p); }

inline double mean_power(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

/// Adds a sinusoid of the given amplitude in place, phase measured from sample 0.
inline void add_tone(std::span<double> x, double freq_hz, double amplitude, double sample_rate,
                     double phase = 0.0) {
  const double w = 2.0 * std::numbers::pi * freq_hz / sample_rate;
  for (std::size_t n = 0; n < x.size(); ++n) x[n] += amplitude * std::sin(w * static_cast<double>(n) + phase);
}

/// Adds white Gaussian noise so that signal power / noise power equals `snr_db`.
/// Signal power is measured over the whole buffer.
template <class Rng>
void add_noise_snr(SampleBuffer& buf, double snr_db, Rng& rng) {
  const double ps = mean_power(buf.samples);
  const double sigma = std::sqrt(ps / db_to_power(snr_db));
  std::normal_distribution<double> nd(0.0, sigma);
  for (double& v : buf.samples) v += nd(rng);
}

}  // namespace sslink
