#pragma once

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

#include "sslink/error.hpp"
#include "sslink/signal.hpp"

namespace sslink {

struct SpectralPeak {
  double frequency = 0.0;  // Hz
  double magnitude = 0.0;
};

namespace detail {

// The FFTW planner is not re-entrant; execution is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace detail

/// Magnitude spectrum of a Hann-windowed, zero-padded buffer. Bin k sits at
/// k * sample_rate / fft_size for k in [0, fft_size/2].
class MagnitudeSpectrum {
 public:
  MagnitudeSpectrum(std::span<const double> x, double sample_rate, std::size_t min_fft_size = 8192)
      : sample_rate_(sample_rate) {
    fft_size_ = std::bit_ceil(std::max(min_fft_size, x.size()));
    const std::size_t nout = fft_size_ / 2 + 1;

    double* in = fftw_alloc_real(fft_size_);
    fftw_complex* out = fftw_alloc_complex(nout);
    fftw_plan plan;
    {
      std::lock_guard lock(detail::fftw_planner_mutex());
      plan = fftw_plan_dft_r2c_1d(static_cast<int>(fft_size_), in, out, FFTW_ESTIMATE);
    }

    const std::size_t n = x.size();
    for (std::size_t i = 0; i < fft_size_; ++i) in[i] = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = n > 1 ? 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                                    static_cast<double>(n - 1))
                             : 1.0;
      in[i] = x[i] * w;
    }
    fftw_execute(plan);

    mag_.resize(nout);
    for (std::size_t k = 0; k < nout; ++k) mag_[k] = std::hypot(out[k][0], out[k][1]);

    {
      std::lock_guard lock(detail::fftw_planner_mutex());
      fftw_destroy_plan(plan);
    }
    fftw_free(in);
    fftw_free(out);
  }

  std::size_t fft_size() const noexcept { return fft_size_; }
  double bin_width() const noexcept { return sample_rate_ / static_cast<double>(fft_size_); }
  std::span<const double> magnitudes() const noexcept { return mag_; }

  std::size_t bin_of(double hz) const {
    const double b = std::round(hz / bin_width());
    return static_cast<std::size_t>(std::clamp(b, 0.0, static_cast<double>(mag_.size() - 1)));
  }

  /// Sub-bin refinement of a local maximum: parabola through the log
  /// magnitudes of the three bins around `k`.
  SpectralPeak refine(std::size_t k) const {
    if (k == 0 || k + 1 >= mag_.size()) return {static_cast<double>(k) * bin_width(), mag_[k]};
    const double tiny = 1e-300;
    const double a = std::log(mag_[k - 1] + tiny);
    const double b = std::log(mag_[k] + tiny);
    const double c = std::log(mag_[k + 1] + tiny);
    const double denom = a - 2.0 * b + c;
    double delta = denom != 0.0 ? 0.5 * (a - c) / denom : 0.0;
    delta = std::clamp(delta, -0.5, 0.5);
    const double peak_log = b - 0.25 * (a - c) * delta;
    return {(static_cast<double>(k) + delta) * bin_width(), std::exp(peak_log)};
  }

  /// Strict local maxima in [lo, hi] (inclusive bin range), strongest first.
  std::vector<std::size_t> local_maxima(std::size_t lo, std::size_t hi) const {
    std::vector<std::size_t> idx;
    lo = std::max<std::size_t>(lo, 1);
    hi = std::min(hi, mag_.size() - 2);
    double top = 0.0;
    for (std::size_t k = lo; k <= hi; ++k) top = std::max(top, mag_[k]);
    if (top <= 0.0) return idx;
    const double floor = top * 1e-6;
    for (std::size_t k = lo; k <= hi; ++k) {
      if (mag_[k] > floor && mag_[k] > mag_[k - 1] && mag_[k] >= mag_[k + 1]) idx.push_back(k);
    }
    std::stable_sort(idx.begin(), idx.end(), [&](auto i, auto j) { return mag_[i] > mag_[j]; });
    return idx;
  }

 private:
  double sample_rate_;
  std::size_t fft_size_ = 0;
  std::vector<double> mag_;
};

inline constexpr std::size_t kMinPeakSearchSamples = 256;

/// Up to `max_peaks` spectral peaks, strongest first, with sub-bin frequency
/// estimates. Throws buffer_too_short below 256 samples.
inline std::vector<SpectralPeak> spectrum_peaks(const SampleBuffer& buf, std::size_t max_peaks) {
  if (buf.size() < kMinPeakSearchSamples)
    throw Error(Errc::buffer_too_short, "need at least 256 samples, got " + std::to_string(buf.size()));
  MagnitudeSpectrum spec(buf.samples, buf.sample_rate);
  const auto idx = spec.local_maxima(1, spec.magnitudes().size() - 2);
  std::vector<SpectralPeak> peaks;
  for (std::size_t i = 0; i < idx.size() && peaks.size() < max_peaks; ++i) peaks.push_back(spec.refine(idx[i]));
  return peaks;
}

}  // namespace sslink
