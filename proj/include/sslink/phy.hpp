#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sslink/bits.hpp"
#include "sslink/error.hpp"
#include "sslink/signal.hpp"

namespace sslink::phy {

// ---------------------------------------------------------------------------
// PN sequences

/// Maximal-length sequence from a Fibonacci LFSR, chips mapped 0 -> +1, 1 -> -1.
class PnSequence {
 public:
  PnSequence() = default;

  /// `taps` are 1-based register positions of the feedback polynomial,
  /// e.g. {7, 6} for x^7 + x^6 + 1.
  static PnSequence from_lfsr(int degree, const std::vector<int>& taps, std::uint32_t seed = 1) {
    if (degree < 2 || degree > 31) throw Error(Errc::invalid_argument, "LFSR degree out of range");
    for (int t : taps)
      if (t < 1 || t > degree) throw Error(Errc::invalid_argument, "LFSR tap outside register");
    const std::uint32_t mask = (1U << degree) - 1U;
    std::uint32_t state = seed & mask;
    if (state == 0) throw Error(Errc::invalid_argument, "LFSR seed must be non-zero");

    PnSequence pn;
    pn.taps_ = taps;
    const std::size_t n = (std::size_t{1} << degree) - 1;
    pn.chips_.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t out = state >> (degree - 1) & 1U;
      pn.chips_.push_back(out ? -1 : 1);
      std::uint32_t fb = 0;
      for (int t : taps) fb ^= state >> (t - 1) & 1U;
      state = (state << 1 | fb) & mask;
    }
    return pn;
  }

  /// Default tap sets for the supported lengths (31, 63, 127).
  static PnSequence standard(std::size_t length = 127) {
    switch (length) {
      case 31: return from_lfsr(5, {5, 3});
      case 63: return from_lfsr(6, {6, 5});
      case 127: return from_lfsr(7, {7, 6});
      default: throw Error(Errc::invalid_argument, "no standard m-sequence of length " + std::to_string(length));
    }
  }

  std::size_t length() const noexcept { return chips_.size(); }
  std::span<const std::int8_t> chips() const noexcept { return chips_; }
  const std::vector<int>& taps() const noexcept { return taps_; }

  /// Periodic autocorrelation at `lag`.
  long autocorrelation(std::size_t lag) const {
    long acc = 0;
    const std::size_t n = chips_.size();
    for (std::size_t i = 0; i < n; ++i) acc += chips_[i] * chips_[(i + lag) % n];
    return acc;
  }

 private:
  std::vector<std::int8_t> chips_;
  std::vector<int> taps_;
};

inline double processing_gain_db(std::size_t chips_per_bit) {
  return 10.0 * std::log10(static_cast<double>(chips_per_bit));
}

// ---------------------------------------------------------------------------
// DSSS

inline std::vector<std::int8_t> spread(std::span<const Bit> bits, const PnSequence& pn) {
  std::vector<std::int8_t> out;
  out.reserve(bits.size() * pn.length());
  for (Bit b : bits) {
    if (b == Bit::erasure) throw Error(Errc::erasure_present, "cannot spread an erasure");
    const std::int8_t s = b == Bit::one ? 1 : -1;
    for (auto c : pn.chips()) out.push_back(static_cast<std::int8_t>(s * c));
  }
  return out;
}

struct Despread {
  Bits bits;
  std::vector<double> margin;  // |<r, pn>| / sqrt(N * <r, r>), 1.0 for a clean aligned bit
  std::vector<double> energy;  // mean received power per chip
};

/// Correlates each N-chip block against the code. The margin is the
/// normalized correlation coefficient, so it reads 1.0 for clean chips of any
/// amplitude and falls towards 1/sqrt(N) when the block is dominated by
/// energy uncorrelated with the code.
inline Despread despread(std::span<const double> chips, const PnSequence& pn) {
  const std::size_t n = pn.length();
  if (n == 0 || chips.size() % n != 0)
    throw Error(Errc::bad_length, std::to_string(chips.size()) + " chips is not a multiple of " + std::to_string(n));
  Despread d;
  const std::size_t nbits = chips.size() / n;
  d.bits.reserve(nbits);
  d.margin.reserve(nbits);
  d.energy.reserve(nbits);
  const auto code = pn.chips();
  for (std::size_t b = 0; b < nbits; ++b) {
    double corr = 0.0, energy = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double r = chips[b * n + k];
      corr += r * code[k];
      energy += r * r;
    }
    d.bits.push_back(energy == 0.0 ? Bit::erasure : to_bit(corr > 0.0));
    d.margin.push_back(energy > 0.0 ? std::abs(corr) / std::sqrt(static_cast<double>(n) * energy) : 0.0);
    d.energy.push_back(energy / static_cast<double>(n));
  }
  return d;
}

inline Despread despread(std::span<const std::int8_t> chips, const PnSequence& pn) {
  std::vector<double> r(chips.begin(), chips.end());
  return despread(r, pn);
}

// ---------------------------------------------------------------------------
// FSK

namespace detail {

inline std::size_t bit_boundary(std::size_t k, double sample_rate, double bit_rate) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(k) * sample_rate / bit_rate));
}

}  // namespace detail

/// Continuous-phase binary FSK, unit amplitude: one -> mark, zero -> space.
inline SampleBuffer fsk_modulate(std::span<const Bit> bits, double mark_hz, double space_hz, double bit_rate,
                                 double sample_rate) {
  if (mark_hz == space_hz) throw Error(Errc::invalid_argument, "mark and space frequencies coincide");
  if (mark_hz >= sample_rate / 2 || space_hz >= sample_rate / 2)
    throw Error(Errc::aliasing, "tone at or above Nyquist (" + std::to_string(sample_rate / 2) + " Hz)");
  if (bit_rate <= 0) throw Error(Errc::invalid_argument, "bit rate must be positive");
  SampleBuffer out;
  out.sample_rate = sample_rate;
  out.samples.reserve(detail::bit_boundary(bits.size(), sample_rate, bit_rate));
  double phase = 0.0;
  for (std::size_t k = 0; k < bits.size(); ++k) {
    if (bits[k] == Bit::erasure) throw Error(Errc::erasure_present, "cannot modulate an erasure");
    const double f = bits[k] == Bit::one ? mark_hz : space_hz;
    const double step = 2.0 * std::numbers::pi * f / sample_rate;
    const std::size_t end = detail::bit_boundary(k + 1, sample_rate, bit_rate);
    for (std::size_t n = detail::bit_boundary(k, sample_rate, bit_rate); n < end; ++n) {
      out.samples.push_back(std::sin(phase));
      phase = std::fmod(phase + step, 2.0 * std::numbers::pi);
    }
  }
  return out;
}

struct FskBits {
  Bits bits;
  std::vector<double> confidence;  // |Em - Es| / (Em + Es), 0 for a silent bit
};

/// Two non-coherent single-frequency correlators per bit period.
inline FskBits fsk_demodulate(const SampleBuffer& buf, double mark_hz, double space_hz, double bit_rate) {
  FskBits out;
  const double fs = buf.sample_rate;
  const std::size_t nbits =
      static_cast<std::size_t>(std::floor(static_cast<double>(buf.size()) * bit_rate / fs + 1e-9));
  const double wm = 2.0 * std::numbers::pi * mark_hz / fs;
  const double ws = 2.0 * std::numbers::pi * space_hz / fs;
  for (std::size_t k = 0; k < nbits; ++k) {
    std::complex<double> cm, cs;
    const std::size_t end = std::min(buf.size(), detail::bit_boundary(k + 1, fs, bit_rate));
    for (std::size_t n = detail::bit_boundary(k, fs, bit_rate); n < end; ++n) {
      const double x = buf.samples[n];
      const double t = static_cast<double>(n);
      cm += x * std::polar(1.0, -wm * t);
      cs += x * std::polar(1.0, -ws * t);
    }
    const double em = std::norm(cm), es = std::norm(cs);
    if (em + es <= 1e-18) {
      out.bits.push_back(Bit::erasure);
      out.confidence.push_back(0.0);
    } else {
      out.bits.push_back(to_bit(em > es));
      out.confidence.push_back(std::abs(em - es) / (em + es));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Channel plan, jammer and channel model

struct ChannelPlan {
  double base_hz = 902e6;
  double top_hz = 928e6;
  double spacing_hz = 1e6;
  int channel_count = 26;

  double carrier(int channel) const {
    if (!contains(channel)) throw Error(Errc::invalid_argument, "channel " + std::to_string(channel) + " outside plan");
    return base_hz + channel * spacing_hz + spacing_hz / 2.0;
  }
  bool contains(int channel) const { return channel >= 0 && channel < channel_count; }

  void validate() const {
    if (channel_count < 1) throw Error(Errc::config, "channel plan needs at least one channel");
    if (base_hz + (channel_count - 1) * spacing_hz + spacing_hz / 2.0 >= top_hz)
      throw Error(Errc::config, "channel plan exceeds the band top");
  }
};

/// A tone that steps through `order`, `dwell_s` seconds per entry, starting at
/// `start_s`. After each step the tone's in-channel power levels in with time
/// constant `settle_s`: P(s) = P * (1 - exp(-s / settle_s)), s being the time
/// since it arrived on the current channel.
struct SweepJammer {
  bool enabled = false;
  double dwell_s = 0.1;
  double power_dbm = 0.0;
  std::vector<int> order;
  double start_s = 0.0;
  double settle_s = 0.3;
  double tone_hz = 12345.0;

  static std::vector<int> ascending(int channels) {
    std::vector<int> o(static_cast<std::size_t>(channels));
    for (int i = 0; i < channels; ++i) o[static_cast<std::size_t>(i)] = i;
    return o;
  }

  bool active_at(double t) const { return enabled && !order.empty() && t >= start_s; }

  std::optional<int> channel_at(double t) const {
    if (!active_at(t)) return std::nullopt;
    return order[slot_at(t) % order.size()];
  }

  /// Time the tone arrived on the channel it occupies at `t`.
  double arrival(double t) const {
    std::size_t slot = slot_at(t);
    const int ch = order[slot % order.size()];
    std::size_t steps = 0;
    while (slot > 0 && order[(slot - 1) % order.size()] == ch && steps < order.size()) {
      --slot;
      ++steps;
    }
    if (steps == order.size()) return start_s;  // parked
    return start_s + static_cast<double>(slot) * dwell_s;
  }

  /// Linear in-channel power at `t` on `channel` (0 when elsewhere).
  double power_on(int channel, double t) const {
    const auto ch = channel_at(t);
    if (!ch || *ch != channel) return 0.0;
    const double p = db_to_power(power_dbm);
    if (settle_s <= 0.0) return p;
    return p * (1.0 - std::exp(-(t - arrival(t)) / settle_s));
  }

  void validate(const ChannelPlan& plan) const {
    if (dwell_s <= 0.0) throw Error(Errc::config, "jammer dwell must be positive");
    for (int c : order)
      if (!plan.contains(c)) throw Error(Errc::config, "jammer order names channel " + std::to_string(c));
  }

 private:
  std::size_t slot_at(double t) const {
    return static_cast<std::size_t>(std::floor((t - start_s) / dwell_s + 1e-12));
  }
};

struct ChannelState {
  int active_channel = 0;
  double noise_dbm = -INFINITY;
  SweepJammer jammer;
};

/// Adds noise and (when the jammer sits on `state.active_channel`) the jamming
/// tone to `x` in place; x[0] is at time `t0`.
template <class Rng>
void apply_channel(std::span<double> x, double sample_rate, const ChannelState& state, double t0, Rng& rng) {
  const double np = db_to_power(state.noise_dbm);
  if (np > 0.0) {
    std::normal_distribution<double> nd(0.0, std::sqrt(np));
    for (double& v : x) v += nd(rng);
  }
  const auto& j = state.jammer;
  if (!j.enabled) return;
  const double w = 2.0 * std::numbers::pi * j.tone_hz;
  for (std::size_t n = 0; n < x.size(); ++n) {
    const double t = t0 + static_cast<double>(n) / sample_rate;
    const double p = j.power_on(state.active_channel, t);
    if (p > 0.0) x[n] += std::sqrt(2.0 * p) * std::cos(w * t);
  }
}

template <class Rng>
SampleBuffer channel_transmit(const SampleBuffer& buf, const ChannelState& state, double t, Rng& rng) {
  SampleBuffer out = buf;
  apply_channel(std::span<double>(out.samples), out.sample_rate, state, t, rng);
  return out;
}

/// Next channel above `state.active_channel` (cyclically) that the jammer does
/// not occupy at `t`.
inline int next_free_channel(const ChannelState& state, const ChannelPlan& plan, double t) {
  const auto jammed = state.jammer.channel_at(t);
  for (int step = 1; step < plan.channel_count; ++step) {
    const int c = (state.active_channel + step) % plan.channel_count;
    if (!jammed || *jammed != c) return c;
  }
  throw Error(Errc::no_free_channel, "every other channel is occupied");
}

}  // namespace sslink::phy
