#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sslink/bits.hpp"
#include "sslink/error.hpp"
#include "sslink/signal.hpp"

namespace sslink::pulse {

inline constexpr int kAddressBits = 6;
inline constexpr std::size_t kCodeBits = 14;
inline constexpr std::uint8_t kMaxAddress = 63;

inline constexpr double kPrtOneUs = 800.0;
inline constexpr double kPrtZeroUs = 600.0;
inline constexpr double kThresholdUs = 700.0;
inline constexpr double kGuardUs = 10.0;
inline constexpr double kSampleRate = 100'000.0;  // one sample per 10 us counter tick
inline constexpr double kAmplitudeVolts = 0.020;

/// 14-bit handshake code: [start][src:6][dst:6][ack], addresses MSB first.
struct HandshakeCode {
  bool start = true;
  std::uint8_t src = 0;
  std::uint8_t dst = 0;
  bool ack = false;

  friend bool operator==(const HandshakeCode&, const HandshakeCode&) = default;
};

inline void check_address(unsigned a, const char* which) {
  if (a == 0 || a > kMaxAddress)
    throw Error(Errc::invalid_address, std::string(which) + " address " + std::to_string(a) + " outside 1..63");
}

inline HandshakeCode build_code(unsigned src, unsigned dst, bool ack) {
  check_address(src, "source");
  check_address(dst, "destination");
  return {true, static_cast<std::uint8_t>(src), static_cast<std::uint8_t>(dst), ack};
}

/// The responder's reply: addresses interchanged, acknowledgement set.
inline HandshakeCode make_reply(const HandshakeCode& request) { return build_code(request.dst, request.src, true); }

inline Bits serialize_bits(const HandshakeCode& code) {
  check_address(code.src, "source");
  check_address(code.dst, "destination");
  Bits out;
  out.reserve(kCodeBits);
  out.push_back(to_bit(code.start));
  append_field(out, code.src, kAddressBits);
  append_field(out, code.dst, kAddressBits);
  out.push_back(to_bit(code.ack));
  return out;
}

inline HandshakeCode parse_bits(std::span<const Bit> bits) {
  if (bits.size() != kCodeBits)
    throw Error(Errc::bad_length, "expected 14 bits, got " + std::to_string(bits.size()));
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i] == Bit::erasure) throw Error(Errc::erasure_present, "erasure at bit " + std::to_string(i));
  if (bits[0] != Bit::one) throw Error(Errc::bad_start_bit, "start bit is 0");
  HandshakeCode c;
  c.start = true;
  c.src = static_cast<std::uint8_t>(read_field(bits, 1, kAddressBits));
  c.dst = static_cast<std::uint8_t>(read_field(bits, 1 + kAddressBits, kAddressBits));
  c.ack = bits[kCodeBits - 1] == Bit::one;
  check_address(c.src, "source");
  check_address(c.dst, "destination");
  return c;
}

struct PulseTrain {
  SampleBuffer signal;  // volts
  double amplitude = kAmplitudeVolts;
};

inline std::size_t prt_samples(double prt_us, double sample_rate) {
  const double n = prt_us * 1e-6 * sample_rate;
  const double half = n / 2.0;
  if (std::abs(half - std::round(half)) > 1e-9)
    throw Error(Errc::non_integral_prt, std::to_string(prt_us) + " us is not an even sample count at " +
                                            std::to_string(sample_rate) + " Hz");
  return static_cast<std::size_t>(std::llround(n));
}

inline double prt_of(Bit b) {
  if (b == Bit::erasure) throw Error(Errc::erasure_present, "cannot transmit an erasure");
  return b == Bit::one ? kPrtOneUs : kPrtZeroUs;
}

/// Square-wave PRT train. Every bit is one 50% duty period bounded by falling
/// edges: low for PRT/2, then high for PRT/2. The line is held high for half
/// of the first period before the first bit and drops low for half of the last
/// period after the final bit, so n bits produce n + 1 falling edges.
inline PulseTrain encode_pulses(std::span<const Bit> bits, double sample_rate = kSampleRate,
                                double amplitude = kAmplitudeVolts) {
  PulseTrain t;
  t.amplitude = amplitude;
  t.signal.sample_rate = sample_rate;
  const std::size_t one = prt_samples(kPrtOneUs, sample_rate);
  const std::size_t zero = prt_samples(kPrtZeroUs, sample_rate);
  if (bits.empty()) return t;
  auto len = [&](Bit b) { return prt_of(b) == kPrtOneUs ? one : zero; };

  auto& s = t.signal.samples;
  s.insert(s.end(), len(bits.front()) / 2, amplitude);
  for (Bit b : bits) {
    const std::size_t n = len(b);
    s.insert(s.end(), n / 2, 0.0);
    s.insert(s.end(), n / 2, amplitude);
  }
  s.insert(s.end(), len(bits.back()) / 2, 0.0);
  return t;
}

/// What a radio hands back to the codec: the same PRT framing as
/// encode_pulses, but each period is one sine cycle instead of a square wave.
inline SampleBuffer sine_pulse_train(std::span<const Bit> bits, double sample_rate = kSampleRate,
                                     double amplitude = kAmplitudeVolts) {
  SampleBuffer out;
  out.sample_rate = sample_rate;
  if (bits.empty()) return out;
  auto half_cycle = [&](double prt_us, double sign) {
    const std::size_t n = static_cast<std::size_t>(std::llround(prt_us * 1e-6 * sample_rate / 2.0));
    for (std::size_t i = 0; i < n; ++i)
      out.samples.push_back(sign * amplitude * std::sin(std::numbers::pi * (static_cast<double>(i) + 0.5) /
                                                        static_cast<double>(n)));
  };
  half_cycle(prt_of(bits.front()), +1.0);
  for (Bit b : bits) {
    half_cycle(prt_of(b), -1.0);
    half_cycle(prt_of(b), +1.0);
  }
  half_cycle(prt_of(bits.back()), -1.0);
  return out;
}

struct PrtMeasurement {
  double period_us = 0.0;
  Bit bit = Bit::erasure;
};

inline Bit classify_prt(double period_us) {
  if (std::abs(period_us - kThresholdUs) <= kGuardUs) return Bit::erasure;
  return period_us > kThresholdUs ? Bit::one : Bit::zero;
}

namespace detail {

/// Centered sliding-window min and max (monotone deques).
inline void sliding_min_max(std::span<const double> x, std::size_t half, std::vector<double>& lo,
                            std::vector<double>& hi) {
  const std::size_t n = x.size();
  lo.assign(n, 0.0);
  hi.assign(n, 0.0);
  std::deque<std::size_t> qmin, qmax;
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t right = std::min(n - 1, i + half);
    for (; next <= right; ++next) {
      while (!qmin.empty() && x[qmin.back()] >= x[next]) qmin.pop_back();
      qmin.push_back(next);
      while (!qmax.empty() && x[qmax.back()] <= x[next]) qmax.pop_back();
      qmax.push_back(next);
    }
    const std::size_t left = i >= half ? i - half : 0;
    while (qmin.front() < left) qmin.pop_front();
    while (qmax.front() < left) qmax.pop_front();
    lo[i] = x[qmin.front()];
    hi[i] = x[qmax.front()];
  }
}

}  // namespace detail

/// Hard-limits `analog` at the midpoint of its running min/max (window of
/// +/-1 ms, with 10% hysteresis) and times the gaps between falling edges.
inline std::vector<PrtMeasurement> recover_pulses(const SampleBuffer& analog) {
  const auto& x = analog.samples;
  std::vector<double> lo, hi;
  const auto half = static_cast<std::size_t>(std::llround(1e-3 * analog.sample_rate));
  detail::sliding_min_max(x, half, lo, hi);

  std::vector<double> falling;  // sample positions, interpolated to the threshold crossing
  bool high = false;
  bool primed = false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double mid = 0.5 * (lo[i] + hi[i]);
    const double hyst = 0.1 * 0.5 * (hi[i] - lo[i]);
    if (hi[i] - lo[i] <= 0.0) continue;
    if (!primed) {
      high = x[i] > mid;
      primed = true;
      continue;
    }
    if (high && x[i] < mid - hyst) {
      high = false;
      // Count the edge at the first sample below the midpoint, like a counter
      // latching on the comparator transition.
      std::size_t k = i;
      while (k > 0 && x[k - 1] < mid) --k;
      falling.push_back(static_cast<double>(k));
    } else if (!high && x[i] > mid + hyst) {
      high = true;
    }
  }
  if (falling.size() < 2)
    throw Error(Errc::no_edges, "found " + std::to_string(falling.size()) + " falling edge(s), need 2");

  std::vector<PrtMeasurement> out;
  out.reserve(falling.size() - 1);
  for (std::size_t i = 1; i < falling.size(); ++i) {
    const double us = (falling[i] - falling[i - 1]) / analog.sample_rate * 1e6;
    out.push_back({us, classify_prt(us)});
  }
  return out;
}

inline Bits bits_of(const std::vector<PrtMeasurement>& m) {
  Bits b;
  b.reserve(m.size());
  for (const auto& x : m) b.push_back(x.bit);
  return b;
}

}  // namespace sslink::pulse
