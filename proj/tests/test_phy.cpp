#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "sslink/phy.hpp"

using namespace sslink;
using namespace sslink::phy;

namespace {

Bits random_bits(std::size_t n, std::mt19937_64& rng) {
  Bits b(n);
  for (auto& x : b) x = to_bit(rng() & 1);
  return b;
}

SweepJammer parked(int channel, double dbm) {
  SweepJammer j;
  j.enabled = true;
  j.power_dbm = dbm;
  j.order = {channel};
  j.settle_s = 0.0;
  return j;
}

constexpr double kSignalDbm = -35.0;
constexpr double kChipRate = 127'000.0;

// BER and mean margin after despreading `nbits` random bits at the given
// jammer power (no thermal noise), each bit starting at a random tone phase.
struct JamRun {
  double ber = 0.0;
  double mean_margin = 0.0;
};

JamRun jam_run(double jam_dbm, double noise_dbm, std::size_t nbits, std::uint64_t seed) {
  const auto pn = PnSequence::standard(127);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ut(0.0, 1.0);
  const double amp = std::sqrt(db_to_power(kSignalDbm));
  ChannelState cs{0, noise_dbm, parked(0, jam_dbm)};
  std::size_t errors = 0;
  double margin = 0.0;
  std::vector<double> chips(pn.length());
  for (std::size_t b = 0; b < nbits; ++b) {
    const bool one = rng() & 1;
    for (std::size_t c = 0; c < pn.length(); ++c) chips[c] = (one ? amp : -amp) * pn.chips()[c];
    apply_channel(std::span<double>(chips), kChipRate, cs, ut(rng), rng);
    const auto d = despread(chips, pn);
    errors += d.bits[0] != to_bit(one);
    margin += d.margin[0];
  }
  return {static_cast<double>(errors) / static_cast<double>(nbits), margin / static_cast<double>(nbits)};
}

}  // namespace

class MSequence : public ::testing::TestWithParam<std::size_t> {};

TEST_P(MSequence, AutocorrelationTwoValued) {
  const auto pn = PnSequence::standard(GetParam());
  const long n = static_cast<long>(GetParam());
  ASSERT_EQ(pn.length(), GetParam());
  EXPECT_EQ(pn.autocorrelation(0), n);
  for (std::size_t lag = 1; lag < pn.length(); ++lag) EXPECT_EQ(pn.autocorrelation(lag), -1) << "lag " << lag;
}

TEST_P(MSequence, BalancedChips) {
  const auto pn = PnSequence::standard(GetParam());
  long sum = 0;
  for (auto c : pn.chips()) sum += c;
  EXPECT_EQ(sum, -1);  // one more 1 than 0 in the register output, mapped to -1
}

TEST_P(MSequence, SpreadDespreadRoundTrip) {
  const auto pn = PnSequence::standard(GetParam());
  std::mt19937_64 rng(GetParam());
  for (int trial = 0; trial < 50; ++trial) {
    const auto bits = random_bits(1 + rng() % 64, rng);
    const auto chips = spread(bits, pn);
    ASSERT_EQ(chips.size(), bits.size() * pn.length());
    const auto d = despread(chips, pn);
    ASSERT_EQ(d.bits, bits);
    for (double m : d.margin) EXPECT_DOUBLE_EQ(m, 1.0);
  }
}

INSTANTIATE_TEST_SUITE_P(Lengths, MSequence, ::testing::Values(31U, 63U, 127U));

TEST(PnSequence, Errors) {
  EXPECT_THROW(PnSequence::standard(100), Error);
  EXPECT_THROW(PnSequence::from_lfsr(7, {8}), Error);
  EXPECT_THROW(PnSequence::from_lfsr(7, {7, 6}, 0), Error);
}

TEST(PnSequence, ProcessingGain) {
  EXPECT_NEAR(processing_gain_db(127), 21.04, 0.005);
  EXPECT_NEAR(processing_gain_db(127), 21.0, 0.05);
}

TEST(Spread, PlusOneIsCodeMinusOneIsNegated) {
  const auto pn = PnSequence::standard(31);
  const auto p = spread(bits_from_string("1"), pn);
  const auto m = spread(bits_from_string("0"), pn);
  for (std::size_t i = 0; i < pn.length(); ++i) {
    EXPECT_EQ(p[i], pn.chips()[i]);
    EXPECT_EQ(m[i], -pn.chips()[i]);
  }
  EXPECT_THROW(spread(bits_from_string("x"), pn), Error);
}

TEST(Despread, MarginIsAmplitudeFree) {
  const auto pn = PnSequence::standard(127);
  const auto chips = spread(bits_from_string("1011"), pn);
  std::vector<double> r(chips.begin(), chips.end());
  for (double& v : r) v *= 0.0178;
  const auto d = despread(r, pn);
  EXPECT_EQ(to_string(d.bits), "1011");
  for (double m : d.margin) EXPECT_NEAR(m, 1.0, 1e-12);
}

TEST(Despread, LengthMustBeMultiple) {
  const auto pn = PnSequence::standard(127);
  std::vector<double> r(200, 1.0);
  try {
    despread(r, pn);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::bad_length);
  }
}

TEST(Despread, SilentBlockIsErasure) {
  const auto pn = PnSequence::standard(31);
  std::vector<double> r(31, 0.0);
  const auto d = despread(r, pn);
  EXPECT_EQ(d.bits[0], Bit::erasure);
  EXPECT_EQ(d.margin[0], 0.0);
}

TEST(Fsk, AllOnesIsMarkSinusoid) {
  const auto b = fsk_modulate(bits_from_string("1111"), 2400, 1200, 1250, 100'000);
  ASSERT_EQ(b.size(), 320U);
  for (std::size_t n = 0; n < b.size(); ++n)
    ASSERT_NEAR(b.samples[n], std::sin(2 * std::numbers::pi * 2400 * static_cast<double>(n) / 100'000), 1e-9);
}

TEST(Fsk, OneBitAt1250IsEightHundredMicroseconds) {
  const auto b = fsk_modulate(bits_from_string("1"), 2400, 1200, 1250, 100'000);
  EXPECT_NEAR(b.duration(), 800e-6, 1e-12);
}

TEST(Fsk, CleanRoundTrip) {
  const auto b = fsk_modulate(bits_from_string("10110"), 2400, 1200, 1250, 100'000);
  EXPECT_EQ(to_string(fsk_demodulate(b, 2400, 1200, 1250).bits), "10110");
  std::mt19937_64 rng(5);
  for (int i = 0; i < 20; ++i) {
    const auto bits = random_bits(100, rng);
    EXPECT_EQ(fsk_demodulate(fsk_modulate(bits, 2400, 1200, 1250, 100'000), 2400, 1200, 1250).bits, bits);
  }
}

TEST(Fsk, SilenceIsAllErasures) {
  SampleBuffer b;
  b.sample_rate = 100'000;
  b.samples.assign(800, 0.0);
  const auto d = fsk_demodulate(b, 2400, 1200, 1250);
  ASSERT_EQ(d.bits.size(), 10U);
  for (std::size_t i = 0; i < d.bits.size(); ++i) {
    EXPECT_EQ(d.bits[i], Bit::erasure);
    EXPECT_EQ(d.confidence[i], 0.0);
  }
}

TEST(Fsk, PhaseContinuity) {
  std::mt19937_64 rng(6);
  const auto bits = random_bits(500, rng);
  const auto b = fsk_modulate(bits, 2400, 1200, 1250, 100'000);
  const double max_step = 2 * std::numbers::pi * 2400 / 100'000;
  for (std::size_t n = 1; n < b.size(); ++n) ASSERT_LE(std::abs(b.samples[n] - b.samples[n - 1]), max_step + 1e-12);
}

TEST(Fsk, Errors) {
  const auto bits = bits_from_string("10");
  try {
    fsk_modulate(bits, 60'000, 1200, 1250, 100'000);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::aliasing);
  }
  EXPECT_THROW(fsk_modulate(bits, 1200, 1200, 1250, 100'000), Error);
  EXPECT_THROW(fsk_modulate(bits_from_string("x"), 2400, 1200, 1250, 100'000), Error);
}

// Oracle: a separately written non-coherent detector (quadrature sums per
// tone) establishes the error rate this correlator structure achieves at
// 10 dB SNR on the same noisy waveforms.
TEST(Fsk, BerAtTenDb) {
  std::mt19937_64 rng(10);
  const std::size_t nbits = 10'000;
  const auto bits = random_bits(nbits, rng);
  auto b = fsk_modulate(bits, 2400, 1200, 1250, 100'000);
  add_noise_snr(b, 10.0, rng);
  const auto got = fsk_demodulate(b, 2400, 1200, 1250).bits;
  ASSERT_EQ(got.size(), nbits);

  std::size_t errors = 0, oracle_errors = 0;
  for (std::size_t k = 0; k < nbits; ++k) {
    errors += got[k] != bits[k];
    double mi = 0, mq = 0, si = 0, sq = 0;
    for (std::size_t n = k * 80; n < (k + 1) * 80; ++n) {
      const double t = static_cast<double>(n) / 100'000;
      mi += b.samples[n] * std::cos(2 * std::numbers::pi * 2400 * t);
      mq += b.samples[n] * std::sin(2 * std::numbers::pi * 2400 * t);
      si += b.samples[n] * std::cos(2 * std::numbers::pi * 1200 * t);
      sq += b.samples[n] * std::sin(2 * std::numbers::pi * 1200 * t);
    }
    oracle_errors += to_bit(mi * mi + mq * mq > si * si + sq * sq) != bits[k];
  }
  const double ber = static_cast<double>(errors) / nbits;
  EXPECT_LT(ber, 1e-3);
  EXPECT_EQ(errors, oracle_errors);
}

TEST(ChannelPlan, CarriersInsideBand) {
  ChannelPlan p;
  EXPECT_NO_THROW(p.validate());
  EXPECT_DOUBLE_EQ(p.carrier(0), 902.5e6);
  EXPECT_DOUBLE_EQ(p.carrier(25), 927.5e6);
  for (int i = 0; i < p.channel_count; ++i) EXPECT_LT(p.carrier(i), p.top_hz);
  EXPECT_THROW(p.carrier(26), Error);
  p.channel_count = 27;
  EXPECT_THROW(p.validate(), Error);
}

TEST(SweepJammer, StepsThroughOrder) {
  SweepJammer j;
  j.enabled = true;
  j.dwell_s = 0.2;
  j.order = SweepJammer::ascending(26);
  j.start_s = 1.0;
  EXPECT_FALSE(j.channel_at(0.99).has_value());
  EXPECT_EQ(j.channel_at(1.0), 0);
  EXPECT_EQ(j.channel_at(1.19), 0);
  EXPECT_EQ(j.channel_at(1.2), 1);
  EXPECT_EQ(j.channel_at(1.0 + 26 * 0.2 + 0.1), 0);  // cycles
  EXPECT_NEAR(j.arrival(1.5), 1.4, 1e-12);
}

TEST(SweepJammer, SettlingRamp) {
  SweepJammer j = parked(3, 0.0);
  j.order = {3, 4};
  j.dwell_s = 1.0;
  j.settle_s = 0.3;
  EXPECT_EQ(j.power_on(4, 0.5), 0.0);
  EXPECT_NEAR(j.power_on(3, 0.3), 1.0 - std::exp(-1.0), 1e-12);
  EXPECT_NEAR(j.power_on(4, 1.3), 1.0 - std::exp(-1.0), 1e-12);
  j.settle_s = 0.0;
  EXPECT_DOUBLE_EQ(j.power_on(3, 0.0), 1.0);
}

TEST(SweepJammer, ValidateRejectsBadConfig) {
  ChannelPlan p;
  SweepJammer j = parked(3, 0.0);
  j.dwell_s = 0.0;
  EXPECT_THROW(j.validate(p), Error);
  j.dwell_s = 0.1;
  j.order = {30};
  EXPECT_THROW(j.validate(p), Error);
}

TEST(Channel, NoNoiseNoJammerIsIdentity) {
  std::mt19937_64 rng(1);
  SampleBuffer b;
  b.sample_rate = 1000;
  for (int i = 0; i < 100; ++i) b.samples.push_back(std::sin(i * 0.3));
  ChannelState cs;
  EXPECT_EQ(channel_transmit(b, cs, 0.0, rng).samples, b.samples);
}

TEST(Channel, JammerElsewhereMatchesDisabled) {
  SampleBuffer b;
  b.sample_rate = kChipRate;
  b.samples.assign(1270, 0.01);
  ChannelState off{3, -45.0, {}};
  ChannelState away{3, -45.0, parked(9, 10.0)};
  std::mt19937_64 r1(77), r2(77);
  EXPECT_EQ(channel_transmit(b, off, 0.5, r1).samples, channel_transmit(b, away, 0.5, r2).samples);
}

TEST(Channel, DisabledAddsNoiseOnly) {
  SampleBuffer b;
  b.sample_rate = kChipRate;
  b.samples.assign(1 << 16, 0.0);
  ChannelState cs{0, -45.0, {}};
  std::mt19937_64 rng(2);
  const auto out = channel_transmit(b, cs, 0.0, rng);
  EXPECT_NEAR(power_to_db(mean_power(out.samples)), -45.0, 0.1);
}

TEST(Channel, ParkedJammerHasRequestedPower) {
  SampleBuffer b;
  b.sample_rate = kChipRate;
  b.samples.assign(127'000, 0.0);
  ChannelState cs{5, -INFINITY, parked(5, -20.0)};
  std::mt19937_64 rng(2);
  const auto out = channel_transmit(b, cs, 0.0, rng);
  EXPECT_NEAR(power_to_db(mean_power(out.samples)), -20.0, 0.01);
}

TEST(Jamming, EqualPowerJammerDegradesMarginButNotBits) {
  const auto r = jam_run(kSignalDbm, -INFINITY, 2000, 1);
  EXPECT_EQ(r.ber, 0.0);
  EXPECT_LT(r.mean_margin, 0.9);
  EXPECT_GT(r.mean_margin, 0.35);
}

TEST(Jamming, StrongParkedJammerCollapsesMargin) {
  const auto r = jam_run(kSignalDbm + 30.0, -45.0, 2000, 2);
  EXPECT_LT(r.mean_margin, 0.35);
  EXPECT_GT(r.ber, 0.05);
}

// BER after despreading never falls as jammer power rises, within three
// standard errors, over 10^4 bits per point.
TEST(Jamming, BerMonotoneInJammerPower) {
  std::vector<double> ber;
  for (double jdb = -40.0; jdb <= 5.0; jdb += 3.0) ber.push_back(jam_run(jdb, -45.0, 10'000, 3).ber);
  for (std::size_t i = 1; i < ber.size(); ++i) {
    const double se = std::sqrt((ber[i] * (1 - ber[i]) + ber[i - 1] * (1 - ber[i - 1])) / 10'000);
    EXPECT_GE(ber[i], ber[i - 1] - 3 * se - 1e-12) << "step " << i;
  }
  EXPECT_EQ(ber.front(), 0.0);
  EXPECT_GT(ber.back(), 0.2);
}

TEST(NextFreeChannel, Examples) {
  ChannelPlan plan;
  ChannelState s{3, -45.0, parked(4, 0.0)};
  EXPECT_EQ(next_free_channel(s, plan, 0.0), 5);
  s.jammer = parked(7, 0.0);
  EXPECT_EQ(next_free_channel(s, plan, 0.0), 4);
  s.active_channel = 25;
  s.jammer = parked(10, 0.0);
  EXPECT_EQ(next_free_channel(s, plan, 0.0), 0);
}

TEST(NextFreeChannel, NeverReturnsJammedOrActive) {
  ChannelPlan plan;
  std::mt19937_64 rng(8);
  for (int i = 0; i < 1000; ++i) {
    ChannelState s{static_cast<int>(rng() % 26), -45.0, parked(static_cast<int>(rng() % 26), 0.0)};
    const int c = next_free_channel(s, plan, 0.0);
    EXPECT_NE(c, s.active_channel);
    EXPECT_NE(c, s.jammer.order[0]);
    EXPECT_TRUE(plan.contains(c));
  }
}

TEST(NextFreeChannel, SingleChannelPlanHasNoneFree) {
  ChannelPlan plan;
  plan.channel_count = 1;
  ChannelState s{0, -45.0, {}};
  try {
    next_free_channel(s, plan, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::no_free_channel);
  }
}
