#include <gtest/gtest.h>

#include <random>
#include <set>

#include "sslink/link.hpp"

using namespace sslink;
using namespace sslink::link;

namespace {

template <class F>
Errc error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::invalid_argument;
}

struct Pair {
  LinkController a;
  LinkController b;
};

// Runs the two-way handshake a -> b with no losses.
Pair connected(std::uint8_t a, std::uint8_t b, LinkParams p = {}) {
  Pair pr{LinkController(a, p), LinkController(b, p)};
  const auto req = pr.a.initiate(b, 0.0);
  const auto reply = pr.b.on_frame(req, 0.0).reply;
  pr.a.on_frame(*reply, 0.0);
  return pr;
}

}  // namespace

TEST(Handshake, InitiateEmitsEightToOneCode) {
  LinkController n(8);
  const auto f = n.initiate(1, 0.0);
  EXPECT_EQ(f.kind, FrameKind::handshake);
  EXPECT_EQ(to_string(pulse::serialize_bits(f.code)), "10010000000010");
  EXPECT_EQ(n.state().phase, Phase::handshaking);
}

TEST(Handshake, ResponderRepliesSwappedWithAck) {
  LinkController n(1);
  const auto reply = n.on_handshake(pulse::build_code(8, 1, false), 0.0);
  ASSERT_TRUE(reply);
  EXPECT_EQ(to_string(pulse::serialize_bits(reply->code)), "10000010010001");
  EXPECT_EQ(n.state().phase, Phase::connected);
  EXPECT_EQ(n.state().peer, 8);
}

TEST(Handshake, BystanderIgnores) {
  LinkController n(5);
  EXPECT_FALSE(n.on_handshake(pulse::build_code(8, 1, false), 0.0));
  EXPECT_EQ(n.state().phase, Phase::idle);
  EXPECT_FALSE(n.state().peer);
}

TEST(Handshake, InitiatorCompletesSilently) {
  LinkController n(8);
  n.initiate(1, 0.0);
  EXPECT_FALSE(n.on_handshake(pulse::build_code(1, 8, true), 0.0));
  EXPECT_EQ(n.state().phase, Phase::connected);
  EXPECT_EQ(n.state().peer, 1);
}

TEST(Handshake, BusyAndSelfAddress) {
  auto p = connected(8, 1);
  EXPECT_EQ(error_of([&] { p.a.initiate(1, 0.0); }), Errc::busy);
  LinkController n(8);
  EXPECT_EQ(error_of([&] { n.initiate(8, 0.0); }), Errc::self_address);
  EXPECT_EQ(n.state().phase, Phase::idle);
  EXPECT_EQ(error_of([] { LinkController(0); }), Errc::invalid_address);
}

TEST(Handshake, UnsolicitedAckIgnored) {
  LinkController n(8);
  EXPECT_FALSE(n.on_handshake(pulse::build_code(1, 8, true), 0.0));
  EXPECT_EQ(n.state().phase, Phase::idle);
  n.initiate(2, 0.0);
  n.on_handshake(pulse::build_code(1, 8, true), 0.0);  // ack from the wrong peer
  EXPECT_EQ(n.state().phase, Phase::handshaking);
}

TEST(Handshake, RetriesThenFails) {
  LinkParams p;
  p.handshake_retries = 5;
  LinkController n(8, p);
  const auto req = n.initiate(1, 0.0);
  for (int i = 0; i < 5; ++i) {
    const auto again = n.on_timeout(1.0 + i);
    ASSERT_TRUE(again);
    EXPECT_EQ(*again, req);
  }
  EXPECT_FALSE(n.on_timeout(10.0));
  EXPECT_TRUE(n.handshake_failed());
  EXPECT_EQ(n.state().phase, Phase::idle);
}

TEST(Handshake, LostReplyIsAnsweredAgain) {
  LinkController a(8), b(1);
  const auto req = a.initiate(1, 0.0);
  b.on_frame(req, 0.0);  // reply lost
  const auto retry = a.on_timeout(1.0);
  const auto reply = b.on_frame(*retry, 1.0).reply;
  ASSERT_TRUE(reply);
  a.on_frame(*reply, 1.0);
  EXPECT_EQ(a.state().phase, Phase::connected);
  EXPECT_EQ(b.state().phase, Phase::connected);
}

// Handshake safety over random address pairs.
TEST(HandshakeProperty, ConnectIffAddressedAndRoundTripped) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<unsigned> ua(1, 63);
  for (int i = 0; i < 2000; ++i) {
    const unsigned x = ua(rng), y = ua(rng), z = ua(rng);
    if (x == y) continue;
    LinkController a(static_cast<std::uint8_t>(x)), b(static_cast<std::uint8_t>(y)),
        c(static_cast<std::uint8_t>(z));
    const auto req = a.initiate(y, 0.0);
    if (z != y) {
      EXPECT_FALSE(c.on_frame(req, 0.0).reply);
    }
    const auto reply = b.on_frame(req, 0.0).reply;
    ASSERT_TRUE(reply);
    EXPECT_EQ(reply->code.src, req.code.dst);
    EXPECT_EQ(reply->code.dst, req.code.src);
    EXPECT_TRUE(reply->code.ack);
    EXPECT_EQ(a.state().phase, Phase::handshaking);
    a.on_frame(*reply, 0.0);
    EXPECT_EQ(a.state().phase, Phase::connected);
    EXPECT_EQ(b.state().phase, Phase::connected);
    EXPECT_EQ(a.state().peer, y);
    EXPECT_EQ(b.state().peer, x);
  }
}

// A HANDSHAKE whose dst is someone else never changes state.
TEST(HandshakeProperty, AddressCheck) {
  std::mt19937_64 rng(22);
  std::uniform_int_distribution<unsigned> ua(1, 63);
  for (int i = 0; i < 3000; ++i) {
    const unsigned me = ua(rng);
    LinkController n(static_cast<std::uint8_t>(me));
    const int mode = static_cast<int>(rng() % 3);
    unsigned other = ua(rng);
    if (other == me) other = me % 63 + 1;
    if (mode == 1) n.initiate(other, 0.0);
    if (mode == 2) n.on_handshake(pulse::build_code(other, me, false), 0.0);
    const auto before = n.state();
    unsigned src = ua(rng), dst = ua(rng);
    if (dst == me) dst = me % 63 + 1;
    EXPECT_FALSE(n.on_handshake(pulse::build_code(src, dst, rng() & 1), 1.0));
    EXPECT_EQ(n.state().phase, before.phase);
    EXPECT_EQ(n.state().peer, before.peer);
    EXPECT_EQ(n.state().active_channel, before.active_channel);
  }
}

TEST(NextFrame, DataSuppressesVoice) {
  auto p = connected(8, 1);
  p.a.queues().data.push_back({"hi", true});
  p.a.queues().voice.push_back({1, 2, 3});
  const auto f = p.a.next_frame(0.0);
  ASSERT_TRUE(f);
  EXPECT_EQ(f->kind, FrameKind::data);
  EXPECT_EQ(f->text, "hi");
}

TEST(NextFrame, VoiceWhenNoData) {
  auto p = connected(8, 1);
  p.a.queues().voice.push_back({1, 2, 3});
  const auto f = p.a.next_frame(0.0);
  ASSERT_TRUE(f);
  EXPECT_EQ(f->kind, FrameKind::voice);
  EXPECT_FALSE(p.a.outstanding());
  EXPECT_FALSE(p.a.on_timeout(1.0));  // voice is never retransmitted
  EXPECT_FALSE(p.a.next_frame(0.0));
}

TEST(NextFrame, NotConnected) {
  LinkController n(8);
  EXPECT_EQ(error_of([&] { n.next_frame(0.0); }), Errc::not_connected);
}

TEST(NextFrame, StopAndWait) {
  auto p = connected(8, 1);
  p.a.queues().data.push_back({"a", true});
  p.a.queues().data.push_back({"b", true});
  ASSERT_TRUE(p.a.next_frame(0.0));
  EXPECT_FALSE(p.a.next_frame(0.0));
  EXPECT_TRUE(p.a.on_ack(0, 0.0));
  EXPECT_EQ(p.a.state().tx_seq, 1);
  const auto f = p.a.next_frame(0.0);
  ASSERT_TRUE(f);
  EXPECT_EQ(f->seq, 1);
  EXPECT_FALSE(p.a.on_ack(0, 0.0));  // stale ACK
}

TEST(Arq, DuplicateIsReAckedNotRedelivered) {
  auto p = connected(8, 1);
  const auto f = Frame::data("x", 0);
  const auto first = p.b.on_frame(f, 0.0);
  ASSERT_TRUE(first.delivered);
  const auto second = p.b.on_frame(f, 0.0);
  EXPECT_FALSE(second.delivered);
  EXPECT_TRUE(second.duplicate);
  ASSERT_TRUE(second.reply);
  EXPECT_EQ(*second.reply, Frame::ack(0));
}

// Priority property over randomized traces of 10^4 arbitration steps.
TEST(PriorityProperty, NoVoiceWhileDataQueued) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto p = connected(8, 1);
    std::mt19937_64 rng(seed);
    int steps = 0, voice = 0, data = 0;
    while (steps < 10'000) {
      switch (rng() % 10) {
        case 0: p.a.queues().data.push_back({std::string(1, static_cast<char>('a' + rng() % 26)), true}); break;
        case 1:
        case 2: p.a.queues().voice.push_back({static_cast<std::uint8_t>(rng())}); break;
        case 3:
        case 4:
        case 5:
          if (p.a.outstanding()) p.a.on_ack(p.a.outstanding()->seq, 0.0);
          break;
        case 6: p.a.on_timeout(0.0); break;
        default: {
          const bool data_waiting = !p.a.queues().data.empty();
          const auto f = p.a.next_frame(0.0);
          ++steps;
          if (f && f->kind == FrameKind::voice) {
            ++voice;
            ASSERT_FALSE(data_waiting) << "step " << steps;
          }
          if (f && f->kind == FrameKind::data) ++data;
        }
      }
    }
    EXPECT_GT(voice, 0);
    EXPECT_GT(data, 0);
  }
}

// Model check: every loss pattern of length 10 over the frames of a
// five-payload exchange (DATA and ACK both lossy). Losses stop once the
// pattern is used up.
TEST(ArqModelCheck, ExactlyOnceInOrderForAllLossPatterns) {
  const std::vector<std::string> payloads{"p0", "p1", "p2", "p3", "p4"};
  for (unsigned pattern = 0; pattern < 1024; ++pattern) {
    auto p = connected(8, 1);
    for (const auto& s : payloads) p.a.queues().data.push_back({s, true});
    unsigned used = 0;
    auto lost = [&] { return used < 10 && (pattern >> used++ & 1U); };
    std::vector<std::string> got;
    for (int step = 0; step < 200; ++step) {
      auto f = p.a.next_frame(step);
      if (!f) {
        if (!p.a.outstanding()) break;
        f = p.a.on_timeout(step);
      }
      ASSERT_TRUE(f);
      if (lost()) continue;
      const auto out = p.b.on_frame(*f, step);
      if (out.delivered) got.push_back(out.delivered->text);
      if (out.reply && !lost()) p.a.on_frame(*out.reply, step);
    }
    ASSERT_EQ(got, payloads) << "pattern " << pattern;
    EXPECT_TRUE(p.a.queues().data.empty());
    EXPECT_FALSE(p.a.outstanding());
  }
}

TEST(Diversion, HopsAwayAndContinues) {
  LinkParams prm;
  prm.initial_channel = 3;
  auto p = connected(8, 1, prm);
  const auto d1 = p.a.on_jam_detected(0.0);
  ASSERT_TRUE(d1);
  EXPECT_EQ(d1->from, 3);
  EXPECT_NE(d1->to, 3);
  EXPECT_EQ(p.a.state().phase, Phase::diverting);
  const auto d2 = p.a.on_jam_detected(0.1);
  ASSERT_TRUE(d2);
  EXPECT_EQ(d2->from, d1->to);
  EXPECT_NE(d2->to, d1->to);
  EXPECT_EQ(p.a.hops(), 2);
}

TEST(Diversion, IdleIgnoresJam) {
  LinkController n(8);
  EXPECT_FALSE(n.on_jam_detected(0.0));
  EXPECT_EQ(n.state().phase, Phase::idle);
}

TEST(Diversion, BothEndsFollowTheSameList) {
  LinkParams prm;
  prm.initial_channel = 7;
  auto p = connected(8, 1, prm);
  EXPECT_EQ(p.a.hops_list(), p.b.hops_list());
  for (int i = 0; i < 40; ++i) {
    p.a.on_jam_detected(i);
    p.b.on_jam_detected(i);
    ASSERT_EQ(p.a.state().active_channel, p.b.state().active_channel);
  }
}

TEST(Diversion, OutstandingFrameSurvivesHop) {
  auto p = connected(8, 1);
  p.a.queues().data.push_back({"q", true});
  const auto f = p.a.next_frame(0.0);
  p.a.on_jam_detected(0.1);
  EXPECT_EQ(p.a.outstanding(), f);
  const auto again = p.a.on_timeout(0.2);
  ASSERT_TRUE(again);
  EXPECT_EQ(*again, *f);
  // A frame heard on the new channel completes the diversion.
  p.b.on_jam_detected(0.1);
  const auto out = p.b.on_frame(*again, 0.3);
  EXPECT_EQ(p.b.state().phase, Phase::connected);
  p.a.on_frame(*out.reply, 0.3);
  EXPECT_EQ(p.a.state().phase, Phase::connected);
  EXPECT_FALSE(p.a.outstanding());
}

TEST(Diversion, ThreeTimeoutsHop) {
  auto p = connected(8, 1);
  p.a.queues().data.push_back({"z", true});
  p.a.next_frame(0.0);
  const int ch = p.a.state().active_channel;
  p.a.on_timeout(1.0);
  p.a.on_timeout(2.0);
  EXPECT_EQ(p.a.hops(), 0);
  p.a.on_timeout(3.0);
  EXPECT_EQ(p.a.hops(), 1);
  EXPECT_NE(p.a.state().active_channel, ch);
  EXPECT_EQ(p.a.state().phase, Phase::diverting);
}

TEST(Diversion, DisabledOnlyReports) {
  LinkParams prm;
  prm.diversion = false;
  std::vector<TraceEvent> ev;
  auto p = connected(8, 1, prm);
  p.a.set_trace_sink([&](const TraceEvent& e) { ev.push_back(e); });
  EXPECT_FALSE(p.a.on_jam_detected(0.0));
  EXPECT_EQ(p.a.state().phase, Phase::connected);
  ASSERT_EQ(ev.size(), 1U);
  EXPECT_EQ(ev[0].event, "jam_detected");
}

// Liveness: the hop target is never the channel the jammer was found on, so
// a single-tone jammer cannot follow the pair within its dwell.
TEST(DiversionProperty, HopLeavesJammedChannel) {
  for (unsigned a = 1; a <= 63; a += 5)
    for (unsigned b = 2; b <= 63; b += 7) {
      if (a == b) continue;
      for (int init : {0, 13, 25}) {
        const auto l = hop_list(a << 6 | b, 26, init);
        ASSERT_EQ(l.front(), init);
        ASSERT_EQ(std::set<int>(l.begin(), l.end()).size(), 26U);
        for (std::size_t i = 0; i < l.size(); ++i) ASSERT_NE(l[i], l[(i + 1) % l.size()]);
      }
    }
}

TEST(HopList, TwoChannels) {
  const auto l = hop_list(42, 2, 1);
  EXPECT_EQ(l, (std::vector<int>{1, 0}));
}

TEST(Trace, LineFormat) {
  const TraceEvent e{1.5, 8, "hop", Phase::connected, Phase::diverting, 17};
  EXPECT_EQ(format_trace(e), "1.500000 8 hop CONNECTED DIVERTING 17");
}

TEST(Trace, EveryTransitionReported) {
  std::vector<std::string> lines;
  LinkController a(8, {}, [&](const TraceEvent& e) { lines.push_back(format_trace(e)); });
  LinkController b(1);
  const auto req = a.initiate(1, 0.25);
  a.on_frame(*b.on_frame(req, 0.5).reply, 0.75);
  ASSERT_EQ(lines.size(), 2U);
  EXPECT_EQ(lines[0], "0.250000 8 initiate IDLE HANDSHAKING 0");
  EXPECT_EQ(lines[1], "0.750000 8 handshake_complete HANDSHAKING CONNECTED 0");
}

TEST(FrameCodec, RoundTripAllKinds) {
  const std::vector<Frame> frames{Frame::data("Hi there", 1, false), Frame::data("", 0), Frame::ack(1),
                                  Frame::voice({0, 255, 17, 3}), Frame::handshake(pulse::build_code(8, 1, false)),
                                  Frame::handshake(pulse::build_code(63, 1, true))};
  for (const auto& f : frames) {
    const auto bits = encode_frame(f);
    ASSERT_EQ(bits.size(), frame_bits(f.kind == FrameKind::data    ? f.text.size()
                                      : f.kind == FrameKind::voice ? f.pcm.size()
                                      : f.kind == FrameKind::ack   ? 0
                                                                   : 2));
    const auto back = decode_frame(bits);
    ASSERT_TRUE(back);
    EXPECT_EQ(*back, f);
  }
}

TEST(FrameCodec, SingleBitErrorsRejected) {
  const auto bits = encode_frame(Frame::data("hello", 0));
  for (std::size_t i = 0; i < bits.size(); ++i) {
    auto bad = bits;
    bad[i] = bad[i] == Bit::one ? Bit::zero : Bit::one;
    EXPECT_FALSE(decode_frame(bad)) << "bit " << i;
  }
  auto erased = bits;
  erased[20] = Bit::erasure;
  EXPECT_FALSE(decode_frame(erased));
  EXPECT_FALSE(decode_frame(std::span<const Bit>(bits).first(bits.size() - 1)));
}

TEST(FrameCodec, PayloadLimit) {
  EXPECT_THROW(encode_frame(Frame::data(std::string(16, 'a'), 0)), Error);
  EXPECT_NO_THROW(encode_frame(Frame::data(std::string(15, 'a'), 0)));
}

TEST(FrameCodec, Crc16CcittCheckValue) {
  // "123456789" gives 0x29B1 for CRC-16/CCITT-FALSE.
  Bits b;
  for (char c : std::string("123456789")) append_field(b, static_cast<unsigned char>(c), 8);
  EXPECT_EQ(crc16(b), 0x29B1);
}
