#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "sslink/bits.hpp"
#include "sslink/dtmf.hpp"
#include "sslink/error.hpp"
#include "sslink/pulse.hpp"

namespace sslink::link {

using pulse::HandshakeCode;

// ---------------------------------------------------------------------------
// Frames

enum class FrameKind : std::uint8_t { data = 0, voice = 1, ack = 2, handshake = 3 };

inline const char* kind_name(FrameKind k) {
  switch (k) {
    case FrameKind::data: return "DATA";
    case FrameKind::voice: return "VOICE";
    case FrameKind::ack: return "ACK";
    case FrameKind::handshake: return "HANDSHAKE";
  }
  return "?";
}

inline constexpr std::size_t kMaxPayload = 15;

struct Frame {
  FrameKind kind = FrameKind::data;
  std::uint8_t seq = 0;
  bool end_of_message = true;
  std::string text;                 // DATA
  std::vector<std::uint8_t> pcm;    // VOICE
  HandshakeCode code;               // HANDSHAKE

  static Frame data(std::string text, std::uint8_t seq, bool eom = true) {
    Frame f;
    f.kind = FrameKind::data;
    f.seq = seq;
    f.end_of_message = eom;
    f.text = std::move(text);
    return f;
  }
  static Frame voice(std::vector<std::uint8_t> pcm) {
    Frame f;
    f.kind = FrameKind::voice;
    f.pcm = std::move(pcm);
    return f;
  }
  static Frame ack(std::uint8_t seq) {
    Frame f;
    f.kind = FrameKind::ack;
    f.seq = seq;
    return f;
  }
  static Frame handshake(const HandshakeCode& c) {
    Frame f;
    f.kind = FrameKind::handshake;
    f.code = c;
    return f;
  }

  friend bool operator==(const Frame& a, const Frame& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
      case FrameKind::data: return a.seq == b.seq && a.end_of_message == b.end_of_message && a.text == b.text;
      case FrameKind::voice: return a.pcm == b.pcm;
      case FrameKind::ack: return a.seq == b.seq;
      case FrameKind::handshake: return a.code == b.code;
    }
    return false;
  }
};

/// CRC-16/CCITT (poly 0x1021, init 0xFFFF) over a bit string.
inline std::uint16_t crc16(std::span<const Bit> bits) {
  std::uint16_t crc = 0xFFFF;
  for (Bit b : bits) {
    const bool in = b == Bit::one;
    const bool top = crc & 0x8000;
    crc = static_cast<std::uint16_t>(crc << 1);
    if (top != in) crc ^= 0x1021;
  }
  return crc;
}

/// Air format: [kind:2][seq:1][eom:1][len:4][payload:8*len][crc:16].
/// DATA characters travel as their DTMF tone codes.
inline Bits encode_frame(const Frame& f, const dtmf::DtmfTable& table = dtmf::DtmfTable::standard()) {
  std::vector<std::uint8_t> payload;
  switch (f.kind) {
    case FrameKind::data:
      for (char c : f.text) payload.push_back(table.at(c).code());
      break;
    case FrameKind::voice: payload = f.pcm; break;
    case FrameKind::ack: break;
    case FrameKind::handshake: {
      const auto cb = pulse::serialize_bits(f.code);
      std::uint16_t v = 0;
      for (Bit b : cb) v = static_cast<std::uint16_t>(v << 1 | (b == Bit::one));
      v = static_cast<std::uint16_t>(v << 2);
      payload = {static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v & 0xFF)};
      break;
    }
  }
  if (payload.size() > kMaxPayload) throw Error(Errc::invalid_argument, "frame payload over 15 bytes");
  Bits out;
  append_field(out, static_cast<std::uint32_t>(f.kind), 2);
  append_field(out, f.seq & 1U, 1);
  append_field(out, f.end_of_message ? 1U : 0U, 1);
  append_field(out, static_cast<std::uint32_t>(payload.size()), 4);
  for (auto byte : payload) append_field(out, byte, 8);
  append_field(out, crc16(out), 16);
  return out;
}

inline std::size_t frame_bits(std::size_t payload_bytes) { return 8 + 8 * payload_bytes + 16; }

/// nullopt on erasures, length mismatch, CRC failure or undecodable payload.
inline std::optional<Frame> decode_frame(std::span<const Bit> bits,
                                         const dtmf::DtmfTable& table = dtmf::DtmfTable::standard()) {
  if (bits.size() < frame_bits(0)) return std::nullopt;
  for (Bit b : bits)
    if (b == Bit::erasure) return std::nullopt;
  const auto len = read_field(bits, 4, 4);
  if (bits.size() != frame_bits(len)) return std::nullopt;
  const std::size_t body = bits.size() - 16;
  if (crc16(bits.first(body)) != read_field(bits, body, 16)) return std::nullopt;

  Frame f;
  f.kind = static_cast<FrameKind>(read_field(bits, 0, 2));
  f.seq = static_cast<std::uint8_t>(read_field(bits, 2, 1));
  f.end_of_message = read_field(bits, 3, 1) != 0;
  std::vector<std::uint8_t> payload;
  for (std::size_t i = 0; i < len; ++i) payload.push_back(static_cast<std::uint8_t>(read_field(bits, 8 + 8 * i, 8)));
  switch (f.kind) {
    case FrameKind::data:
      for (auto code : payload) {
        const auto sym = table.from_code(code);
        if (!sym) return std::nullopt;
        f.text += sym->character;
      }
      break;
    case FrameKind::voice: f.pcm = std::move(payload); break;
    case FrameKind::ack: break;
    case FrameKind::handshake: {
      if (payload.size() != 2) return std::nullopt;
      const std::uint16_t v = static_cast<std::uint16_t>(payload[0] << 8 | payload[1]);
      Bits cb;
      for (int i = 15; i >= 2; --i) cb.push_back(to_bit(v >> i & 1U));
      try {
        f.code = pulse::parse_bits(cb);
      } catch (const Error&) {
        return std::nullopt;
      }
      break;
    }
  }
  return f;
}

// ---------------------------------------------------------------------------
// Node state machine

enum class Phase { idle, handshaking, connected, diverting };

inline const char* phase_name(Phase p) {
  switch (p) {
    case Phase::idle: return "IDLE";
    case Phase::handshaking: return "HANDSHAKING";
    case Phase::connected: return "CONNECTED";
    case Phase::diverting: return "DIVERTING";
  }
  return "?";
}

struct NodeState {
  std::uint8_t address = 0;
  Phase phase = Phase::idle;
  std::optional<std::uint8_t> peer;
  int active_channel = 0;
  std::uint8_t tx_seq = 0;
  std::uint8_t rx_seq = 0;
};

struct DataPayload {
  std::string text;
  bool end_of_message = true;
};

struct TxQueues {
  std::deque<DataPayload> data;
  std::deque<std::vector<std::uint8_t>> voice;
};

struct LinkParams {
  int channel_count = 26;
  int initial_channel = 0;
  int timeouts_before_hop = 3;
  int handshake_retries = 5;
  bool diversion = true;
};

struct TraceEvent {
  double time = 0.0;
  std::uint8_t node = 0;
  std::string event;
  Phase old_phase = Phase::idle;
  Phase new_phase = Phase::idle;
  int channel = 0;
};

/// `<time> <node> <event> <old-phase> <new-phase> <channel>`
inline std::string format_trace(const TraceEvent& e) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%.6f %u %s %s %s %d", e.time, static_cast<unsigned>(e.node), e.event.c_str(),
                phase_name(e.old_phase), phase_name(e.new_phase), e.channel);
  return buf;
}

struct Diversion {
  int from = 0;
  int to = 0;
};

/// Everything a received frame produced.
struct RxOutcome {
  std::optional<Frame> reply;
  std::optional<DataPayload> delivered;
  bool voice = false;
  bool duplicate = false;
};

/// Shared pseudorandom channel order for a session, rotated so the channel the
/// handshake happened on comes first.
inline std::vector<int> hop_list(std::uint32_t seed, int channel_count, int initial_channel) {
  std::vector<int> order(static_cast<std::size_t>(channel_count));
  for (int i = 0; i < channel_count; ++i) order[static_cast<std::size_t>(i)] = i;
  std::mt19937 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  const auto it = std::find(order.begin(), order.end(), initial_channel);
  if (it != order.end()) std::rotate(order.begin(), it, order.end());
  return order;
}

/// One node's link controller. Single-threaded; the caller owns time and
/// timers. Every transition is reported through the trace callback.
class LinkController {
 public:
  using TraceSink = std::function<void(const TraceEvent&)>;

  LinkController(std::uint8_t address, LinkParams params = {}, TraceSink sink = {})
      : params_(params), sink_(std::move(sink)) {
    pulse::check_address(address, "node");
    state_.address = address;
    state_.active_channel = params_.initial_channel;
  }

  const NodeState& state() const noexcept { return state_; }
  TxQueues& queues() noexcept { return queues_; }
  const TxQueues& queues() const noexcept { return queues_; }
  const LinkParams& params() const noexcept { return params_; }
  bool handshake_failed() const noexcept { return handshake_failed_; }
  const std::optional<Frame>& outstanding() const noexcept { return outstanding_; }
  int hops() const noexcept { return hops_; }
  const std::vector<int>& hops_list() const noexcept { return hop_list_; }

  /// True while a sent frame is waiting for its answer (ACK or handshake reply).
  bool awaiting_reply() const noexcept {
    return state_.phase == Phase::handshaking || outstanding_.has_value();
  }

  void set_trace_sink(TraceSink sink) { sink_ = std::move(sink); }

  Frame initiate(unsigned dst, double t) {
    if (state_.phase != Phase::idle) throw Error(Errc::busy, "node is " + std::string(phase_name(state_.phase)));
    if (dst == state_.address) throw Error(Errc::self_address, "node cannot connect to itself");
    const auto code = pulse::build_code(state_.address, dst, false);
    pending_peer_ = static_cast<std::uint8_t>(dst);
    handshake_attempts_ = 0;
    handshake_failed_ = false;
    set_phase(Phase::handshaking, "initiate", t);
    handshake_request_ = code;
    return Frame::handshake(code);
  }

  std::optional<Frame> on_handshake(const HandshakeCode& code, double t) {
    if (code.dst != state_.address) return std::nullopt;
    if (!code.ack) {
      const bool fresh = state_.phase == Phase::idle ||
                         (state_.phase == Phase::handshaking && pending_peer_ == code.src);
      const bool repeat = (state_.phase == Phase::connected || state_.phase == Phase::diverting) &&
                          state_.peer == code.src;
      if (!fresh && !repeat) return std::nullopt;
      if (fresh) {
        connect(code.src, code.src, state_.address);
        set_phase(Phase::connected, "handshake_accept", t);
      } else {
        emit("handshake_repeat", state_.phase, t);
      }
      return Frame::handshake(pulse::make_reply(code));
    }
    if (state_.phase == Phase::handshaking && pending_peer_ == code.src) {
      connect(code.src, state_.address, code.src);
      set_phase(Phase::connected, "handshake_complete", t);
    }
    return std::nullopt;
  }

  /// Data before voice; at most one unacknowledged DATA frame.
  std::optional<Frame> next_frame(double t) {
    if (state_.phase != Phase::connected && state_.phase != Phase::diverting)
      throw Error(Errc::not_connected, "node is " + std::string(phase_name(state_.phase)));
    if (outstanding_) return std::nullopt;
    if (!queues_.data.empty()) {
      auto item = std::move(queues_.data.front());
      queues_.data.pop_front();
      outstanding_ = Frame::data(std::move(item.text), state_.tx_seq, item.end_of_message);
      consecutive_timeouts_ = 0;
      emit("data_tx", state_.phase, t);
      return outstanding_;
    }
    if (!queues_.voice.empty()) {
      auto chunk = std::move(queues_.voice.front());
      queues_.voice.pop_front();
      emit("voice_tx", state_.phase, t);
      return Frame::voice(std::move(chunk));
    }
    return std::nullopt;
  }

  RxOutcome on_frame(const Frame& f, double t) {
    RxOutcome out;
    if (f.kind == FrameKind::handshake) {
      out.reply = on_handshake(f.code, t);
      return out;
    }
    if (state_.phase != Phase::connected && state_.phase != Phase::diverting) return out;
    if (state_.phase == Phase::diverting) set_phase(Phase::connected, "diversion_complete", t);
    switch (f.kind) {
      case FrameKind::data:
        if (f.seq == state_.rx_seq) {
          out.delivered = DataPayload{f.text, f.end_of_message};
          state_.rx_seq ^= 1U;
          emit("data_rx", state_.phase, t);
        } else {
          out.duplicate = true;
          emit("data_dup", state_.phase, t);
        }
        out.reply = Frame::ack(f.seq);
        break;
      case FrameKind::ack: on_ack(f.seq, t); break;
      case FrameKind::voice:
        out.voice = true;
        emit("voice_rx", state_.phase, t);
        break;
      case FrameKind::handshake: break;
    }
    return out;
  }

  bool on_ack(std::uint8_t seq, double t) {
    if (!outstanding_ || outstanding_->seq != seq) return false;
    outstanding_.reset();
    state_.tx_seq ^= 1U;
    consecutive_timeouts_ = 0;
    emit("ack_rx", state_.phase, t);
    return true;
  }

  /// Retransmit timer expiry. Returns the frame to send again, if any.
  std::optional<Frame> on_timeout(double t) {
    if (state_.phase == Phase::handshaking) {
      if (handshake_attempts_ >= params_.handshake_retries) {
        handshake_failed_ = true;
        pending_peer_.reset();
        set_phase(Phase::idle, "handshake_failed", t);
        return std::nullopt;
      }
      ++handshake_attempts_;
      emit("handshake_retry", state_.phase, t);
      return Frame::handshake(handshake_request_);
    }
    if (!outstanding_) return std::nullopt;
    ++consecutive_timeouts_;
    emit("timeout", state_.phase, t);
    if (consecutive_timeouts_ >= params_.timeouts_before_hop) {
      consecutive_timeouts_ = 0;
      on_jam_detected(t);
    }
    emit("retransmit", state_.phase, t);
    return outstanding_;
  }

  std::optional<Diversion> on_jam_detected(double t) {
    if (state_.phase != Phase::connected && state_.phase != Phase::diverting) return std::nullopt;
    if (!params_.diversion || hop_list_.empty()) {
      emit("jam_detected", state_.phase, t);
      return std::nullopt;
    }
    const int from = state_.active_channel;
    set_phase(Phase::diverting, "jam_detected", t);
    hop_pos_ = (hop_pos_ + 1) % hop_list_.size();
    state_.active_channel = hop_list_[hop_pos_];
    ++hops_;
    emit("hop", state_.phase, t);
    return Diversion{from, state_.active_channel};
  }

 private:
  void connect(std::uint8_t peer, std::uint8_t initiator, std::uint8_t responder) {
    state_.peer = peer;
    pending_peer_.reset();
    state_.tx_seq = 0;
    state_.rx_seq = 0;
    hop_list_ = hop_list(static_cast<std::uint32_t>(initiator) << 6 | responder, params_.channel_count,
                         state_.active_channel);
    hop_pos_ = 0;
  }

  void set_phase(Phase p, const char* event, double t) {
    const Phase old = state_.phase;
    state_.phase = p;
    if (p == Phase::idle) state_.peer.reset();
    if (sink_) sink_({t, state_.address, event, old, p, state_.active_channel});
  }

  void emit(const char* event, Phase p, double t) {
    if (sink_) sink_({t, state_.address, event, p, p, state_.active_channel});
  }

  NodeState state_;
  LinkParams params_;
  TraceSink sink_;
  TxQueues queues_;
  std::optional<Frame> outstanding_;
  std::optional<std::uint8_t> pending_peer_;
  HandshakeCode handshake_request_;
  int handshake_attempts_ = 0;
  bool handshake_failed_ = false;
  int consecutive_timeouts_ = 0;
  std::vector<int> hop_list_;
  std::size_t hop_pos_ = 0;
  int hops_ = 0;
};

}  // namespace sslink::link
