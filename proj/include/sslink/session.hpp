#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "sslink/config.hpp"
#include "sslink/dtmf.hpp"
#include "sslink/error.hpp"
#include "sslink/link.hpp"
#include "sslink/phy.hpp"
#include "sslink/pulse.hpp"

namespace sslink::sim {

/// Everything that defines a simulated two-node session. Same config, same
/// seed: same trace, byte for byte.
struct SessionConfig {
  std::uint8_t node_a = 8;
  std::uint8_t node_b = 1;
  std::uint64_t seed = 1;

  phy::ChannelPlan plan;
  std::size_t pn_length = 127;
  std::vector<int> pn_taps;  // empty: standard taps for pn_length

  double bit_rate = 1000.0;  // DSSS data bits per second; one simulation tick per bit
  double signal_dbm = -35.0;
  double noise_dbm = -45.0;

  // Handshake frames use the radio's FSK leg.
  double fsk_mark_hz = 2400.0;
  double fsk_space_hz = 1200.0;
  double fsk_bit_rate = 1250.0;
  double fsk_sample_rate = pulse::kSampleRate;
  double codec_line_snr_db = 30.0;

  phy::SweepJammer jammer;

  link::LinkParams link;
  std::size_t chars_per_frame = 1;
  double timeout_factor = 4.0;
  int turnaround_bits = 2;
  double jam_margin = 0.35;
  int jam_bits = 8;
  double jam_energy_gate_db = 6.0;
  double voice_interval_s = 0.0;
  std::size_t voice_chunk_bytes = 4;

  phy::PnSequence pn() const {
    if (pn_taps.empty()) return phy::PnSequence::standard(pn_length);
    int degree = 0;
    while ((std::size_t{1} << degree) - 1 < pn_length) ++degree;
    if ((std::size_t{1} << degree) - 1 != pn_length) throw Error(Errc::config, "pn_length must be 2^n - 1");
    return phy::PnSequence::from_lfsr(degree, pn_taps);
  }

  void validate() const {
    pulse::check_address(node_a, "node_a");
    pulse::check_address(node_b, "node_b");
    if (node_a == node_b) throw Error(Errc::config, "node_a and node_b must differ");
    plan.validate();
    if (!plan.contains(link.initial_channel)) throw Error(Errc::config, "initial channel outside plan");
    if (link.channel_count != plan.channel_count) throw Error(Errc::config, "link channel count mismatch");
    if (bit_rate <= 0) throw Error(Errc::config, "bit_rate must be positive");
    if (chars_per_frame < 1 || chars_per_frame > link::kMaxPayload)
      throw Error(Errc::config, "chars_per_frame must be 1..15");
    if (jam_bits < 1) throw Error(Errc::config, "jam_bits must be positive");
    if (jammer.enabled) jammer.validate(plan);
    (void)pn();
  }

  static SessionConfig from(const KeyValueConfig& kv) {
    SessionConfig c;
    c.node_a = static_cast<std::uint8_t>(kv.get("node_a", 8L));
    c.node_b = static_cast<std::uint8_t>(kv.get("node_b", 1L));
    if (kv.get("node_a", 8L) != c.node_a || kv.get("node_b", 1L) != c.node_b)
      throw Error(Errc::config, "node address out of range");
    c.seed = static_cast<std::uint64_t>(kv.get("seed", 1L));

    c.plan.base_hz = kv.get("base_mhz", 902.0) * 1e6;
    c.plan.top_hz = kv.get("top_mhz", 928.0) * 1e6;
    c.plan.spacing_hz = kv.get("spacing_mhz", 1.0) * 1e6;
    c.plan.channel_count = static_cast<int>(kv.get("channels", 26L));
    c.pn_length = static_cast<std::size_t>(kv.get("pn_length", 127L));
    for (long t : kv.get_list("pn_taps")) c.pn_taps.push_back(static_cast<int>(t));

    c.bit_rate = kv.get("bit_rate", c.bit_rate);
    c.signal_dbm = kv.get("signal_dbm", c.signal_dbm);
    c.noise_dbm = kv.get("noise_dbm", c.noise_dbm);
    c.fsk_mark_hz = kv.get("fsk_mark_hz", c.fsk_mark_hz);
    c.fsk_space_hz = kv.get("fsk_space_hz", c.fsk_space_hz);
    c.fsk_bit_rate = kv.get("fsk_bit_rate", c.fsk_bit_rate);
    c.fsk_sample_rate = kv.get("fsk_sample_rate", c.fsk_sample_rate);
    c.codec_line_snr_db = kv.get("codec_line_snr_db", c.codec_line_snr_db);

    auto& j = c.jammer;
    j.enabled = kv.get("jammer_enabled", false);
    j.dwell_s = kv.get("jammer_dwell_s", j.dwell_s);
    j.power_dbm = kv.get("jammer_power_dbm", j.power_dbm);
    j.start_s = kv.get("jammer_start_s", j.start_s);
    j.settle_s = kv.get("jammer_settle_s", j.settle_s);
    j.tone_hz = kv.get("jammer_tone_hz", j.tone_hz);
    const auto order = kv.get("jammer_order", std::string("ascending"));
    if (order == "ascending") {
      j.order = phy::SweepJammer::ascending(c.plan.channel_count);
    } else {
      for (long ch : kv.get_list("jammer_order")) j.order.push_back(static_cast<int>(ch));
    }

    c.link.channel_count = c.plan.channel_count;
    c.link.initial_channel = static_cast<int>(kv.get("initial_channel", 0L));
    c.link.timeouts_before_hop = static_cast<int>(kv.get("timeouts_before_hop", 3L));
    c.link.handshake_retries = static_cast<int>(kv.get("handshake_retries", 5L));
    c.link.diversion = kv.get("diversion", true);
    c.chars_per_frame = static_cast<std::size_t>(kv.get("chars_per_frame", 1L));
    c.timeout_factor = kv.get("timeout_factor", c.timeout_factor);
    c.turnaround_bits = static_cast<int>(kv.get("turnaround_bits", 2L));
    c.jam_margin = kv.get("jam_margin", c.jam_margin);
    c.jam_bits = static_cast<int>(kv.get("jam_bits", 8L));
    c.jam_energy_gate_db = kv.get("jam_energy_gate_db", c.jam_energy_gate_db);
    c.voice_interval_s = kv.get("voice_interval_s", c.voice_interval_s);
    c.voice_chunk_bytes = static_cast<std::size_t>(kv.get("voice_chunk_bytes", 4L));
    c.validate();
    return c;
  }
};

struct ChatMessage {
  double time = 0.0;
  std::uint8_t from = 0;
  std::uint8_t to = 0;
  std::string text;
};

struct DataTxRecord {
  double start = 0.0;
  double end = 0.0;
  int channel = 0;
  std::uint8_t sender = 0;
  bool received = false;      // the peer decoded it
  bool acknowledged = false;  // and its ACK made it back
};

struct SessionStats {
  int data_tx = 0;
  int data_lost = 0;
  int retransmissions = 0;
  int voice_tx = 0;
  int voice_rx = 0;
  int handshake_tx = 0;
  int jam_detections = 0;
  int hops = 0;
  int duplicates = 0;
};

/// Two link controllers sharing one simulated radio medium on a virtual clock.
/// The clock advances in ticks of one data bit; each tick every listening node
/// despreads one bit of whatever its current channel carries.
class Session {
 public:
  std::function<void(const link::TraceEvent&)> on_trace;
  std::function<void(const ChatMessage&)> on_chat;
  std::function<void(double t, std::uint8_t from, std::uint8_t to, std::size_t bytes)> on_voice;

  explicit Session(SessionConfig cfg)
      : cfg_(std::move(cfg)), pn_(cfg_.pn()), rng_(cfg_.seed), jammer_(cfg_.jammer) {
    cfg_.validate();
    timeout_ticks_ = static_cast<std::int64_t>(
        std::ceil(cfg_.timeout_factor * static_cast<double>(link::frame_bits(cfg_.chars_per_frame))));
    sig_amp_ = std::sqrt(db_to_power(cfg_.signal_dbm));
    energy_gate_ = db_to_power(cfg_.noise_dbm) * db_to_power(cfg_.jam_energy_gate_db);
    for (auto addr : {cfg_.node_a, cfg_.node_b}) {
      nodes_.emplace_back(link::LinkController(addr, cfg_.link));
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      nodes_[i].ctl.set_trace_sink([this](const link::TraceEvent& e) { record(e); });
  }

  const SessionConfig& config() const noexcept { return cfg_; }

  /// Schedules node_a's connection request to node_b.
  void start(double at = 0.0) {
    push(tick_of(at), EventKind::initiate, 0);
    push(tick_of(at), EventKind::monitor, 0);
    if (cfg_.voice_interval_s > 0.0) push(tick_of(at + cfg_.voice_interval_s), EventKind::voice, 0);
  }

  /// Text typed at `node` (an address) at time `at`.
  void type_text(std::uint8_t node, std::string_view text, double at) {
    const auto& table = dtmf::DtmfTable::standard();
    std::string bad;
    for (char c : text)
      if (!table.contains(c) && bad.find(c) == std::string::npos) bad += c;
    if (!bad.empty()) {
      std::string list;
      for (char c : bad) list += (list.empty() ? "" : ", ") + dtmf::DtmfTable::describe_char(c);
      throw Error(Errc::unknown_character, list);
    }
    if (text.empty()) return;
    inputs_.push_back({index_of(node), std::string(text)});
    ++pending_inputs_;
    push(std::max(tick_of(at), tick_), EventKind::input, inputs_.size() - 1);
  }

  /// One synthetic voice chunk offered at `node` at time `at`.
  void send_voice(std::uint8_t node, std::size_t bytes, double at) {
    if (bytes == 0 || bytes > link::kMaxPayload) throw Error(Errc::invalid_argument, "voice chunk must be 1..15 bytes");
    voice_requests_.push_back({index_of(node), std::string(bytes, '\0')});
    push(std::max(tick_of(at), tick_), EventKind::voice_once, voice_requests_.size() - 1);
  }

  void set_jammer(const phy::SweepJammer& j, double at) {
    jammer_updates_.push_back(j);
    push(std::max(tick_of(at), tick_), EventKind::jammer, jammer_updates_.size() - 1);
  }

  void run_until(double t) {
    const auto end = tick_of(t);
    while (!events_.empty() && events_.top().tick <= end) step();
    advance(end);
    tick_ = std::max(tick_, end);
  }

  /// Runs until every queued character is delivered and acknowledged (or the
  /// handshake failed). Returns false if `max_t` is reached first.
  bool run_until_quiescent(double max_t) {
    const auto end = tick_of(max_t);
    while (!events_.empty() && events_.top().tick <= end) {
      step();
      if (quiescent()) return true;
    }
    advance(end);
    tick_ = std::max(tick_, end);
    return quiescent();
  }

  double now() const noexcept { return time_of(tick_); }
  bool handshake_failed() const {
    return std::any_of(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.ctl.handshake_failed(); });
  }
  bool connected() const {
    return std::all_of(nodes_.begin(), nodes_.end(), [](const Node& n) {
      return n.ctl.state().phase == link::Phase::connected || n.ctl.state().phase == link::Phase::diverting;
    });
  }

  const std::vector<std::string>& trace_lines() const noexcept { return trace_; }
  std::string trace_log() const {
    std::string s;
    for (const auto& l : trace_) s += l + '\n';
    return s;
  }

  /// Characters delivered to `node`, in delivery order.
  const std::string& delivered(std::uint8_t node) const { return nodes_[index_of(node)].delivered; }
  const std::vector<ChatMessage>& messages() const noexcept { return messages_; }
  const SessionStats& stats() const noexcept { return stats_; }
  const std::vector<DataTxRecord>& data_records() const noexcept { return data_records_; }
  const link::LinkController& controller(std::uint8_t node) const { return nodes_[index_of(node)].ctl; }
  const phy::SweepJammer& jammer() const noexcept { return jammer_; }

  /// Received power per channel in dBm: noise floor, plus the signal where a
  /// frame is on air, plus the jammer where it sits.
  std::vector<double> spectrum_snapshot() const {
    const double t = now();
    std::vector<double> p(static_cast<std::size_t>(cfg_.plan.channel_count), db_to_power(cfg_.noise_dbm));
    for (const auto& tx : active_)
      if (tx.start <= tick_ && tick_ < tx.end) p[static_cast<std::size_t>(tx.channel)] += db_to_power(cfg_.signal_dbm);
    if (const auto jc = jammer_.channel_at(t)) p[static_cast<std::size_t>(*jc)] += jammer_.power_on(*jc, t);
    std::vector<double> out;
    for (double v : p) out.push_back(v > 0.0 ? power_to_db(v) : -200.0);
    return out;
  }

 private:
  enum class EventKind { initiate, wake, tx_end, timer, input, jammer, monitor, voice, voice_once };

  struct Event {
    std::int64_t tick;
    std::uint64_t seq;
    EventKind kind;
    std::size_t arg;
    std::uint64_t gen = 0;
    bool operator>(const Event& o) const { return tick != o.tick ? tick > o.tick : seq > o.seq; }
  };

  struct Transmission {
    std::uint64_t id = 0;
    std::size_t sender = 0;
    int channel = 0;
    std::int64_t start = 0;
    std::int64_t end = 0;
    bool fsk = false;
    link::Frame frame;
    Bits bits;
  };

  struct Reception {
    bool ok = true;
    Bits bits;
  };

  struct Node {
    explicit Node(link::LinkController c) : ctl(std::move(c)) {}
    link::LinkController ctl;
    std::deque<link::Frame> replies;
    std::optional<link::Frame> retransmit;
    std::int64_t tx_start = -1;
    std::int64_t tx_end = -1;
    std::uint64_t timer_gen = 0;
    int jam_run = 0;
    std::int64_t cursor = 0;
    std::map<std::uint64_t, Reception> rx;
    std::string partial;
    std::string delivered;
    std::optional<std::size_t> last_data_record;
  };

  struct Input {
    std::size_t node;
    std::string text;
  };

  std::int64_t tick_of(double t) const { return static_cast<std::int64_t>(std::llround(t * cfg_.bit_rate)); }
  double time_of(std::int64_t tick) const { return static_cast<double>(tick) / cfg_.bit_rate; }

  std::size_t index_of(std::uint8_t addr) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].ctl.state().address == addr) return i;
    throw Error(Errc::invalid_address, "no node with address " + std::to_string(addr));
  }

  void push(std::int64_t tick, EventKind kind, std::size_t arg, std::uint64_t gen = 0) {
    events_.push({tick, next_seq_++, kind, arg, gen});
  }

  void record(const link::TraceEvent& e) {
    trace_.push_back(link::format_trace(e));
    if (e.event == "hop") ++stats_.hops;
    if (on_trace) on_trace(e);
  }

  void step() {
    const Event ev = events_.top();
    events_.pop();
    advance(ev.tick);
    tick_ = ev.tick;
    const double t = time_of(tick_);
    switch (ev.kind) {
      case EventKind::initiate: {
        auto& n = nodes_[ev.arg];
        start_tx(ev.arg, n.ctl.initiate(nodes_[1 - ev.arg].ctl.state().address, t));
        break;
      }
      case EventKind::wake: wake(ev.arg); break;
      case EventKind::tx_end: finish_tx(ev.arg); break;
      case EventKind::timer: {
        auto& n = nodes_[ev.arg];
        if (ev.gen != n.timer_gen) break;
        if (auto f = n.ctl.on_timeout(t)) {
          if (f->kind == link::FrameKind::data) ++stats_.retransmissions;
          n.retransmit = std::move(f);
          wake(ev.arg);
        }
        break;
      }
      case EventKind::input: {
        auto& in = inputs_[ev.arg];
        auto& q = nodes_[in.node].ctl.queues().data;
        for (std::size_t i = 0; i < in.text.size(); i += cfg_.chars_per_frame) {
          const bool last = i + cfg_.chars_per_frame >= in.text.size();
          q.push_back({in.text.substr(i, cfg_.chars_per_frame), last});
        }
        --pending_inputs_;
        wake(in.node);
        break;
      }
      case EventKind::jammer: jammer_ = jammer_updates_[ev.arg]; break;
      case EventKind::monitor: push(tick_ + cfg_.jam_bits, EventKind::monitor, 0); break;
      case EventKind::voice_once: {
        const auto& req = voice_requests_[ev.arg];
        std::vector<std::uint8_t> chunk(req.text.size());
        for (auto& b : chunk) b = static_cast<std::uint8_t>(rng_() & 0xFF);
        nodes_[req.node].ctl.queues().voice.push_back(std::move(chunk));
        wake(req.node);
        break;
      }
      case EventKind::voice: {
        std::vector<std::uint8_t> chunk(cfg_.voice_chunk_bytes);
        for (auto& b : chunk) b = static_cast<std::uint8_t>(rng_() & 0xFF);
        nodes_[ev.arg].ctl.queues().voice.push_back(std::move(chunk));
        wake(ev.arg);
        push(tick_ + std::max<std::int64_t>(1, tick_of(cfg_.voice_interval_s)), EventKind::voice, ev.arg);
        break;
      }
    }
  }

  bool quiescent() const {
    if (handshake_failed()) return true;
    if (pending_inputs_ > 0 || !connected()) return false;
    for (const auto& tx : active_)
      if (tx.frame.kind != link::FrameKind::voice) return false;
    for (const auto& n : nodes_) {
      if (!n.replies.empty() || n.retransmit || n.ctl.outstanding() || !n.ctl.queues().data.empty()) return false;
    }
    return true;
  }

  bool transmitting(const Node& n, std::int64_t k) const { return k >= n.tx_start && k < n.tx_end; }

  bool carrier_busy(std::size_t i) const {
    const int ch = nodes_[i].ctl.state().active_channel;
    for (const auto& tx : active_)
      if (tx.sender != i && tx.channel == ch && tx.start <= tick_ && tick_ < tx.end) return true;
    return false;
  }

  void wake(std::size_t i) {
    auto& n = nodes_[i];
    if (transmitting(n, tick_) || carrier_busy(i)) return;
    std::optional<link::Frame> f;
    if (!n.replies.empty()) {
      f = std::move(n.replies.front());
      n.replies.pop_front();
    } else if (n.retransmit) {
      f = std::move(n.retransmit);
      n.retransmit.reset();
    } else {
      const auto phase = n.ctl.state().phase;
      if (phase == link::Phase::connected || phase == link::Phase::diverting) {
        if (n.ctl.outstanding()) return;
        f = n.ctl.next_frame(time_of(tick_));
      }
    }
    if (f) start_tx(i, std::move(*f));
  }

  void start_tx(std::size_t i, link::Frame frame) {
    auto& n = nodes_[i];
    Transmission tx;
    tx.id = next_tx_id_++;
    tx.sender = i;
    tx.channel = n.ctl.state().active_channel;
    tx.start = tick_;
    tx.frame = std::move(frame);
    if (tx.frame.kind == link::FrameKind::handshake) {
      // Codec line to radio: PRT pulses, sliced back to bits by the radio.
      const auto pulses = pulse::encode_pulses(pulse::serialize_bits(tx.frame.code), cfg_.fsk_sample_rate);
      tx.bits = pulse::bits_of(pulse::recover_pulses(pulses.signal));
      tx.fsk = true;
      const double airtime = static_cast<double>(tx.bits.size()) / cfg_.fsk_bit_rate;
      tx.end = tick_ + std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(airtime * cfg_.bit_rate)));
      ++stats_.handshake_tx;
    } else {
      tx.bits = link::encode_frame(tx.frame);
      tx.end = tick_ + static_cast<std::int64_t>(tx.bits.size());
      if (tx.frame.kind == link::FrameKind::data) ++stats_.data_tx;
      if (tx.frame.kind == link::FrameKind::voice) ++stats_.voice_tx;
    }
    n.tx_start = tx.start;
    n.tx_end = tx.end;
    push(tx.end, EventKind::tx_end, static_cast<std::size_t>(tx.id));
    active_.push_back(std::move(tx));
  }

  /// Observe ticks [cursor, until) at every node.
  void advance(std::int64_t until) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      auto& n = nodes_[i];
      for (std::int64_t k = n.cursor; k < until; ++k) observe(i, k);
      n.cursor = std::max(n.cursor, until);
    }
  }

  void observe(std::size_t i, std::int64_t k) {
    auto& n = nodes_[i];
    const int ch = n.ctl.state().active_channel;
    const bool busy = transmitting(n, k);

    dsss_.clear();
    bool fsk_here = false;
    for (const auto& tx : active_) {
      if (tx.sender == i || k < tx.start || k >= tx.end) continue;
      auto [it, fresh] = n.rx.try_emplace(tx.id);
      if (fresh && k != tx.start) it->second.ok = false;
      if (busy || tx.channel != ch) {
        it->second.ok = false;
        continue;
      }
      if (tx.fsk) fsk_here = true;
      else dsss_.push_back(&tx);
    }
    if (busy) return;

    const double t = time_of(k);
    const auto phase = n.ctl.state().phase;
    const bool listening = (phase == link::Phase::connected || phase == link::Phase::diverting) &&
                           cfg_.link.diversion && !fsk_here;
    const bool jam_here = jammer_.enabled && jammer_.channel_at(t) == ch;
    if (dsss_.empty() && !(listening && jam_here)) {
      n.jam_run = 0;
      return;
    }

    const std::size_t nc = pn_.length();
    chips_.assign(nc, 0.0);
    const auto code = pn_.chips();
    for (const auto* tx : dsss_) {
      const double s = tx->bits[static_cast<std::size_t>(k - tx->start)] == Bit::one ? sig_amp_ : -sig_amp_;
      for (std::size_t c = 0; c < nc; ++c) chips_[c] += s * code[c];
    }
    phy::ChannelState cs{ch, cfg_.noise_dbm, jammer_};
    phy::apply_channel(std::span<double>(chips_), cfg_.bit_rate * static_cast<double>(nc), cs, t, rng_);
    const auto d = phy::despread(chips_, pn_);
    for (const auto* tx : dsss_) n.rx[tx->id].bits.push_back(d.bits[0]);

    if (!listening) return;
    if (d.margin[0] < cfg_.jam_margin && d.energy[0] > energy_gate_) {
      if (++n.jam_run >= cfg_.jam_bits) {
        n.jam_run = 0;
        ++stats_.jam_detections;
        n.ctl.on_jam_detected(time_of(k + 1));
      }
    } else {
      n.jam_run = 0;
    }
  }

  std::optional<link::Frame> receive_fsk(const Transmission& tx, std::size_t i) {
    const auto& n = nodes_[i];
    auto air = phy::fsk_modulate(tx.bits, cfg_.fsk_mark_hz, cfg_.fsk_space_hz, cfg_.fsk_bit_rate, cfg_.fsk_sample_rate);
    for (double& v : air.samples) v *= std::sqrt(2.0) * sig_amp_;
    phy::ChannelState cs{n.ctl.state().active_channel, cfg_.noise_dbm, jammer_};
    air = phy::channel_transmit(air, cs, time_of(tx.start), rng_);
    const auto demod = phy::fsk_demodulate(air, cfg_.fsk_mark_hz, cfg_.fsk_space_hz, cfg_.fsk_bit_rate);
    if (std::any_of(demod.bits.begin(), demod.bits.end(), is_erasure)) return std::nullopt;
    // Radio to codec: a sine at each bit's PRT, squared up again by the codec.
    auto line = pulse::sine_pulse_train(demod.bits, cfg_.fsk_sample_rate);
    add_noise_snr(line, cfg_.codec_line_snr_db, rng_);
    try {
      const auto bits = pulse::bits_of(pulse::recover_pulses(line));
      return link::Frame::handshake(pulse::parse_bits(bits));
    } catch (const Error&) {
      return std::nullopt;
    }
  }

  /// The receive window's DTMF path: regenerate the tone pair the frame
  /// carried and run it through the spectral decoder.
  static std::string audio_port(const std::string& text) {
    std::string out;
    for (char c : text) {
      const auto& sym = dtmf::DtmfTable::standard().at(c);
      try {
        out += dtmf::decode_symbol(
            dtmf::render_tones(sym.low_freq, sym.high_freq, dtmf::kSymbolSeconds, dtmf::kSampleRate));
      } catch (const Error&) {
        out += "\xEF\xBF\xBD";
      }
    }
    return out;
  }

  void finish_tx(std::uint64_t id) {
    const auto it = std::find_if(active_.begin(), active_.end(), [&](const Transmission& tx) { return tx.id == id; });
    Transmission tx = std::move(*it);
    active_.erase(it);
    const double t = time_of(tick_);

    bool received_by_peer = false;
    for (std::size_t j = 0; j < nodes_.size(); ++j) {
      if (j == tx.sender) continue;
      auto& n = nodes_[j];
      auto it = n.rx.find(tx.id);
      std::optional<link::Frame> frame;
      if (it != n.rx.end() && it->second.ok) {
        if (tx.fsk) frame = receive_fsk(tx, j);
        else if (it->second.bits.size() == tx.bits.size()) frame = link::decode_frame(it->second.bits);
      }
      if (it != n.rx.end()) n.rx.erase(it);
      if (!frame) continue;
      received_by_peer = true;

      const bool was_awaiting = n.ctl.awaiting_reply();
      auto out = n.ctl.on_frame(*frame, t);
      if (was_awaiting && !n.ctl.awaiting_reply()) {
        ++n.timer_gen;
        if (frame->kind == link::FrameKind::ack && n.last_data_record)
          data_records_[*n.last_data_record].acknowledged = true;
      }
      if (out.reply) n.replies.push_back(std::move(*out.reply));
      if (out.duplicate) ++stats_.duplicates;
      if (out.voice) {
        ++stats_.voice_rx;
        if (on_voice) on_voice(t, nodes_[tx.sender].ctl.state().address, n.ctl.state().address, frame->pcm.size());
      }
      if (out.delivered) {
        const auto text = audio_port(out.delivered->text);
        n.delivered += text;
        n.partial += text;
        if (out.delivered->end_of_message) {
          ChatMessage m{t, nodes_[tx.sender].ctl.state().address, n.ctl.state().address, std::move(n.partial)};
          n.partial.clear();
          messages_.push_back(m);
          if (on_chat) on_chat(m);
        }
      }
    }

    if (tx.frame.kind == link::FrameKind::data) {
      nodes_[tx.sender].last_data_record = data_records_.size();
      data_records_.push_back(
          {time_of(tx.start), t, tx.channel, nodes_[tx.sender].ctl.state().address, received_by_peer, false});
      if (!received_by_peer) ++stats_.data_lost;
    }

    auto& s = nodes_[tx.sender];
    const bool wants_reply = tx.frame.kind == link::FrameKind::data ||
                             (tx.frame.kind == link::FrameKind::handshake && !tx.frame.code.ack);
    if (wants_reply && s.ctl.awaiting_reply()) {
      const auto jitter = static_cast<std::int64_t>(rng_() % static_cast<std::uint64_t>(timeout_ticks_ / 4 + 1));
      push(tick_ + timeout_ticks_ + jitter, EventKind::timer, tx.sender, ++s.timer_gen);
    }
    for (std::size_t j = 0; j < nodes_.size(); ++j) push(tick_ + cfg_.turnaround_bits, EventKind::wake, j);
  }

  SessionConfig cfg_;
  phy::PnSequence pn_;
  std::mt19937_64 rng_;
  phy::SweepJammer jammer_;
  std::vector<Node> nodes_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
  std::uint64_t next_seq_ = 0;
  std::uint64_t next_tx_id_ = 0;
  std::int64_t tick_ = 0;
  std::int64_t timeout_ticks_ = 0;
  double sig_amp_ = 1.0;
  double energy_gate_ = 0.0;

  std::vector<Transmission> active_;
  std::vector<Input> inputs_;
  std::vector<Input> voice_requests_;  // text holds only the chunk length
  int pending_inputs_ = 0;
  std::vector<phy::SweepJammer> jammer_updates_;

  std::vector<std::string> trace_;
  std::vector<ChatMessage> messages_;
  std::vector<DataTxRecord> data_records_;
  SessionStats stats_;

  std::vector<const Transmission*> dsss_;
  std::vector<double> chips_;
};

}  // namespace sslink::sim
