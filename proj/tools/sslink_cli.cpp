#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "sslink/sslink.hpp"

namespace {

enum Exit { ok = 0, failure = 1, usage = 2, handshake = 3, io = 4 };

int exit_for(const sslink::Error& e) {
  switch (e.code()) {
    case sslink::Errc::io: return io;
    case sslink::Errc::config:
    case sslink::Errc::unknown_character:
    case sslink::Errc::invalid_argument:
    case sslink::Errc::invalid_address:
    case sslink::Errc::self_address: return usage;
    default: return failure;
  }
}

struct Common {
  std::string config;
  std::optional<long> seed;
  std::string out;

  sslink::KeyValueConfig load() const {
    auto kv = config.empty() ? sslink::KeyValueConfig{} : sslink::KeyValueConfig::load(config);
    if (seed) kv.set("seed", std::to_string(*seed));
    return kv;
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "key = value configuration file");
  app->add_option("--seed", c.seed, "seed for all randomness");
  app->add_option("--out", c.out, "output path");
}

std::ostream& open_out(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file) throw sslink::Error(sslink::Errc::io, "cannot write " + path);
  return file;
}

int cmd_encode(const Common& c, const std::string& text, double rate) {
  if (c.out.empty()) throw sslink::Error(sslink::Errc::invalid_argument, "encode needs --out <file.wav>");
  sslink::wav::write_file(c.out, sslink::dtmf::encode_text(text, rate));
  return ok;
}

int cmd_decode(const Common& c, const std::string& in) {
  const auto decoded = sslink::dtmf::decode_stream(sslink::wav::read_file(in));
  std::ofstream f;
  open_out(c.out, f) << decoded.text() << '\n';
  return ok;
}

int cmd_chat(const Common& c, const std::vector<std::string>& texts, double until, bool jam) {
  auto kv = c.load();
  if (jam) kv.set("jammer_enabled", "true");
  const auto cfg = sslink::sim::SessionConfig::from(kv);
  sslink::sim::Session s(cfg);
  s.on_trace = [](const sslink::link::TraceEvent& e) { std::cerr << sslink::link::format_trace(e) << '\n'; };
  s.on_chat = [](const sslink::sim::ChatMessage& m) {
    char head[64];
    std::snprintf(head, sizeof head, "[%.3f] %u -> %u: ", m.time, unsigned{m.from}, unsigned{m.to});
    std::cout << head << m.text << std::endl;
  };
  s.start();

  // "<addr>: text" types at that node; bare text types at node_a.
  auto submit = [&](const std::string& line, double at) {
    std::uint8_t from = cfg.node_a;
    std::string text = line;
    if (const auto colon = line.find(':'); colon != std::string::npos && colon > 0 && colon <= 2) {
      const auto addr = line.substr(0, colon);
      if (addr.find_first_not_of("0123456789") == std::string::npos) {
        from = static_cast<std::uint8_t>(std::stoi(addr));
        text = line.substr(colon + 1);
        if (!text.empty() && text.front() == ' ') text.erase(0, 1);
      }
    }
    s.type_text(from, text, at);
  };

  if (!texts.empty()) {
    for (const auto& t : texts) submit(t, 0.0);
    s.run_until_quiescent(until);
  } else {
    std::string line;
    while (std::getline(std::cin, line)) {
      if (line.empty()) continue;
      submit(line, s.now());
      if (!s.run_until_quiescent(s.now() + until)) break;
      if (s.handshake_failed()) break;
    }
  }

  if (!c.out.empty()) {
    std::ofstream f(c.out);
    if (!f) throw sslink::Error(sslink::Errc::io, "cannot write " + c.out);
    f << s.trace_log();
  }
  if (s.handshake_failed()) {
    std::cerr << "handshake failed\n";
    return handshake;
  }
  return ok;
}

std::vector<sslink::jam::JamMeasurement> load_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw sslink::Error(sslink::Errc::io, "cannot open " + path);
  return sslink::jam::read_csv(f);
}

void write_fit(const std::vector<sslink::jam::JamMeasurement>& rows, const std::string& prefix) {
  std::vector<double> y;
  for (const auto& r : rows) y.push_back(r.power_increasing_dbm);
  const auto fit = sslink::jam::fit_double_exponential(rows);
  std::ofstream rf, pf;
  if (prefix.empty()) {
    sslink::jam::write_fit_report(std::cout, fit, y);
    return;
  }
  rf.open(prefix + "_fit.txt");
  pf.open(prefix + "_plot.csv");
  if (!rf || !pf) throw sslink::Error(sslink::Errc::io, "cannot write fit outputs for " + prefix);
  sslink::jam::write_fit_report(rf, fit, y);
  sslink::jam::write_plot_csv(pf, fit.coefficients, rows.front().dwell_s, rows.back().dwell_s);
  sslink::jam::write_fit_report(std::cout, fit, y);
}

int cmd_experiment(const Common& c, const std::vector<double>& dwells, double step, const std::string& fit_only) {
  if (!fit_only.empty()) {
    write_fit(load_csv(fit_only), c.out);
    return ok;
  }
  if (dwells.empty()) throw CLI::ValidationError("--dwells", "dwell list is empty");
  const auto kv = c.load();
  sslink::jam::SweepOptions opt;
  opt.base = sslink::sim::SessionConfig::from(kv);
  opt.base.jammer.enabled = true;
  opt.power_step_db = step;
  opt.power_min_dbm = kv.get("sweep_power_min_dbm", opt.power_min_dbm);
  opt.power_max_dbm = kv.get("sweep_power_max_dbm", opt.power_max_dbm);
  opt.window_s = kv.get("sweep_window_s", opt.window_s);
  opt.arrival_s = kv.get("sweep_arrival_s", opt.arrival_s);
  opt.trials = static_cast<int>(kv.get("sweep_trials", static_cast<long>(opt.trials)));

  std::vector<sslink::jam::JamMeasurement> rows;
  int failed = 0;
  for (std::size_t i = 0; i < dwells.size(); ++i) {
    try {
      rows.push_back(sslink::jam::measure_dwell(opt, dwells[i], i));
      std::fprintf(stderr, "dwell %g s: %.2f dBm up, %.2f dBm down\n", dwells[i], rows.back().power_increasing_dbm,
                   rows.back().power_decreasing_dbm);
    } catch (const sslink::Error& e) {
      std::fprintf(stderr, "dwell %g s: %s\n", dwells[i], e.what());
      ++failed;
    }
  }
  std::ofstream f;
  const std::string csv = c.out.empty() ? "" : c.out + ".csv";
  sslink::jam::write_csv(open_out(csv, f), rows);
  if (rows.size() >= 6) write_fit(rows, c.out);
  else std::fprintf(stderr, "fit skipped: %zu points, need 6\n", rows.size());
  return failed ? failure : ok;
}

std::atomic<bool> g_stop{false};

int cmd_serve(const Common& c, std::uint16_t port, double pace) {
  const auto cfg = sslink::sim::SessionConfig::from(c.load());
  sslink::gateway::GatewayOptions opt;
  opt.pace = pace;
  sslink::gateway::Gateway gw(cfg, opt);
  gw.start(port);
  std::fprintf(stderr, "gateway listening on 127.0.0.1:%u\n", unsigned{gw.port()});
  std::signal(SIGINT, [](int) { g_stop = true; });
  std::signal(SIGTERM, [](int) { g_stop = true; });
  while (!g_stop && !gw.failed()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  gw.stop();
  return gw.failed() ? handshake : ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spread-spectrum chat link simulator"};
  app.require_subcommand(1);
  Common common;

  auto* encode = app.add_subcommand("encode", "text to a DTMF WAV file");
  std::string text;
  double rate = sslink::dtmf::kSampleRate;
  add_common(encode, common);
  encode->add_option("text", text, "characters to encode")->required();
  encode->add_option("--rate", rate, "sample rate in Hz");

  auto* decode = app.add_subcommand("decode", "DTMF WAV file to text");
  std::string in;
  add_common(decode, common);
  decode->add_option("input", in, "WAV file")->required();

  auto* chat = app.add_subcommand("chat", "two simulated nodes chatting");
  std::vector<std::string> texts;
  double until = 600.0;
  bool jam = false;
  add_common(chat, common);
  chat->add_option("--text", texts, "message to send (\"<addr>: text\" picks the sender); repeatable");
  chat->add_option("--max-time", until, "simulated seconds to allow per message");
  chat->add_flag("--jammer", jam, "enable the sweep jammer");

  auto* experiment = app.add_subcommand("experiment", "dwell time vs jamming power sweep and fit");
  std::vector<double> dwells{0.1, 0.2, 0.3, 0.5, 0.7, 1.0};
  double step = 0.5;
  std::string fit_only;
  add_common(experiment, common);
  experiment->add_option("--dwells", dwells, "dwell times in seconds")->delimiter(',')->check(CLI::PositiveNumber);
  experiment->add_option("--step", step, "power step in dB")->check(CLI::PositiveNumber);
  experiment->add_option("--fit-only", fit_only, "fit an existing CSV instead of running the sweep");

  auto* serve = app.add_subcommand("serve", "gateway for the chat console");
  std::uint16_t port = 7350;
  double pace = 1.0;
  add_common(serve, common);
  serve->add_option("--port", port, "TCP port");
  serve->add_option("--pace", pace, "simulated seconds per wall second, 0 for flat out");

  try {
    app.parse(argc, argv);
    if (*encode) return cmd_encode(common, text, rate);
    if (*decode) return cmd_decode(common, in);
    if (*chat) return cmd_chat(common, texts, until, jam);
    if (*experiment) return cmd_experiment(common, dwells, step, fit_only);
    if (*serve) return cmd_serve(common, port, pace);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? ok : usage;
  } catch (const sslink::Error& e) {
    std::fprintf(stderr, "error (%s): %s\n", sslink::errc_name(e.code()), e.what());
    return exit_for(e);
  }
  return usage;
}
