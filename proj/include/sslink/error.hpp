#pragma once

#include <stdexcept>
#include <string>

namespace sslink {

enum class Errc {
  unknown_character,
  buffer_too_short,
  no_peak,
  out_of_tolerance,
  invalid_argument,
  invalid_address,
  non_integral_prt,
  no_edges,
  bad_start_bit,
  erasure_present,
  bad_length,
  aliasing,
  no_free_channel,
  busy,
  self_address,
  not_connected,
  non_convergence,
  divergence,
  precondition,
  config,
  io,
  protocol,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::unknown_character: return "unknown-character";
    case Errc::buffer_too_short: return "buffer-too-short";
    case Errc::no_peak: return "no-peak";
    case Errc::out_of_tolerance: return "out-of-tolerance";
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::invalid_address: return "invalid-address";
    case Errc::non_integral_prt: return "non-integral-prt";
    case Errc::no_edges: return "no-edges";
    case Errc::bad_start_bit: return "bad-start-bit";
    case Errc::erasure_present: return "erasure-present";
    case Errc::bad_length: return "bad-length";
    case Errc::aliasing: return "aliasing";
    case Errc::no_free_channel: return "no-free-channel";
    case Errc::busy: return "busy";
    case Errc::self_address: return "self-address";
    case Errc::not_connected: return "not-connected";
    case Errc::non_convergence: return "non-convergence";
    case Errc::divergence: return "divergence";
    case Errc::precondition: return "precondition";
    case Errc::config: return "config";
    case Errc::io: return "io";
    case Errc::protocol: return "protocol";
  }
  return "unknown";
}

/// All library failures are reported as this exception; `code()` tells them apart.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace sslink
