#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "sslink/error.hpp"
#include "sslink/signal.hpp"

// 16-bit signed little-endian mono PCM WAV.
namespace sslink::wav {

namespace detail {

inline void put_u32(std::vector<char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>(v >> (8 * i) & 0xFF));
}
inline void put_u16(std::vector<char>& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xFF));
  b.push_back(static_cast<char>(v >> 8));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
inline std::uint16_t get_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | p[1] << 8); }

}  // namespace detail

inline std::int16_t to_pcm16(double v) {
  const double s = std::clamp(v, -1.0, 1.0) * 32767.0;
  return static_cast<std::int16_t>(std::lround(s));
}

inline std::vector<char> encode(const SampleBuffer& buf) {
  using namespace detail;
  const auto rate = static_cast<std::uint32_t>(std::lround(buf.sample_rate));
  const auto data_bytes = static_cast<std::uint32_t>(buf.size() * 2);
  std::vector<char> b;
  b.reserve(44 + data_bytes);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  put_u32(b, 36 + data_bytes);
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(b, 16);
  put_u16(b, 1);  // PCM
  put_u16(b, 1);  // mono
  put_u32(b, rate);
  put_u32(b, rate * 2);
  put_u16(b, 2);
  put_u16(b, 16);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  put_u32(b, data_bytes);
  for (double v : buf.samples) put_u16(b, static_cast<std::uint16_t>(to_pcm16(v)));
  return b;
}

inline SampleBuffer decode(const std::vector<char>& bytes) {
  using namespace detail;
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  if (n < 12 || std::string(bytes.data(), 4) != "RIFF" || std::string(bytes.data() + 8, 4) != "WAVE")
    throw Error(Errc::io, "not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= n) {
    const std::string id(bytes.data() + pos, 4);
    const std::uint32_t len = get_u32(p + pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > n && id != "data") throw Error(Errc::io, "truncated chunk " + id);
    if (id == "fmt ") {
      if (len < 16) throw Error(Errc::io, "short fmt chunk");
      format = get_u16(p + body);
      channels = get_u16(p + body + 2);
      rate = get_u32(p + body + 4);
      bits = get_u16(p + body + 14);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw Error(Errc::io, "data chunk before fmt chunk");
      if (format != 1 || channels != 1 || bits != 16)
        throw Error(Errc::io, "only 16-bit PCM mono is supported");
      const std::size_t avail = std::min<std::size_t>(len, n - body);
      SampleBuffer out;
      out.sample_rate = rate;
      out.samples.resize(avail / 2);
      for (std::size_t i = 0; i < out.samples.size(); ++i)
        out.samples[i] = static_cast<std::int16_t>(get_u16(p + body + 2 * i)) / 32767.0;
      return out;
    }
    pos = body + len + (len & 1);
  }
  throw Error(Errc::io, "no data chunk");
}

inline void write_file(const std::string& path, const SampleBuffer& buf) {
  const auto bytes = encode(buf);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::io, "cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(Errc::io, "write failed: " + path);
}

inline SampleBuffer read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::io, "cannot open " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

}  // namespace sslink::wav
