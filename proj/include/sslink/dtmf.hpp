#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "sslink/error.hpp"
#include "sslink/signal.hpp"
#include "sslink/spectrum.hpp"

namespace sslink::dtmf {

inline constexpr std::array<double, 10> kLowFreqs = {699, 772, 842, 854, 869, 880, 918, 930, 943, 990};
inline constexpr std::array<double, 10> kHighFreqs = {1151, 1168, 1179, 1211, 1236,
                                                      1280, 1369, 1384, 1451, 1497};

/// Characters in table order; each string is one high-frequency row, column i
/// uses kLowFreqs[i]. Rows follow kHighFreqs.
inline constexpr std::array<std::string_view, 10> kRows = {
    "0123456789", "ABCDEFGHIJ", "KLMNOPQRST", "UVWXYZabcd", "efghijklmn",
    "opqrstuvwx", ">?,./+-*\\",  "yz:;[]{}\"<", "~!@#$%^&_(", ")=",
};

inline constexpr std::size_t kTableCharacters = 91;
// ' ' is not part of the printed table; it takes the free (854, 1497) cell.
inline constexpr char kSpace = ' ';
inline constexpr std::size_t kSpaceLow = 3;
inline constexpr std::size_t kSpaceHigh = 9;

inline constexpr double kSampleRate = 8000.0;
inline constexpr double kToneAmplitude = 0.45;
inline constexpr double kSymbolSeconds = 0.256;  // 2048 samples at 8 kHz
inline constexpr double kGuardSeconds = 0.064;   // 512 samples at 8 kHz
inline constexpr double kTolerance = 0.05;
inline constexpr double kDetectionRatio = 10.0;
// A band's peak must also reach this fraction of the strongest peak in either
// band, so window leakage from a lone tone is not taken for its partner.
inline constexpr double kTwistFloor = 0.1;

// Peak search regions. The published low group tops out at 990 Hz and the high
// group starts at 1151 Hz; the split point sits between the two 5% caps so an
// off-table tone lands in a region and is rejected rather than missed.
inline constexpr double kLowSearchMin = 650.0;
inline constexpr double kBandSplit = 1065.0;
inline constexpr double kHighSearchMax = 1580.0;

struct ToneSymbol {
  char character = 0;
  double low_freq = 0.0;
  double high_freq = 0.0;
  std::uint8_t low_index = 0;
  std::uint8_t high_index = 0;

  /// Compact tone code: low index in the high nibble, high index in the low nibble.
  std::uint8_t code() const noexcept { return static_cast<std::uint8_t>(low_index << 4 | high_index); }

  friend bool operator==(const ToneSymbol&, const ToneSymbol&) = default;
};

class DtmfTable {
 public:
  DtmfTable() = default;

  /// Table-1 layout plus the space extension (92 entries).
  static const DtmfTable& standard() {
    static const DtmfTable table = [] {
      DtmfTable t;
      for (std::size_t row = 0; row < kRows.size(); ++row)
        for (std::size_t col = 0; col < kRows[row].size(); ++col)
          t.insert(kRows[row][col], col, row);
      t.insert(kSpace, kSpaceLow, kSpaceHigh);
      return t;
    }();
    return table;
  }

  /// Reads `<codepoint> <low_hz> <high_hz>` lines; '#' starts a comment.
  static DtmfTable load(std::istream& in) {
    DtmfTable t;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      long cp = 0;
      double lo = 0, hi = 0;
      if (std::sscanf(line.c_str(), "%ld %lf %lf", &cp, &lo, &hi) != 3 || cp < 32 || cp > 126)
        throw Error(Errc::config, "bad table line " + std::to_string(lineno));
      const auto li = std::find(kLowFreqs.begin(), kLowFreqs.end(), lo) - kLowFreqs.begin();
      const auto hix = std::find(kHighFreqs.begin(), kHighFreqs.end(), hi) - kHighFreqs.begin();
      if (li == static_cast<long>(kLowFreqs.size()) || hix == static_cast<long>(kHighFreqs.size()))
        throw Error(Errc::config, "frequency not in tone grid on line " + std::to_string(lineno));
      t.insert(static_cast<char>(cp), static_cast<std::size_t>(li), static_cast<std::size_t>(hix));
    }
    return t;
  }

  void save(std::ostream& out) const {
    for (const auto& e : entries_)
      out << static_cast<int>(static_cast<unsigned char>(e.character)) << ' ' << e.low_freq << ' ' << e.high_freq
          << '\n';
  }

  const std::vector<ToneSymbol>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::optional<ToneSymbol> find(char c) const {
    const auto idx = by_char_[static_cast<unsigned char>(c)];
    if (idx < 0) return std::nullopt;
    return entries_[static_cast<std::size_t>(idx)];
  }

  std::optional<ToneSymbol> find(std::size_t low_index, std::size_t high_index) const {
    if (low_index >= 10 || high_index >= 10) return std::nullopt;
    const auto idx = by_pair_[low_index][high_index];
    if (idx < 0) return std::nullopt;
    return entries_[static_cast<std::size_t>(idx)];
  }

  std::optional<ToneSymbol> from_code(std::uint8_t code) const { return find(code >> 4, code & 0x0F); }

  const ToneSymbol& at(char c) const {
    const auto idx = by_char_[static_cast<unsigned char>(c)];
    if (idx < 0) throw Error(Errc::unknown_character, describe_char(c));
    return entries_[static_cast<std::size_t>(idx)];
  }

  bool contains(char c) const { return by_char_[static_cast<unsigned char>(c)] >= 0; }

  friend bool operator==(const DtmfTable& a, const DtmfTable& b) { return a.entries_ == b.entries_; }

  static std::string describe_char(char c) {
    const auto u = static_cast<unsigned char>(c);
    if (u >= 32 && u < 127) return std::string("'") + c + "'";
    return "codepoint " + std::to_string(u);
  }

 private:
  void insert(char c, std::size_t li, std::size_t hi) {
    const auto u = static_cast<unsigned char>(c);
    if (by_char_[u] >= 0) throw Error(Errc::config, "duplicate character " + describe_char(c));
    if (by_pair_[li][hi] >= 0) throw Error(Errc::config, "duplicate tone pair for " + describe_char(c));
    by_char_[u] = static_cast<int>(entries_.size());
    by_pair_[li][hi] = static_cast<int>(entries_.size());
    entries_.push_back({c, kLowFreqs[li], kHighFreqs[hi], static_cast<std::uint8_t>(li), static_cast<std::uint8_t>(hi)});
  }

  std::vector<ToneSymbol> entries_;
  std::array<int, 256> by_char_ = filled();
  std::array<std::array<int, 10>, 10> by_pair_ = [] {
    std::array<std::array<int, 10>, 10> a{};
    for (auto& r : a) r.fill(-1);
    return a;
  }();

  static constexpr std::array<int, 256> filled() {
    std::array<int, 256> a{};
    a.fill(-1);
    return a;
  }
};

inline std::size_t samples_for(double seconds, double sample_rate) {
  return static_cast<std::size_t>(std::llround(seconds * sample_rate));
}

/// Two equal-amplitude sinusoids at the given pair.
inline SampleBuffer render_tones(double low_hz, double high_hz, double duration, double sample_rate) {
  SampleBuffer b;
  b.sample_rate = sample_rate;
  b.samples.assign(samples_for(duration, sample_rate), 0.0);
  add_tone(b.samples, low_hz, kToneAmplitude, sample_rate);
  add_tone(b.samples, high_hz, kToneAmplitude, sample_rate);
  return b;
}

inline SampleBuffer encode_char(char c, double symbol_duration = kSymbolSeconds, double sample_rate = kSampleRate,
                                const DtmfTable& table = DtmfTable::standard()) {
  const auto& sym = table.at(c);
  if (sample_rate < kSampleRate) throw Error(Errc::precondition, "sample rate below 8000 Hz");
  if (samples_for(symbol_duration, sample_rate) < kMinPeakSearchSamples)
    throw Error(Errc::precondition, "symbol shorter than 256 samples");
  return render_tones(sym.low_freq, sym.high_freq, symbol_duration, sample_rate);
}

/// Text as tone symbols, each followed by a silent guard interval.
inline SampleBuffer encode_text(std::string_view text, double sample_rate = kSampleRate,
                                const DtmfTable& table = DtmfTable::standard()) {
  std::string unknown;
  for (char c : text)
    if (!table.contains(c) && unknown.find(c) == std::string::npos) unknown += c;
  if (!unknown.empty()) {
    std::string list;
    for (char c : unknown) list += (list.empty() ? "" : ", ") + DtmfTable::describe_char(c);
    throw Error(Errc::unknown_character, list);
  }
  SampleBuffer out;
  out.sample_rate = sample_rate;
  const std::size_t guard = samples_for(kGuardSeconds, sample_rate);
  for (char c : text) {
    out.append(encode_char(c, kSymbolSeconds, sample_rate, table));
    out.samples.insert(out.samples.end(), guard, 0.0);
  }
  return out;
}

/// Nearest grid frequency index, or out_of_tolerance when the nearest one is
/// more than 5% away.
template <std::size_t N>
std::size_t classify_frequency(double hz, const std::array<double, N>& grid) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < N; ++i)
    if (std::abs(hz - grid[i]) < std::abs(hz - grid[best])) best = i;
  if (std::abs(hz - grid[best]) > kTolerance * grid[best])
    throw Error(Errc::out_of_tolerance, std::to_string(hz) + " Hz is more than 5% from " +
                                            std::to_string(grid[best]) + " Hz");
  return best;
}

struct TonePair {
  SpectralPeak low;
  SpectralPeak high;
};

namespace detail {

inline SpectralPeak band_peak(const MagnitudeSpectrum& spec, double lo_hz, double hi_hz, double floor,
                              const char* name) {
  const std::size_t lo = spec.bin_of(lo_hz), hi = spec.bin_of(hi_hz);
  auto mags = spec.magnitudes();
  std::vector<double> band(mags.begin() + static_cast<std::ptrdiff_t>(lo), mags.begin() + static_cast<std::ptrdiff_t>(hi) + 1);
  std::nth_element(band.begin(), band.begin() + static_cast<std::ptrdiff_t>(band.size() / 2), band.end());
  const double median = band[band.size() / 2];
  const auto maxima = spec.local_maxima(lo, hi);
  if (maxima.empty() || mags[maxima.front()] < std::max(kDetectionRatio * median, floor))
    throw Error(Errc::no_peak, std::string("no tone in ") + name + " band");
  return spec.refine(maxima.front());
}

}  // namespace detail

/// Strongest peak in each tone group, before classification.
inline TonePair detect_tones(const SampleBuffer& buf) {
  if (buf.size() < kMinPeakSearchSamples)
    throw Error(Errc::buffer_too_short, "need at least 256 samples, got " + std::to_string(buf.size()));
  MagnitudeSpectrum spec(buf.samples, buf.sample_rate);
  auto mags = spec.magnitudes();
  const double strongest = *std::max_element(mags.begin() + static_cast<std::ptrdiff_t>(spec.bin_of(kLowSearchMin)),
                                             mags.begin() + static_cast<std::ptrdiff_t>(spec.bin_of(kHighSearchMax)) + 1);
  const double floor = kTwistFloor * strongest;
  return {detail::band_peak(spec, kLowSearchMin, kBandSplit, floor, "low"),
          detail::band_peak(spec, kBandSplit, kHighSearchMax, floor, "high")};
}

inline ToneSymbol classify_tones(double low_hz, double high_hz, const DtmfTable& table = DtmfTable::standard()) {
  const auto li = classify_frequency(low_hz, kLowFreqs);
  const auto hi = classify_frequency(high_hz, kHighFreqs);
  auto sym = table.find(li, hi);
  if (!sym) throw Error(Errc::out_of_tolerance, "tone pair has no character assigned");
  return *sym;
}

inline char decode_symbol(const SampleBuffer& buf, const DtmfTable& table = DtmfTable::standard()) {
  const auto tones = detect_tones(buf);
  return classify_tones(tones.low.frequency, tones.high.frequency, table).character;
}

struct DecodedStream {
  /// One entry per detected symbol; nullopt marks an erasure.
  std::vector<std::optional<char>> symbols;

  std::string text(std::string_view erasure_marker = "\xEF\xBF\xBD") const {
    std::string s;
    for (const auto& c : symbols) {
      if (c) s += *c;
      else s += erasure_marker;
    }
    return s;
  }

  std::vector<std::size_t> erasures() const {
    std::vector<std::size_t> pos;
    for (std::size_t i = 0; i < symbols.size(); ++i)
      if (!symbols[i]) pos.push_back(i);
    return pos;
  }
};

struct Segment {
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Active regions between silence gaps, found on 8 ms energy blocks.
inline std::vector<Segment> segment_on_silence(const SampleBuffer& buf) {
  const std::size_t block = std::max<std::size_t>(1, samples_for(0.008, buf.sample_rate));
  const std::size_t nblocks = (buf.size() + block - 1) / block;
  std::vector<double> rms(nblocks);
  double top = 0.0;
  for (std::size_t b = 0; b < nblocks; ++b) {
    const std::size_t lo = b * block, hi = std::min(buf.size(), lo + block);
    rms[b] = std::sqrt(mean_power(std::span(buf.samples).subspan(lo, hi - lo)));
    top = std::max(top, rms[b]);
  }
  const double threshold = std::max(0.1 * top, 1e-4);
  const std::size_t min_blocks = (kMinPeakSearchSamples + block - 1) / block;

  std::vector<Segment> segs;
  std::size_t b = 0;
  while (b < nblocks) {
    if (rms[b] < threshold) {
      ++b;
      continue;
    }
    std::size_t e = b;
    while (e < nblocks && rms[e] >= threshold) ++e;
    if (e - b >= min_blocks) segs.push_back({b * block, std::min(buf.size(), e * block)});
    b = e;
  }
  return segs;
}

inline DecodedStream decode_stream(const SampleBuffer& buf, const DtmfTable& table = DtmfTable::standard()) {
  DecodedStream out;
  if (buf.empty()) return out;
  for (const auto& seg : segment_on_silence(buf)) {
    SampleBuffer piece;
    piece.sample_rate = buf.sample_rate;
    piece.samples.assign(buf.samples.begin() + static_cast<std::ptrdiff_t>(seg.begin),
                         buf.samples.begin() + static_cast<std::ptrdiff_t>(seg.end));
    try {
      out.symbols.emplace_back(decode_symbol(piece, table));
    } catch (const Error& e) {
      if (e.code() != Errc::no_peak && e.code() != Errc::out_of_tolerance) throw;
      out.symbols.emplace_back(std::nullopt);
    }
  }
  return out;
}

}  // namespace sslink::dtmf
