#pragma once

// 16-bit PCM WAV reading and writing. Multichannel input is downmixed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sacodec/error.hpp"
#include "sacodec/signal.hpp"

namespace sacodec {

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}
inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Writes via a temporary sibling and renames so readers never see a partial file.
inline void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

}  // namespace detail

inline Waveform parse_wav(const std::vector<unsigned char>& b, const std::string& source = "<wav>") {
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0)
    throw FormatError(source + ": not a RIFF/WAVE file", 0);
  std::size_t pos = 12;
  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (pos + 8 <= b.size()) {
    const std::uint32_t size = detail::read_u32(&b[pos + 4]);
    const std::size_t body = pos + 8;
    if (body + size > b.size()) throw FormatError(source + ": truncated chunk", pos);
    if (std::memcmp(&b[pos], "fmt ", 4) == 0) {
      if (size < 16) throw FormatError(source + ": short fmt chunk", pos);
      format = detail::read_u16(&b[body]);
      channels = detail::read_u16(&b[body + 2]);
      rate = detail::read_u32(&b[body + 4]);
      bits = detail::read_u16(&b[body + 14]);
      have_fmt = true;
    } else if (std::memcmp(&b[pos], "data", 4) == 0) {
      if (!have_fmt) throw FormatError(source + ": data chunk before fmt chunk", pos);
      if ((format != 1 && format != 0xFFFE) || bits != 16 || channels == 0)
        throw FormatError(source + ": only 16-bit PCM is supported", pos);
      const std::size_t frames = size / (2u * channels);
      Waveform w;
      w.sample_rate = rate;
      w.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
          const auto v = static_cast<std::int16_t>(detail::read_u16(&b[body + 2 * (i * channels + c)]));
          acc += static_cast<double>(v) / 32768.0;
        }
        w.samples[i] = acc / channels;
      }
      return w;
    }
    pos = body + size + (size & 1u);
  }
  throw FormatError(source + ": no data chunk", pos);
}

inline Waveform read_wav(const std::string& path) { return parse_wav(detail::read_file_bytes(path), path); }

inline std::string serialize_wav(const Waveform& w) {
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    if (!std::isfinite(w.samples[i])) throw NumericError("wav: non-finite sample at index " + std::to_string(i));
  std::string out;
  out.reserve(44 + 2 * n);
  out += "RIFF";
  detail::put_u32(out, 36 + 2 * n);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);
  detail::put_u16(out, 1);
  detail::put_u32(out, w.sample_rate);
  detail::put_u32(out, w.sample_rate * 2);
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  out += "data";
  detail::put_u32(out, 2 * n);
  for (double s : w.samples) {
    const double c = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
    detail::put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(c)));
  }
  return out;
}

inline void write_wav(const std::string& path, const Waveform& w) { detail::write_file_atomic(path, serialize_wav(w)); }

}  // namespace sacodec
