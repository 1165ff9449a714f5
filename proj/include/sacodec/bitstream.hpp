#pragma once

// .sact token files.
//
//   offset  size  field
//   0       4     magic "SACT"
//   4       1     version (1)
//   5       1     reserved (0)
//   6       4     sample_rate
//   10      4     frame_rate numerator (Hz, denominator 1)
//   14      2     K1
//   16      2     K2
//   18      4     num_frames
//   22      8     original_length (samples)
//   30      8     model checksum
//   38      ...   payload
//
// Integers are little-endian. The payload holds, per frame, the semantic
// index then the residual index in ceil(log2 K) bits each, packed MSB-first;
// the last byte is zero-padded.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sacodec/error.hpp"
#include "sacodec/quantizer.hpp"
#include "sacodec/wav.hpp"

namespace sacodec {

inline constexpr std::size_t kSactHeaderSize = 38;
inline constexpr std::uint8_t kSactVersion = 1;

// ceil(log2 k); a single-entry codebook needs no bits.
inline unsigned index_bits(std::size_t k) {
  if (k == 0) throw Error("index_bits: empty codebook");
  unsigned b = 0;
  while ((std::size_t{1} << b) < k) ++b;
  return b;
}

struct SactHeader {
  std::uint32_t sample_rate = 0;
  std::uint32_t frame_rate = 0;
  std::uint16_t k1 = 1;
  std::uint16_t k2 = 1;
  std::uint32_t num_frames = 0;
  std::uint64_t original_length = 0;
  std::uint64_t model_checksum = 0;

  unsigned bits_per_frame() const { return index_bits(k1) + index_bits(k2); }
  std::uint64_t payload_bits() const { return static_cast<std::uint64_t>(num_frames) * bits_per_frame(); }
  std::uint64_t payload_bytes() const { return (payload_bits() + 7) / 8; }

  bool operator==(const SactHeader&) const = default;
};

struct TokenSequence {
  SactHeader header;
  std::vector<int> semantic;
  std::vector<int> residual;

  std::size_t frames() const noexcept { return semantic.size(); }
  bool operator==(const TokenSequence&) const = default;
};

namespace detail {

class BitWriter {
 public:
  void put(std::uint32_t value, unsigned bits) {
    for (unsigned i = bits; i-- > 0;) {
      if (fill_ == 0) bytes_.push_back(0);
      if ((value >> i) & 1u) bytes_.back() |= static_cast<char>(0x80u >> fill_);
      fill_ = (fill_ + 1) % 8;
    }
  }
  std::string& bytes() { return bytes_; }

 private:
  std::string bytes_;
  unsigned fill_ = 0;
};

}  // namespace detail

inline void validate_tokens(const TokenSequence& seq) {
  const auto& h = seq.header;
  if (h.k1 == 0 || h.k2 == 0) throw Error("token header: codebook sizes must be positive");
  if (seq.semantic.size() != seq.residual.size()) throw Error("token streams have different lengths");
  if (seq.semantic.size() != h.num_frames)
    throw Error("token header lists " + std::to_string(h.num_frames) + " frames, streams hold " +
                std::to_string(seq.semantic.size()));
  for (std::size_t t = 0; t < seq.semantic.size(); ++t) {
    if (seq.semantic[t] < 0 || seq.semantic[t] >= h.k1)
      throw Error("semantic index " + std::to_string(seq.semantic[t]) + " at frame " + std::to_string(t) +
                  " outside [0, " + std::to_string(h.k1) + ")");
    if (seq.residual[t] < 0 || seq.residual[t] >= h.k2)
      throw Error("residual index " + std::to_string(seq.residual[t]) + " at frame " + std::to_string(t) +
                  " outside [0, " + std::to_string(h.k2) + ")");
  }
}

inline std::string pack_tokens(const TokenSequence& seq) {
  validate_tokens(seq);
  const auto& h = seq.header;
  std::string out = "SACT";
  out.push_back(static_cast<char>(kSactVersion));
  out.push_back(0);
  detail::put_u32(out, h.sample_rate);
  detail::put_u32(out, h.frame_rate);
  detail::put_u16(out, h.k1);
  detail::put_u16(out, h.k2);
  detail::put_u32(out, h.num_frames);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(h.original_length >> (8 * i)));
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(h.model_checksum >> (8 * i)));
  const unsigned b1 = index_bits(h.k1), b2 = index_bits(h.k2);
  detail::BitWriter bw;
  for (std::size_t t = 0; t < seq.semantic.size(); ++t) {
    bw.put(static_cast<std::uint32_t>(seq.semantic[t]), b1);
    bw.put(static_cast<std::uint32_t>(seq.residual[t]), b2);
  }
  out += bw.bytes();
  return out;
}

inline TokenSequence unpack_tokens(const std::string& bytes) {
  const auto* b = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  if (n < 4 || bytes.compare(0, 4, "SACT") != 0) throw FormatError("bad magic, not a .sact file", 0);
  if (n < kSactHeaderSize) throw FormatError("truncated header", n);
  if (b[4] != kSactVersion) throw FormatError("unsupported .sact version " + std::to_string(b[4]), 4);
  if (b[5] != 0) throw FormatError("reserved byte is not zero", 5);
  TokenSequence seq;
  auto& h = seq.header;
  h.sample_rate = detail::read_u32(b + 6);
  h.frame_rate = detail::read_u32(b + 10);
  h.k1 = detail::read_u16(b + 14);
  h.k2 = detail::read_u16(b + 16);
  h.num_frames = detail::read_u32(b + 18);
  for (int i = 0; i < 8; ++i) h.original_length |= static_cast<std::uint64_t>(b[22 + i]) << (8 * i);
  for (int i = 0; i < 8; ++i) h.model_checksum |= static_cast<std::uint64_t>(b[30 + i]) << (8 * i);
  if (h.k1 == 0) throw FormatError("K1 is zero", 14);
  if (h.k2 == 0) throw FormatError("K2 is zero", 16);
  const std::uint64_t need = kSactHeaderSize + h.payload_bytes();
  if (n < need) throw FormatError("truncated payload: need " + std::to_string(need) + " bytes", n);
  if (n > need) throw FormatError("trailing bytes after payload", need);

  std::uint64_t bitpos = 0;
  auto take = [&](unsigned bits, std::uint16_t k, const char* stream) {
    const std::uint64_t start = bitpos;
    std::uint32_t v = 0;
    for (unsigned i = 0; i < bits; ++i, ++bitpos) {
      const unsigned char byte = b[kSactHeaderSize + bitpos / 8];
      v = (v << 1) | ((byte >> (7 - bitpos % 8)) & 1u);
    }
    if (v >= k)
      throw FormatError(std::string(stream) + " index " + std::to_string(v) + " out of range",
                        kSactHeaderSize + start / 8);
    return static_cast<int>(v);
  };
  const unsigned b1 = index_bits(h.k1), b2 = index_bits(h.k2);
  seq.semantic.resize(h.num_frames);
  seq.residual.resize(h.num_frames);
  for (std::size_t t = 0; t < h.num_frames; ++t) {
    seq.semantic[t] = take(b1, h.k1, "semantic");
    seq.residual[t] = take(b2, h.k2, "residual");
  }
  if (bitpos % 8 != 0) {
    const unsigned char last = b[n - 1];
    if (last & (0xffu >> (bitpos % 8))) throw FormatError("nonzero padding bits", n - 1);
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Bitrate accounting

struct BitrateReport {
  double frame_rate = 0.0;
  unsigned semantic_bits = 0;
  unsigned residual_bits = 0;
  double nominal_kbps = 0.0;
  double semantic_kbps = 0.0;
  double residual_kbps = 0.0;
  double semantic_entropy_kbps = 0.0;  // empirical, from index frequencies
  double residual_entropy_kbps = 0.0;
};

inline double empirical_entropy_bits(const std::vector<int>& indices) {
  if (indices.empty()) return 0.0;
  std::map<int, std::size_t> counts;
  for (int i : indices) ++counts[i];
  double h = 0.0;
  const double n = static_cast<double>(indices.size());
  for (const auto& [idx, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return h + 0.0;  // a single symbol gives -0.0
}

inline BitrateReport nominal_bitrate(double frame_rate, std::size_t k1, std::size_t k2) {
  BitrateReport r;
  r.frame_rate = frame_rate;
  r.semantic_bits = index_bits(k1);
  r.residual_bits = index_bits(k2);
  r.semantic_kbps = frame_rate * r.semantic_bits / 1000.0;
  r.residual_kbps = frame_rate * r.residual_bits / 1000.0;
  r.nominal_kbps = frame_rate * (r.semantic_bits + r.residual_bits) / 1000.0;
  return r;
}

inline BitrateReport bitrate_report(const TokenSequence& seq) {
  validate_tokens(seq);
  BitrateReport r = nominal_bitrate(seq.header.frame_rate, seq.header.k1, seq.header.k2);
  r.semantic_entropy_kbps = seq.header.frame_rate * empirical_entropy_bits(seq.semantic) / 1000.0;
  r.residual_entropy_kbps = seq.header.frame_rate * empirical_entropy_bits(seq.residual) / 1000.0;
  return r;
}

}  // namespace sacodec
