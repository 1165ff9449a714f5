#pragma once

// Frozen semantic codebook files: raw little-endian float32, row-major, with
// a sidecar text descriptor "<path>.txt":
//
//   rows = <K1>
//   cols = <D_s>
//   dtype = float32-le
//   checksum = fnv1a64:<16 hex digits over the raw file bytes>

#include <bit>
#include <cstring>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "sacodec/config.hpp"
#include "sacodec/corpus.hpp"
#include "sacodec/hash.hpp"
#include "sacodec/random.hpp"
#include "sacodec/wav.hpp"

namespace sacodec {

inline Tensor round_to_float32(Tensor t) {
  for (auto& v : t.storage()) v = static_cast<double>(static_cast<float>(v));
  return t;
}

inline std::string serialize_codebook(const Tensor& c) {
  if (c.rank() != 2) throw Error("codebook must be a matrix");
  std::string out;
  out.reserve(c.size() * 4);
  for (double v : c.values()) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(bits >> (8 * i)));
  }
  return out;
}

inline std::string codebook_descriptor(const Tensor& c, const std::string& raw) {
  std::ostringstream o;
  o << "rows = " << c.dim(0) << "\ncols = " << c.dim(1) << "\ndtype = float32-le\nchecksum = fnv1a64:"
    << hex64(fnv1a64(raw)) << "\n";
  return o.str();
}

inline void write_codebook(const std::string& path, const Tensor& c) {
  const std::string raw = serialize_codebook(c);
  detail::write_file_atomic(path, raw);
  detail::write_file_atomic(path + ".txt", codebook_descriptor(c, raw));
}

inline Tensor parse_codebook(const std::vector<unsigned char>& raw, const KeyValues& desc, const std::string& source) {
  auto field = [&](const char* key) {
    auto it = desc.find(key);
    if (it == desc.end()) throw Error(source + ".txt: missing '" + key + "'");
    return it->second;
  };
  std::size_t rows = 0, cols = 0;
  try {
    rows = std::stoull(field("rows"));
    cols = std::stoull(field("cols"));
  } catch (const std::invalid_argument&) {
    throw Error(source + ".txt: rows/cols must be integers");
  }
  if (desc.count("dtype") && desc.at("dtype") != "float32-le")
    throw Error(source + ".txt: unsupported dtype " + desc.at("dtype"));
  if (rows == 0 || cols == 0) throw Error(source + ".txt: empty codebook");
  const std::size_t expected = rows * cols * 4;
  if (raw.size() != expected)
    throw FormatError(source + ": expected " + std::to_string(expected) + " bytes, found " + std::to_string(raw.size()),
                      std::min(raw.size(), expected));
  const std::string sum = field("checksum");
  const std::string want = "fnv1a64:" + hex64(fnv1a64(raw.data(), raw.size()));
  if (sum != want) throw ChecksumError(source + ": content checksum " + want + " does not match descriptor " + sum);
  Tensor c({rows, cols});
  for (std::size_t i = 0; i < rows * cols; ++i) {
    const std::uint32_t bits = detail::read_u32(&raw[4 * i]);
    const float f = std::bit_cast<float>(bits);
    if (!std::isfinite(f)) throw FormatError(source + ": non-finite entry", 4 * i);
    c[i] = static_cast<double>(f);
  }
  return c;
}

inline Tensor read_codebook(const std::string& path) {
  return parse_codebook(detail::read_file_bytes(path), read_key_values(path + ".txt"), path);
}

// k-means++ seeding followed by Lloyd iterations. data[N x D] -> [K x D].
inline Tensor kmeans(const Tensor& data, std::size_t k, Rng& rng, std::size_t iterations = 25) {
  const std::size_t n = data.dim(0), d = data.dim(1);
  if (n < k) throw Error("kmeans: fewer points than clusters");
  auto dist2 = [&](const double* a, const double* b) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return s;
  };
  Tensor centers({k, d});
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.below(n);
  for (std::size_t c = 0; c < k; ++c) {
    std::copy_n(data.data() + pick * d, d, centers.data() + c * d);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      best[i] = std::min(best[i], dist2(data.data() + i * d, centers.data() + c * d));
      total += best[i];
    }
    if (c + 1 == k) break;
    if (!(total > 0.0)) throw Error("kmeans: fewer distinct points than clusters");
    double target = rng.uniform() * total;
    pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      target -= best[i];
      if (target < 0.0 && best[i] > 0.0) {
        pick = i;
        break;
      }
    }
  }
  std::vector<std::size_t> assign(n);
  for (std::size_t it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double v = dist2(data.data() + i * d, centers.data() + c * d);
        if (v < bd) bd = v, assign[i] = c;
      }
    }
    Tensor sums({k, d});
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      for (std::size_t j = 0; j < d; ++j) sums.at(assign[i], j) += data.at(i, j);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (!counts[c]) continue;  // empty cluster keeps its previous centre
      for (std::size_t j = 0; j < d; ++j) centers.at(c, j) = sums.at(c, j) / static_cast<double>(counts[c]);
    }
  }
  return centers;
}

// Stand-in for an externally clustered codebook at the tiny profile: k-means
// over log-mel frames of a held-apart synthetic vowel corpus.
inline Tensor tiny_semantic_codebook(std::size_t k, std::size_t dim, std::uint32_t sample_rate, std::size_t hop) {
  const Corpus corpus = synthetic_corpus(40, 0x5eed0c0deULL, sample_rate);
  SpectralConfig cfg{4 * hop, hop, dim, static_cast<double>(sample_rate), 0.0, sample_rate / 2.0};
  std::vector<double> rows;
  std::size_t n = 0;
  for (const auto& clip : corpus.clips) {
    Tensor m = log_mel(clip, cfg);
    rows.insert(rows.end(), m.values().begin(), m.values().end());
    n += m.dim(0);
  }
  Tensor feats({n, dim}, std::move(rows));
  Rng rng(0x6b6d65616e73ULL);
  Tensor c = kmeans(feats, k, rng);
  // one global scale: mean row norm 6
  double norm = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) s += c.at(i, j) * c.at(i, j);
    norm += std::sqrt(s);
  }
  norm /= static_cast<double>(k);
  norm /= 6.0;
  for (auto& v : c.storage()) v /= norm;
  return round_to_float32(std::move(c));
}

// Deterministic Gaussian placeholder used when the paper profile runs without
// an external codebook file.
inline Tensor placeholder_semantic_codebook(std::size_t k, std::size_t dim) {
  Rng rng(0x706c616365ULL);
  Tensor c({k, dim});
  for (auto& v : c.storage()) v = rng.normal();
  return round_to_float32(std::move(c));
}

}  // namespace sacodec
