#pragma once

// File-level codec operations and evaluation reports.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "sacodec/bitstream.hpp"
#include "sacodec/corpus.hpp"
#include "sacodec/losses.hpp"
#include "sacodec/model.hpp"
#include "sacodec/resample.hpp"

namespace sacodec {

inline TokenSequence tokenize(const Codec& codec, const Waveform& wave) {
  const auto& cfg = codec.config();
  const QuantizationResult q = codec.quantize(codec.encode(wave));
  TokenSequence seq;
  auto& h = seq.header;
  h.sample_rate = cfg.sample_rate();
  if (cfg.sample_rate() % cfg.total_stride() != 0)
    throw Error("frame rate " + std::to_string(cfg.frame_rate()) + " Hz is not an integer");
  h.frame_rate = static_cast<std::uint32_t>(cfg.sample_rate() / cfg.total_stride());
  h.k1 = static_cast<std::uint16_t>(cfg.quantizer.stream_k1());
  h.k2 = static_cast<std::uint16_t>(cfg.quantizer.stream_k2());
  h.num_frames = static_cast<std::uint32_t>(q.semantic_indices.size());
  h.original_length = wave.samples.size();
  h.model_checksum = codec.checksum();
  seq.semantic = q.semantic_indices;
  seq.residual = q.residual_indices;
  return seq;
}

struct DecodeOptions {
  bool override_checksum = false;
};

// Tokens back to audio, trimmed to the original length. Sets `warning` when a
// checksum mismatch was overridden.
inline Waveform detokenize(const Codec& codec, const TokenSequence& seq, DecodeOptions opts = {},
                           std::string* warning = nullptr) {
  validate_tokens(seq);
  const auto& cfg = codec.config();
  const std::uint64_t sum = codec.checksum();
  if (seq.header.model_checksum != sum) {
    const std::string msg = "token model checksum " + hex64(seq.header.model_checksum) +
                            " does not match checkpoint " + hex64(sum);
    if (!opts.override_checksum) throw ChecksumError(msg);
    if (warning) *warning = msg;
  }
  if (seq.header.sample_rate != cfg.sample_rate() || seq.header.k1 != cfg.quantizer.stream_k1() ||
      seq.header.k2 != cfg.quantizer.stream_k2()) {
    throw ConfigMismatch("token header (rate " + std::to_string(seq.header.sample_rate) + ", K1 " +
                         std::to_string(seq.header.k1) + ", K2 " + std::to_string(seq.header.k2) +
                         ") does not fit the loaded model");
  }
  if (seq.header.num_frames == 0) return {{}, cfg.sample_rate()};
  Waveform y = codec.decode(codec.quantizer().dequantize(seq.semantic, seq.residual));
  y.samples.resize(seq.header.original_length, 0.0);
  return y;
}

struct EncodeSummary {
  std::size_t num_frames = 0;
  std::uint64_t payload_bits = 0;
  std::uint64_t file_bytes = 0;
  double duration_seconds = 0.0;
  double kbps = 0.0;  // payload bits over the original duration
  double nominal_kbps = 0.0;
};

inline EncodeSummary summarize(const TokenSequence& seq, std::uint64_t file_bytes) {
  EncodeSummary s;
  s.num_frames = seq.frames();
  s.payload_bits = seq.header.payload_bits();
  s.file_bytes = file_bytes;
  s.duration_seconds = static_cast<double>(seq.header.original_length) / seq.header.sample_rate;
  s.kbps = s.duration_seconds > 0 ? static_cast<double>(s.payload_bits) / s.duration_seconds / 1000.0 : 0.0;
  s.nominal_kbps = nominal_bitrate(seq.header.frame_rate, seq.header.k1, seq.header.k2).nominal_kbps;
  return s;
}

inline Waveform conform_rate(Waveform w, std::uint32_t rate, bool allow_resample, const std::string& source) {
  if (w.sample_rate == rate) return w;
  if (!allow_resample)
    throw Error(source + ": sample rate " + std::to_string(w.sample_rate) + " does not match model rate " +
                std::to_string(rate) + " (use --resample)");
  return resample(w, rate);
}

inline EncodeSummary encode_file(const std::string& audio_path, const Codec& codec, const std::string& out_path,
                                 bool allow_resample = false) {
  Waveform w = conform_rate(read_wav(audio_path), codec.config().sample_rate(), allow_resample, audio_path);
  if (w.samples.empty()) throw Error(audio_path + ": no samples");
  const TokenSequence seq = tokenize(codec, w);
  const std::string bytes = pack_tokens(seq);
  detail::write_file_atomic(out_path, bytes);
  return summarize(seq, bytes.size());
}

inline TokenSequence read_tokens(const std::string& path) {
  const auto raw = detail::read_file_bytes(path);
  try {
    return unpack_tokens(std::string(raw.begin(), raw.end()));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what(), e.offset());
  }
}

inline Waveform decode_file(const std::string& sact_path, const Codec& codec, const std::string& out_path,
                            DecodeOptions opts = {}, std::string* warning = nullptr) {
  Waveform y = detokenize(codec, read_tokens(sact_path), opts, warning);
  write_wav(out_path, y);
  return y;
}

// ---------------------------------------------------------------------------
// Reports

struct UtilizationReport {
  Utilization semantic, residual;
  std::size_t frames = 0;
};

inline UtilizationReport utilization_report(const Corpus& corpus, const Codec& codec) {
  if (corpus.clips.empty()) throw Error("utilization_report: empty corpus");
  std::vector<int> sem, res;
  for (const auto& clip : corpus.clips) {
    const auto q = codec.quantize(codec.encode(clip));
    sem.insert(sem.end(), q.semantic_indices.begin(), q.semantic_indices.end());
    res.insert(res.end(), q.residual_indices.begin(), q.residual_indices.end());
  }
  const auto& qc = codec.config().quantizer;
  return {utilization_stats(sem, qc.stream_k1()), utilization_stats(res, qc.stream_k2()), sem.size()};
}

// Mean multi-scale mel distance between each clip and its reconstruction.
inline double reconstruction_mel_distance(const Corpus& corpus, const Codec& codec) {
  if (corpus.clips.empty()) throw Error("reconstruction_mel_distance: empty corpus");
  const MelLoss mel(codec.config().sample_rate());
  double total = 0.0;
  for (const auto& clip : corpus.clips) total += mel(clip, codec.reconstruct(clip));
  return total / static_cast<double>(corpus.size());
}

enum class ProbeStream { semantic, both };

struct ProbeOptions {
  ProbeStream stream = ProbeStream::semantic;
  double train_fraction = 0.5;
  double ridge = 1e-3;
  bool shuffle_labels = false;  // null control
  std::uint64_t seed = 0;
};

struct ProbeResult {
  double accuracy = 0.0;
  double chance = 0.0;
  double sigma = 0.0;  // binomial standard deviation of accuracy at chance
  std::size_t train_clips = 0;
  std::size_t test_clips = 0;
  std::size_t classes = 0;
  std::string stream;
};

// Ridge regression onto one-hot labels; rows of x are feature vectors.
inline std::vector<int> ridge_classify(const Eigen::MatrixXd& x_train, const std::vector<int>& y_train,
                                       const Eigen::MatrixXd& x_test, int classes, double ridge) {
  const Eigen::Index n = x_train.rows(), d = x_train.cols();
  Eigen::RowVectorXd mean = x_train.colwise().mean();
  Eigen::MatrixXd xc = x_train.rowwise() - mean;
  Eigen::MatrixXd y = Eigen::MatrixXd::Constant(n, classes, 0.0);
  for (Eigen::Index i = 0; i < n; ++i) y(i, y_train[static_cast<std::size_t>(i)]) = 1.0;
  Eigen::RowVectorXd ymean = y.colwise().mean();
  Eigen::MatrixXd yc = y.rowwise() - ymean;
  Eigen::MatrixXd gram = xc.transpose() * xc + ridge * Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd w = gram.ldlt().solve(xc.transpose() * yc);
  Eigen::MatrixXd scores = ((x_test.rowwise() - mean) * w).rowwise() + ymean;
  std::vector<int> out(static_cast<std::size_t>(x_test.rows()));
  for (Eigen::Index i = 0; i < x_test.rows(); ++i) {
    Eigen::Index best = 0;
    scores.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

// Linear probe on per-clip token histograms. The semantic stream is the
// default; a model without Q1 has only its residual stream to offer.
inline ProbeResult semantic_probe(const Corpus& corpus, const Codec& codec, ProbeOptions opts = {}) {
  if (!corpus.labeled()) throw Error("semantic_probe: corpus has no labels");
  std::vector<int> labels = corpus.labels;
  const int classes = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<int> present(static_cast<std::size_t>(classes), 0);
  for (int l : labels) present[static_cast<std::size_t>(l)] = 1;
  if (std::accumulate(present.begin(), present.end(), 0) < 2) throw Error("semantic_probe: fewer than 2 classes");
  if (opts.shuffle_labels) {
    Rng rng(opts.seed, 0x73687566ULL);
    for (std::size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[rng.below(i)]);
  }

  const auto& qc = codec.config().quantizer;
  const bool semantic_available = !qc.no_q1;
  const bool use_sem = semantic_available;
  const bool use_res = opts.stream == ProbeStream::both || !semantic_available;
  const std::size_t k1 = use_sem ? qc.k1 : 0, k2 = use_res ? qc.k2 : 0;
  Eigen::MatrixXd feats = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(corpus.size()),
                                                static_cast<Eigen::Index>(k1 + k2));
  for (std::size_t c = 0; c < corpus.size(); ++c) {
    const auto q = codec.quantize(codec.encode(corpus.clips[c]));
    const double inv = 1.0 / static_cast<double>(q.semantic_indices.size());
    const auto row = static_cast<Eigen::Index>(c);
    if (use_sem)
      for (int i : q.semantic_indices) feats(row, i) += inv;
    if (use_res)
      for (int i : q.residual_indices) feats(row, static_cast<Eigen::Index>(k1) + i) += inv;
  }

  // Stratified split: the first train_fraction of each class trains.
  std::vector<std::size_t> seen(static_cast<std::size_t>(classes), 0), total(static_cast<std::size_t>(classes), 0);
  for (int l : corpus.labels) ++total[static_cast<std::size_t>(l)];
  std::vector<Eigen::Index> train_rows, test_rows;
  for (std::size_t c = 0; c < corpus.size(); ++c) {
    const auto l = static_cast<std::size_t>(corpus.labels[c]);
    const auto cut = static_cast<std::size_t>(std::llround(opts.train_fraction * static_cast<double>(total[l])));
    (seen[l]++ < cut ? train_rows : test_rows).push_back(static_cast<Eigen::Index>(c));
  }
  if (train_rows.empty() || test_rows.empty()) throw Error("semantic_probe: split leaves an empty side");
  Eigen::MatrixXd xtr(static_cast<Eigen::Index>(train_rows.size()), feats.cols());
  Eigen::MatrixXd xte(static_cast<Eigen::Index>(test_rows.size()), feats.cols());
  std::vector<int> ytr, yte;
  for (std::size_t i = 0; i < train_rows.size(); ++i) {
    xtr.row(static_cast<Eigen::Index>(i)) = feats.row(train_rows[i]);
    ytr.push_back(labels[static_cast<std::size_t>(train_rows[i])]);
  }
  for (std::size_t i = 0; i < test_rows.size(); ++i) {
    xte.row(static_cast<Eigen::Index>(i)) = feats.row(test_rows[i]);
    yte.push_back(labels[static_cast<std::size_t>(test_rows[i])]);
  }
  const auto pred = ridge_classify(xtr, ytr, xte, classes, opts.ridge);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == yte[i];

  ProbeResult r;
  r.classes = static_cast<std::size_t>(classes);
  r.train_clips = train_rows.size();
  r.test_clips = test_rows.size();
  r.accuracy = static_cast<double>(correct) / static_cast<double>(test_rows.size());
  r.chance = 1.0 / classes;
  r.sigma = std::sqrt(r.chance * (1.0 - r.chance) / static_cast<double>(test_rows.size()));
  r.stream = !semantic_available ? "residual" : (use_res ? "both" : "semantic");
  return r;
}

}  // namespace sacodec
