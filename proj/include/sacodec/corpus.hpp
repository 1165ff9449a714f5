#pragma once

// Training corpora: a deterministic synthetic vowel set with class labels,
// or a directory of WAV files.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "sacodec/random.hpp"
#include "sacodec/resample.hpp"
#include "sacodec/wav.hpp"

namespace sacodec {

struct Corpus {
  std::vector<Waveform> clips;
  std::vector<int> labels;  // empty when unlabeled
  std::uint32_t sample_rate = 0;

  std::size_t size() const noexcept { return clips.size(); }
  bool labeled() const noexcept { return labels.size() == clips.size() && !clips.empty(); }
};

inline constexpr int kVowelClasses = 4;

// Formant frequencies (Hz) for /a/, /i/, /u/, /ae/.
inline constexpr std::array<std::array<double, 3>, kVowelClasses> kVowelFormants{{
    {730.0, 1090.0, 2440.0},
    {270.0, 2290.0, 3010.0},
    {300.0, 870.0, 2240.0},
    {660.0, 1720.0, 2410.0},
}};

// Band-limited harmonic source shaped by three resonances. Pitch, level,
// formant placement, vibrato and background noise vary per clip.
inline Waveform synthetic_vowel(int label, Rng& rng, std::uint32_t sample_rate, double seconds = 1.0) {
  if (label < 0 || label >= kVowelClasses) throw Error("synthetic_vowel: label out of range");
  const auto n = static_cast<std::size_t>(std::llround(seconds * sample_rate));
  const double sr = sample_rate;
  const double f0 = rng.uniform(90.0, 220.0);
  const double gain = rng.uniform(0.1, 0.4);
  const double vib_rate = rng.uniform(3.0, 7.0), vib_depth = rng.uniform(0.0, 0.02);
  const double noise = gain * rng.uniform(0.005, 0.03);
  std::array<double, 3> formants{};
  for (std::size_t i = 0; i < 3; ++i) formants[i] = kVowelFormants[label][i] * rng.uniform(0.95, 1.05);
  const std::array<double, 3> bandwidths{80.0, 100.0, 140.0};

  auto envelope = [&](double f) {
    double a = 1.0;
    for (std::size_t i = 0; i < 3; ++i) {
      const std::complex<double> den(1.0 - (f / formants[i]) * (f / formants[i]), f * bandwidths[i] / (formants[i] * formants[i]));
      a *= 1.0 / std::abs(den);
    }
    return a;
  };

  const std::size_t harmonics = static_cast<std::size_t>(0.45 * sr / (f0 * (1.0 + vib_depth)));
  std::vector<double> amps(harmonics), phases(harmonics);
  for (std::size_t h = 0; h < harmonics; ++h) {
    amps[h] = envelope(f0 * static_cast<double>(h + 1)) / std::sqrt(static_cast<double>(h + 1));
    phases[h] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  std::vector<double> out(n);
  double base_phase = 0.0, peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    const double f = f0 * (1.0 + vib_depth * std::sin(2.0 * std::numbers::pi * vib_rate * t));
    base_phase += 2.0 * std::numbers::pi * f / sr;
    double s = 0.0;
    for (std::size_t h = 0; h < harmonics; ++h) s += amps[h] * std::sin(static_cast<double>(h + 1) * base_phase + phases[h]);
    out[i] = s;
    peak = std::max(peak, std::abs(s));
  }
  const double norm = peak > 0.0 ? gain / peak : 0.0;
  for (auto& v : out) v = v * norm + noise * rng.normal();
  return {std::move(out), sample_rate};
}

// Clip i has label i mod 4.
inline Corpus synthetic_corpus(std::size_t clips, std::uint64_t seed, std::uint32_t sample_rate, double seconds = 1.0) {
  Corpus c;
  c.sample_rate = sample_rate;
  Rng rng(seed, 0x636f72707573ULL);
  for (std::size_t i = 0; i < clips; ++i) {
    const int label = static_cast<int>(i % kVowelClasses);
    c.clips.push_back(synthetic_vowel(label, rng, sample_rate, seconds));
    c.labels.push_back(label);
  }
  return c;
}

inline Corpus load_wav_directory(const std::string& dir, std::uint32_t sample_rate, bool allow_resample) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error("corpus directory " + dir + " does not exist");
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  Corpus c;
  c.sample_rate = sample_rate;
  for (const auto& p : paths) {
    Waveform w = read_wav(p.string());
    if (w.sample_rate != sample_rate) {
      if (!allow_resample)
        throw Error(p.string() + ": sample rate " + std::to_string(w.sample_rate) + " differs from " +
                    std::to_string(sample_rate) + " (enable resampling)");
      w = resample(w, sample_rate);
    }
    if (!w.samples.empty()) c.clips.push_back(std::move(w));
  }
  if (c.clips.empty()) throw Error("corpus directory " + dir + " contains no WAV files");
  return c;
}

// Uniform clip, uniform offset; short clips are right zero-padded.
inline Waveform sample_crop(const Corpus& corpus, std::size_t crop, Rng& rng, std::size_t* clip_index = nullptr) {
  if (corpus.clips.empty()) throw Error("sample_crop: empty corpus");
  if (crop == 0) throw Error("sample_crop: zero crop length");
  const std::size_t i = rng.below(corpus.clips.size());
  if (clip_index) *clip_index = i;
  const Waveform& clip = corpus.clips[i];
  Waveform out{std::vector<double>(crop, 0.0), clip.sample_rate};
  std::size_t offset = 0;
  if (clip.size() > crop) offset = rng.below(clip.size() - crop + 1);
  const std::size_t take = std::min(crop, clip.size() - offset);
  std::copy_n(clip.samples.begin() + static_cast<long>(offset), take, out.samples.begin());
  return out;
}

}  // namespace sacodec
