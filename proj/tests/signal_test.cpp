#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "sacodec/signal.hpp"
#include "test_support.hpp"

namespace {

using namespace sacodec;

SpectralConfig config(std::size_t n, std::size_t hop, std::size_t mels = 0, double sr = 8000.0) {
  return SpectralConfig{n, hop, mels, sr, 0.0, sr / 2.0};
}

Waveform random_wave(std::size_t n, std::uint64_t seed, double sr = 8000.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  Waveform w{std::vector<double>(n), static_cast<std::uint32_t>(sr)};
  for (auto& v : w.samples) v = d(rng);
  return w;
}

double snr_db(const std::vector<double>& ref, const std::vector<double>& est) {
  double sig = 0.0, err = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    sig += ref[i] * ref[i];
    err += (ref[i] - est[i]) * (ref[i] - est[i]);
  }
  return 10.0 * std::log10(sig / std::max(err, 1e-300));
}

// Every analysis/synthesis configuration the codec uses.
std::vector<SpectralConfig> configured_windows() {
  std::vector<SpectralConfig> out;
  for (double sr : {8000.0, 24000.0}) {
    const std::size_t stride = sr == 8000.0 ? 80 : 320;
    out.push_back(config(4 * stride, stride, 0, sr));  // decoder head
    for (std::size_t w : {64, 128, 256, 512, 1024, 2048}) out.push_back(config(w, w / 4, 0, sr));
  }
  return out;
}

TEST(Stft, ZeroInputGivesZeroSpectrogram) {
  const auto cfg = config(64, 16);
  Waveform zero{std::vector<double>(4 * 16, 0.0), 8000};
  const auto spec = stft(zero, cfg);
  EXPECT_EQ(spec.frames, 4u);
  for (const auto& c : spec.data) EXPECT_EQ(std::abs(c), 0.0);
}

TEST(Stft, FrameCountAtCodecRate) {
  const auto cfg = config(1280, 320, 0, 24000.0);
  EXPECT_EQ(cfg.frames(24000), 75u);
  EXPECT_EQ(cfg.frames(24001), 76u);
  Waveform w{std::vector<double>(24000, 0.1), 24000};
  EXPECT_EQ(stft(w, cfg).frames, 75u);
}

TEST(Stft, BinCenteredCosineMatchesDirectDft) {
  const std::size_t n = 256, hop = 64, k0 = 12;
  const auto cfg = config(n, hop);
  Waveform w{std::vector<double>(4096), 8000};
  for (std::size_t i = 0; i < w.size(); ++i)
    w.samples[i] = std::cos(2.0 * std::numbers::pi * static_cast<double>(k0 * i) / static_cast<double>(n));
  const auto spec = stft(w, cfg);
  const auto window = hann_window(n);
  for (std::size_t f = 4; f + 4 < spec.frames; ++f) {
    // Direct DFT oracle on the interior frame (no padding involved there).
    double total = 0.0, mainlobe = 0.0, peak = 0.0;
    std::size_t peak_bin = 0;
    for (std::size_t k = 0; k < cfg.bins(); ++k) {
      std::complex<double> ref = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double x = w.samples[f * hop + j - n / 2] * window[j];
        ref += x * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * j) / static_cast<double>(n));
      }
      EXPECT_NEAR(std::abs(spec.at(f, k) - ref), 0.0, 1e-9);
      const double e = std::norm(spec.at(f, k));
      total += e;
      if (k + 1 >= k0 && k <= k0 + 1) mainlobe += e;
      if (e > peak) peak = e, peak_bin = k;
    }
    EXPECT_EQ(peak_bin, k0);
    EXPECT_GE(mainlobe / total, 0.99);
  }
}

TEST(Stft, RealSignalHasRealDcAndNyquist) {
  const auto cfg = config(128, 32);
  const auto spec = stft(random_wave(1000, 3), cfg);
  for (std::size_t f = 0; f < spec.frames; ++f) {
    EXPECT_EQ(spec.at(f, 0).imag(), 0.0);
    EXPECT_EQ(spec.at(f, cfg.bins() - 1).imag(), 0.0);
  }
}

TEST(Stft, IsLinear) {
  const auto cfg = config(256, 64);
  const auto x = random_wave(2000, 4), y = random_wave(2000, 5);
  const double a = 0.7, b = -1.9;
  Waveform mix{std::vector<double>(2000), 8000};
  for (std::size_t i = 0; i < 2000; ++i) mix.samples[i] = a * x.samples[i] + b * y.samples[i];
  const auto sx = stft(x, cfg), sy = stft(y, cfg), sm = stft(mix, cfg);
  double err = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < sm.data.size(); ++i) {
    err = std::max(err, std::abs(sm.data[i] - (a * sx.data[i] + b * sy.data[i])));
    norm = std::max(norm, std::abs(sm.data[i]));
  }
  EXPECT_LT(err / norm, 1e-10);
}

TEST(Stft, RejectsNonFiniteSamples) {
  auto w = random_wave(100, 6);
  w.samples[17] = std::nan("");
  EXPECT_THROW(stft(w, config(32, 8)), NumericError);
}

TEST(SpectralConfig, RejectsNonColaAndBadHop) {
  EXPECT_NO_THROW(config(64, 16).validate());
  EXPECT_NO_THROW(config(64, 32).validate());
  EXPECT_THROW(config(64, 24).validate(), Error);
  EXPECT_THROW(config(64, 128).validate(), Error);
  EXPECT_THROW(config(63, 7).validate(), Error);
  SpectralConfig bad_range = config(64, 16, 8);
  bad_range.fmax = 5000.0;
  EXPECT_THROW(bad_range.validate(), Error);
}

TEST(SpectralConfig, MelRowsArePositiveForEveryConfiguredScale) {
  for (double sr : {8000.0, 24000.0}) {
    for (std::size_t w : {64, 128, 256, 512, 1024, 2048}) {
      auto cfg = config(w, w / 4, std::clamp<std::size_t>(w / 8, 5, 80), sr);
      EXPECT_NO_THROW(cfg.validate()) << w << " @ " << sr;
    }
  }
}

TEST(Istft, RoundTripAboveFortyDbForEveryConfiguredWindow) {
  std::uint64_t seed = 10;
  for (const auto& cfg : configured_windows()) {
    ASSERT_NO_THROW(cfg.validate());
    for (std::size_t len : {cfg.hop * 7 + 3, std::size_t{8000}}) {
      const auto x = random_wave(len, seed++, cfg.sample_rate);
      const auto y = istft(stft(x, cfg));
      ASSERT_EQ(y.size(), cfg.frames(len) * cfg.hop);
      std::vector<double> trimmed(y.samples.begin(), y.samples.begin() + static_cast<long>(len));
      EXPECT_GT(snr_db(x.samples, trimmed), 40.0) << cfg.fft_size << "/" << cfg.hop << " len " << len;
    }
  }
}

TEST(Istft, ZeroSpectrogramGivesSilence) {
  const auto cfg = config(64, 16);
  ComplexSpectrogram spec{5, cfg.bins(), std::vector<std::complex<double>>(5 * cfg.bins()), cfg};
  const auto y = istft(spec);
  EXPECT_EQ(y.size(), 80u);
  for (double v : y.samples) EXPECT_EQ(v, 0.0);
}

TEST(Istft, SingleDcFrameIsNormalizedWindowPulse) {
  // One frame with X[0] = 1: the inverse DFT is the constant 1/N, windowed,
  // then divided by the squared-window overlap envelope (a single frame here).
  const auto cfg = config(64, 16);
  ComplexSpectrogram spec{1, cfg.bins(), std::vector<std::complex<double>>(cfg.bins()), cfg};
  spec.at(0, 0) = 1.0;
  const auto y = istft(spec);
  const auto w = hann_window(64);
  ASSERT_EQ(y.size(), 16u);
  for (std::size_t n = 0; n < 16; ++n) {
    const double wj = w[n + 32];
    EXPECT_NEAR(y.samples[n], (wj / 64.0) / (wj * wj), 1e-15);
  }
}

TEST(LogMel, DeterministicAndSilenceFloor) {
  const auto cfg = config(256, 64, 32);
  const auto x = random_wave(3000, 7);
  EXPECT_EQ(log_mel(x, cfg), log_mel(x, cfg));
  const Tensor silent = log_mel(Waveform{std::vector<double>(3000, 0.0), 8000}, cfg);
  EXPECT_EQ(silent.dim(0), cfg.frames(3000));
  EXPECT_EQ(silent.dim(1), 32u);
  for (double v : silent.values()) EXPECT_EQ(v, std::log(1e-5));
}

TEST(LogMel, DoublingAmplitudeAddsLogFour) {
  const auto cfg = config(256, 64, 32);
  auto x = random_wave(3000, 8);
  Waveform x2 = x;
  for (auto& v : x2.samples) v *= 2.0;
  const Tensor a = log_mel(x, cfg), b = log_mel(x2, cfg);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i] - a[i], std::log(4.0), 1e-12);
}

TEST(LogMel, InvariantToSignFlip) {
  const auto cfg = config(512, 128, 40);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto x = random_wave(2500, 100 + seed);
    Waveform neg = x;
    for (auto& v : neg.samples) v = -v;
    EXPECT_EQ(log_mel(x, cfg), log_mel(neg, cfg));
  }
}

}  // namespace
