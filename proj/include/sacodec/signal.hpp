#pragma once

// STFT / iSTFT / log-mel primitives. Each has a plain-value form and a
// differentiable form in sacodec::ag that shares the same arithmetic.

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "sacodec/autograd.hpp"
#include "sacodec/fft.hpp"

namespace sacodec {

struct Waveform {
  std::vector<double> samples;
  std::uint32_t sample_rate = 0;

  std::size_t size() const noexcept { return samples.size(); }
  double duration_seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

// Periodic Hann window of length n.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

namespace mel_scale {

// Slaney mel scale: linear below 1 kHz, logarithmic above.
inline double hz_to_mel(double hz) {
  constexpr double f_sp = 200.0 / 3.0;
  const double logstep = std::log(6.4) / 27.0;
  return hz >= 1000.0 ? 15.0 + std::log(hz / 1000.0) / logstep : hz / f_sp;
}

inline double mel_to_hz(double mel) {
  constexpr double f_sp = 200.0 / 3.0;
  const double logstep = std::log(6.4) / 27.0;
  return mel >= 15.0 ? 1000.0 * std::exp(logstep * (mel - 15.0)) : f_sp * mel;
}

}  // namespace mel_scale

struct SpectralConfig {
  std::size_t fft_size = 1024;
  std::size_t hop = 256;
  std::size_t mel_bins = 80;
  double sample_rate = 24000.0;
  double fmin = 0.0;
  double fmax = 12000.0;

  std::size_t bins() const noexcept { return fft_size / 2 + 1; }
  std::size_t frames(std::size_t length) const { return (std::max<std::size_t>(length, 1) + hop - 1) / hop; }

  // Mel filterbank [mel_bins x bins]; Slaney triangles, area-normalized.
  Tensor mel_filterbank() const {
    const std::size_t nb = bins();
    Tensor fb({mel_bins, nb});
    const double lo = mel_scale::hz_to_mel(fmin), hi = mel_scale::hz_to_mel(fmax);
    std::vector<double> edges(mel_bins + 2);
    for (std::size_t i = 0; i < edges.size(); ++i)
      edges[i] = mel_scale::mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(mel_bins + 1));
    for (std::size_t m = 0; m < mel_bins; ++m) {
      const double enorm = 2.0 / (edges[m + 2] - edges[m]);
      for (std::size_t k = 0; k < nb; ++k) {
        const double f = static_cast<double>(k) * sample_rate / static_cast<double>(fft_size);
        const double rise = (f - edges[m]) / (edges[m + 1] - edges[m]);
        const double fall = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]);
        fb.at(m, k) = std::max(0.0, std::min(rise, fall)) * enorm;
      }
    }
    return fb;
  }

  // Throws if hop/window violate COLA or the mel layout is degenerate.
  void validate() const {
    if (fft_size < 2 || fft_size % 2 != 0) throw Error("fft_size must be even and >= 2");
    if (hop == 0 || hop > fft_size) throw Error("hop must satisfy 0 < hop <= fft_size");
    const auto w = hann_window(fft_size);
    double lo = 1e300, hi = -1e300;
    for (std::size_t n = 0; n < hop; ++n) {
      double s = 0.0;
      for (std::size_t j = n; j < fft_size; j += hop) s += w[j];
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
    if (hi - lo > 1e-9 * hi || lo <= 0.0) {
      throw Error("window of length " + std::to_string(fft_size) + " is not COLA at hop " + std::to_string(hop));
    }
    if (mel_bins > 0) {
      if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0))
        throw Error("mel range must satisfy 0 <= fmin < fmax <= sample_rate/2");
      const Tensor fb = mel_filterbank();
      for (std::size_t m = 0; m < mel_bins; ++m) {
        double s = 0.0;
        for (double v : fb.row(m)) s += v;
        if (!(s > 0.0)) throw Error("mel filter " + std::to_string(m) + " has no support at this fft size");
      }
    }
  }
};

struct ComplexSpectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<std::complex<double>> data;  // frames x bins, row-major
  SpectralConfig config;

  std::complex<double>& at(std::size_t f, std::size_t k) { return data[f * bins + k]; }
  const std::complex<double>& at(std::size_t f, std::size_t k) const { return data[f * bins + k]; }

  // [F x bins x 2] real/imag tensor
  Tensor to_tensor() const {
    Tensor t({frames, bins, 2});
    for (std::size_t i = 0; i < data.size(); ++i) {
      t[2 * i] = data[i].real();
      t[2 * i + 1] = data[i].imag();
    }
    return t;
  }
  static ComplexSpectrogram from_tensor(const Tensor& t, const SpectralConfig& cfg) {
    ComplexSpectrogram s{t.dim(0), t.dim(1), {}, cfg};
    s.data.resize(s.frames * s.bins);
    for (std::size_t i = 0; i < s.data.size(); ++i) s.data[i] = {t[2 * i], t[2 * i + 1]};
    return s;
  }
};

namespace detail {

// Source sample for each position of the center-padded analysis buffer, or -1
// for an implicit zero. The signal is first zero-extended to frames*hop, then
// reflect-padded by fft_size/2 on both sides (zero-padded when too short to
// reflect).
inline std::vector<long> center_pad_map(std::size_t length, const SpectralConfig& cfg) {
  const std::size_t frames = cfg.frames(length);
  const long m = static_cast<long>(frames * cfg.hop);
  const long half = static_cast<long>(cfg.fft_size / 2);
  const std::size_t padded = (frames - 1) * cfg.hop + cfg.fft_size;
  const bool reflect = half <= m - 1;
  std::vector<long> map(padded, -1);
  for (std::size_t p = 0; p < padded; ++p) {
    long q = static_cast<long>(p) - half;
    if (q < 0) {
      if (!reflect) continue;
      q = -q;
    } else if (q >= m) {
      if (!reflect) continue;
      q = 2 * (m - 1) - q;
    }
    map[p] = q < static_cast<long>(length) ? q : -1;
  }
  return map;
}

inline void check_finite(std::span<const double> x, const char* where) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) throw NumericError(std::string(where) + ": non-finite sample at index " + std::to_string(i));
  }
}

// [F x bins x 2] analysis of x.
inline Tensor stft_values(std::span<const double> x, const SpectralConfig& cfg) {
  const auto& plan = fft::plan_for(cfg.fft_size);
  const auto window = hann_window(cfg.fft_size);
  const auto map = center_pad_map(x.size(), cfg);
  const std::size_t frames = cfg.frames(x.size()), nb = cfg.bins();
  Tensor out({frames, nb, 2});
  std::vector<double> buf(cfg.fft_size);
  std::vector<fft::Complex> spec(nb);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t j = 0; j < cfg.fft_size; ++j) {
      const long src = map[f * cfg.hop + j];
      buf[j] = src >= 0 ? x[static_cast<std::size_t>(src)] * window[j] : 0.0;
    }
    plan.forward(buf, spec);
    for (std::size_t k = 0; k < nb; ++k) {
      out[(f * nb + k) * 2] = spec[k].real();
      out[(f * nb + k) * 2 + 1] = spec[k].imag();
    }
  }
  return out;
}

// Adjoint of stft_values with respect to x.
inline void stft_adjoint(const Tensor& grad, const SpectralConfig& cfg, std::span<double> gx) {
  const auto& plan = fft::plan_for(cfg.fft_size);
  const auto window = hann_window(cfg.fft_size);
  const auto map = center_pad_map(gx.size(), cfg);
  const std::size_t frames = grad.dim(0), nb = grad.dim(1);
  std::vector<fft::Complex> g(nb);
  std::vector<double> frame(cfg.fft_size);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t k = 0; k < nb; ++k) {
      const double s = (k == 0 || k == nb - 1) ? 1.0 : 0.5;
      g[k] = {s * grad[(f * nb + k) * 2], s * grad[(f * nb + k) * 2 + 1]};
    }
    // c2r drops Im at DC/Nyquist; their contribution is sin(0)=sin(pi n)=0 anyway.
    plan.inverse_unnormalized(g, frame);
    for (std::size_t j = 0; j < cfg.fft_size; ++j) {
      const long src = map[f * cfg.hop + j];
      if (src >= 0) gx[static_cast<std::size_t>(src)] += frame[j] * window[j];
    }
  }
}

inline std::vector<double> window_envelope(std::size_t frames, const SpectralConfig& cfg) {
  const auto window = hann_window(cfg.fft_size);
  std::vector<double> env((frames - 1) * cfg.hop + cfg.fft_size, 0.0);
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t j = 0; j < cfg.fft_size; ++j) env[f * cfg.hop + j] += window[j] * window[j];
  return env;
}

// Weighted overlap-add synthesis of a [F x bins x 2] tensor; length F*hop.
inline std::vector<double> istft_values(const Tensor& spec, const SpectralConfig& cfg) {
  const auto& plan = fft::plan_for(cfg.fft_size);
  const auto window = hann_window(cfg.fft_size);
  const std::size_t frames = spec.dim(0), nb = spec.dim(1);
  if (nb != cfg.bins()) throw Error("istft: spectrogram has " + std::to_string(nb) + " bins, config expects " + std::to_string(cfg.bins()));
  const auto env = window_envelope(frames, cfg);
  std::vector<double> ola(env.size(), 0.0);
  std::vector<fft::Complex> bins(nb);
  std::vector<double> frame(cfg.fft_size);
  const double inv_n = 1.0 / static_cast<double>(cfg.fft_size);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t k = 0; k < nb; ++k) bins[k] = {spec[(f * nb + k) * 2], spec[(f * nb + k) * 2 + 1]};
    plan.inverse_unnormalized(bins, frame);
    for (std::size_t j = 0; j < cfg.fft_size; ++j) ola[f * cfg.hop + j] += frame[j] * inv_n * window[j];
  }
  const std::size_t half = cfg.fft_size / 2;
  std::vector<double> out(frames * cfg.hop);
  for (std::size_t n = 0; n < out.size(); ++n) {
    const double e = env[n + half];
    out[n] = e > 1e-11 ? ola[n + half] / e : 0.0;
  }
  return out;
}

// Adjoint of istft_values with respect to the [F x bins x 2] input.
inline void istft_adjoint(std::span<const double> gout, const SpectralConfig& cfg, Tensor& gspec) {
  const auto& plan = fft::plan_for(cfg.fft_size);
  const auto window = hann_window(cfg.fft_size);
  const std::size_t frames = gspec.dim(0), nb = gspec.dim(1);
  const auto env = window_envelope(frames, cfg);
  const std::size_t half = cfg.fft_size / 2;
  std::vector<double> gola(env.size(), 0.0);
  for (std::size_t n = 0; n < gout.size(); ++n) {
    const double e = env[n + half];
    if (e > 1e-11) gola[n + half] = gout[n] / e;
  }
  const double inv_n = 1.0 / static_cast<double>(cfg.fft_size);
  std::vector<double> seg(cfg.fft_size);
  std::vector<fft::Complex> g(nb);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t j = 0; j < cfg.fft_size; ++j) seg[j] = gola[f * cfg.hop + j] * window[j] * inv_n;
    plan.forward(seg, g);
    for (std::size_t k = 0; k < nb; ++k) {
      const bool edge = (k == 0 || k == nb - 1);
      const double c = edge ? 1.0 : 2.0;
      gspec[(f * nb + k) * 2] += c * g[k].real();
      if (!edge) gspec[(f * nb + k) * 2 + 1] += c * g[k].imag();
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Differentiable forms

namespace ag {

// wave[L] -> [F x bins x 2]
inline Var stft(const Var& wave, const SpectralConfig& cfg) {
  Tensor y = sacodec::detail::stft_values(wave.value().values(), cfg);
  return make_result(std::move(y), {wave}, [cfg](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    sacodec::detail::stft_adjoint(self.grad, cfg, g.values());
  });
}

// [F x bins x 2] -> wave[F*hop]
inline Var istft(const Var& spec, const SpectralConfig& cfg) {
  auto samples = sacodec::detail::istft_values(spec.value(), cfg);
  const std::size_t n = samples.size();
  return make_result(Tensor({n}, std::move(samples)), {spec}, [cfg](Node& self) {
    sacodec::detail::istft_adjoint(self.grad.values(), cfg, self.inputs[0]->grad_buffer());
  });
}

// [F x bins x 2] -> |X|^2 as [F x bins]
inline Var spectral_power(const Var& spec) {
  const Tensor& s = spec.value();
  const std::size_t f = s.dim(0), nb = s.dim(1);
  Tensor p({f, nb});
  for (std::size_t i = 0; i < f * nb; ++i) p[i] = s[2 * i] * s[2 * i] + s[2 * i + 1] * s[2 * i + 1];
  return make_result(std::move(p), {spec}, [](Node& self) {
    const Tensor& s = self.inputs[0]->value;
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      g[2 * i] += 2.0 * s[2 * i] * self.grad[i];
      g[2 * i + 1] += 2.0 * s[2 * i + 1] * self.grad[i];
    }
  });
}

inline constexpr double kLogMelFloor = 1e-5;

// log(max(mel power, 1e-5)) as [F x mel_bins]
inline Var log_mel(const Var& wave, const SpectralConfig& cfg, const Tensor& filterbank) {
  Var power = spectral_power(stft(wave, cfg));
  Var mel = matmul_nt(power, Var(filterbank));
  return log(clamp_min(mel, kLogMelFloor));
}

inline Var log_mel(const Var& wave, const SpectralConfig& cfg) { return log_mel(wave, cfg, cfg.mel_filterbank()); }

}  // namespace ag

// ---------------------------------------------------------------------------
// Value forms

inline ComplexSpectrogram stft(const Waveform& wave, const SpectralConfig& cfg) {
  detail::check_finite(wave.samples, "stft");
  return ComplexSpectrogram::from_tensor(detail::stft_values(wave.samples, cfg), cfg);
}

inline Waveform istft(const ComplexSpectrogram& spec) {
  Waveform out;
  out.samples = detail::istft_values(spec.to_tensor(), spec.config);
  out.sample_rate = static_cast<std::uint32_t>(spec.config.sample_rate);
  return out;
}

// [F x mel_bins]
inline Tensor log_mel(const Waveform& wave, const SpectralConfig& cfg) {
  detail::check_finite(wave.samples, "log_mel");
  ag::NoGradGuard no_grad;
  const std::size_t n = wave.samples.size();
  return ag::log_mel(ag::Var(Tensor({n}, wave.samples)), cfg).value();
}

}  // namespace sacodec
