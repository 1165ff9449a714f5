#pragma once

#include <cmath>
#include <numbers>

#include "sacodec/signal.hpp"

namespace sacodec {

// Windowed-sinc sample-rate conversion (Blackman window, 16 zero crossings).
inline Waveform resample(const Waveform& in, std::uint32_t target_rate) {
  if (in.sample_rate == 0 || target_rate == 0) throw Error("resample: zero sample rate");
  if (in.sample_rate == target_rate) return in;
  const double ratio = static_cast<double>(target_rate) / in.sample_rate;
  const double cutoff = std::min(1.0, ratio);
  const int half = 16;
  const double support = half / cutoff;
  const auto out_len = static_cast<std::size_t>(std::ceil(static_cast<double>(in.samples.size()) * ratio));
  Waveform out{std::vector<double>(out_len), target_rate};
  const long n = static_cast<long>(in.samples.size());
  for (std::size_t i = 0; i < out_len; ++i) {
    const double t = static_cast<double>(i) / ratio;
    const long lo = static_cast<long>(std::ceil(t - support)), hi = static_cast<long>(std::floor(t + support));
    double acc = 0.0;
    for (long k = std::max(lo, 0L); k <= std::min(hi, n - 1); ++k) {
      const double x = t - static_cast<double>(k);
      const double u = x / support;  // in [-1, 1]
      const double win = 0.42 + 0.5 * std::cos(std::numbers::pi * u) + 0.08 * std::cos(2 * std::numbers::pi * u);
      const double arg = std::numbers::pi * cutoff * x;
      const double sinc = std::abs(arg) < 1e-12 ? 1.0 : std::sin(arg) / arg;
      acc += in.samples[static_cast<std::size_t>(k)] * cutoff * sinc * win;
    }
    out.samples[i] = acc;
  }
  return out;
}

}  // namespace sacodec
