#pragma once

// Adversarial ensemble: multi-period discriminators over period-folded
// waveforms and band-split discriminators over multi-resolution STFTs.

#include <cmath>
#include <string>
#include <vector>

#include "sacodec/nn.hpp"
#include "sacodec/signal.hpp"

namespace sacodec {

struct DiscriminatorConfig {
  std::vector<std::size_t> periods{2, 3, 5, 7, 11};
  std::vector<std::size_t> period_channels{32, 128, 512, 1024};
  std::vector<std::size_t> fft_sizes{512, 1024, 2048};
  std::size_t bands = 5;
  std::size_t stft_channels = 32;
  double sample_rate = 24000.0;

  static DiscriminatorConfig paper() { return {}; }
  static DiscriminatorConfig tiny() { return {{2, 3, 5, 7, 11}, {8, 16, 16}, {512, 1024, 2048}, 5, 8, 8000.0}; }

  std::size_t min_length() const {
    std::size_t p = 1;
    for (auto v : periods) p = std::max(p, v);
    return 2 * p;
  }
  std::size_t count() const { return periods.size() + fft_sizes.size() * bands; }

  bool operator==(const DiscriminatorConfig&) const = default;
};

struct DiscriminatorOutput {
  std::vector<ag::Var> logits;                 // one score map per sub-discriminator
  std::vector<std::vector<ag::Var>> features;  // per sub-discriminator, per layer
};

// [N] -> [1 x ceil(N/p) x p], zero-padded at the end.
inline ag::Var fold_periods(const ag::Var& wave, std::size_t period) {
  const std::size_t n = wave.size(), rows = (n + period - 1) / period;
  ag::Var x = ag::reshape(wave, {1, n});
  if (rows * period > n) x = ag::concat_cols({x, ag::Var(Tensor({1, rows * period - n}))});
  return ag::reshape(x, {1, rows, period});
}

class PeriodDiscriminator {
 public:
  PeriodDiscriminator() = default;
  PeriodDiscriminator(std::size_t period, const std::vector<std::size_t>& channels, Rng& rng) : period_(period) {
    std::size_t in = 1;
    for (std::size_t i = 0; i < channels.size(); ++i) {
      const bool last = i + 1 == channels.size();
      convs_.emplace_back(in, channels[i], 5, 1, ag::Conv2dSpec{last ? 1u : 3u, 1, 2, 0}, rng);
      in = channels[i];
    }
    post_ = nn::Conv2d(in, 1, 3, 1, {1, 1, 1, 0}, rng);
  }

  std::size_t period() const noexcept { return period_; }

  void run(const ag::Var& wave, DiscriminatorOutput& out) const {
    ag::Var x = fold_periods(wave, period_);
    std::vector<ag::Var> feats;
    for (const auto& conv : convs_) {
      x = ag::leaky_relu(conv(x), 0.1);
      feats.push_back(x);
    }
    x = post_(x);
    feats.push_back(x);
    out.logits.push_back(x);
    out.features.push_back(std::move(feats));
  }

  void collect(nn::ParameterList& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(out, prefix + ".conv" + std::to_string(i));
    post_.collect(out, prefix + ".post");
  }

 private:
  std::size_t period_ = 2;
  std::vector<nn::Conv2d> convs_;
  nn::Conv2d post_;
};

// One resolution, split into equal-width frequency bands with one small conv
// stack each. Input layout per band: [2 x frames x band_bins].
class BandStftDiscriminator {
 public:
  BandStftDiscriminator() = default;
  BandStftDiscriminator(std::size_t fft_size, std::size_t bands, std::size_t channels, double sample_rate, Rng& rng)
      : cfg_{fft_size, fft_size / 4, 0, sample_rate, 0.0, sample_rate / 2.0} {
    const std::size_t nb = cfg_.bins();
    for (std::size_t b = 0; b <= bands; ++b) edges_.push_back(b * nb / bands);
    for (std::size_t b = 0; b < bands; ++b) {
      Stack s;
      s.convs.emplace_back(2, channels, 3, 3, ag::Conv2dSpec{1, 1, 1, 1}, rng);
      s.convs.emplace_back(channels, channels, 3, 3, ag::Conv2dSpec{1, 2, 1, 1}, rng);
      s.convs.emplace_back(channels, channels, 3, 3, ag::Conv2dSpec{1, 2, 1, 1}, rng);
      s.post = nn::Conv2d(channels, 1, 3, 3, {1, 1, 1, 1}, rng);
      stacks_.push_back(std::move(s));
    }
  }

  void run(const ag::Var& wave, DiscriminatorOutput& out) const {
    ag::Var spec = ag::scale(ag::stft(wave, cfg_), 1.0 / std::sqrt(static_cast<double>(cfg_.fft_size)));
    const std::size_t frames = spec.dim(0), nb = spec.dim(1);
    // [F x bins x 2] -> [F x 2*bins] -> per band [2 x F x width]
    ag::Var flat = ag::reshape(spec, {frames, 2 * nb});
    for (std::size_t b = 0; b < stacks_.size(); ++b) {
      ag::Var band = ag::slice_cols(flat, 2 * edges_[b], 2 * edges_[b + 1]);
      const std::size_t width = edges_[b + 1] - edges_[b];
      ag::Var chans = ag::transpose(ag::reshape(band, {frames * width, 2}));  // [2 x F*width]
      ag::Var x = ag::reshape(chans, {2, frames, width});
      std::vector<ag::Var> feats;
      for (const auto& conv : stacks_[b].convs) {
        x = ag::leaky_relu(conv(x), 0.1);
        feats.push_back(x);
      }
      x = stacks_[b].post(x);
      feats.push_back(x);
      out.logits.push_back(x);
      out.features.push_back(std::move(feats));
    }
  }

  void collect(nn::ParameterList& out, const std::string& prefix) const {
    for (std::size_t b = 0; b < stacks_.size(); ++b) {
      const std::string p = prefix + ".band" + std::to_string(b);
      for (std::size_t i = 0; i < stacks_[b].convs.size(); ++i)
        stacks_[b].convs[i].collect(out, p + ".conv" + std::to_string(i));
      stacks_[b].post.collect(out, p + ".post");
    }
  }

 private:
  struct Stack {
    std::vector<nn::Conv2d> convs;
    nn::Conv2d post;
  };

  SpectralConfig cfg_;
  std::vector<std::size_t> edges_;
  std::vector<Stack> stacks_;
};

class DiscriminatorEnsemble {
 public:
  DiscriminatorEnsemble() = default;
  DiscriminatorEnsemble(DiscriminatorConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    if (cfg_.bands == 0) throw Error("discriminator: need at least one band");
    for (auto p : cfg_.periods) periods_.emplace_back(p, cfg_.period_channels, rng);
    for (auto n : cfg_.fft_sizes) stfts_.emplace_back(n, cfg_.bands, cfg_.stft_channels, cfg_.sample_rate, rng);
  }

  const DiscriminatorConfig& config() const noexcept { return cfg_; }

  DiscriminatorOutput operator()(const ag::Var& wave) const {
    if (wave.size() < cfg_.min_length())
      throw Error("discriminator: input of " + std::to_string(wave.size()) + " samples is shorter than " +
                  std::to_string(cfg_.min_length()));
    DiscriminatorOutput out;
    for (const auto& d : periods_) d.run(wave, out);
    for (const auto& d : stfts_) d.run(wave, out);
    return out;
  }

  void collect(nn::ParameterList& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < periods_.size(); ++i)
      periods_[i].collect(out, prefix + ".mpd" + std::to_string(cfg_.periods[i]));
    for (std::size_t i = 0; i < stfts_.size(); ++i)
      stfts_[i].collect(out, prefix + ".mstft" + std::to_string(cfg_.fft_sizes[i]));
  }

 private:
  DiscriminatorConfig cfg_;
  std::vector<PeriodDiscriminator> periods_;
  std::vector<BandStftDiscriminator> stfts_;
};

}  // namespace sacodec
