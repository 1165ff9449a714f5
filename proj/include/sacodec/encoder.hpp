#pragma once

// Strided convolutional encoder with a recurrent block: waveform -> h[T x D].

#include <numeric>
#include <string>
#include <vector>

#include "sacodec/nn.hpp"
#include "sacodec/signal.hpp"

namespace sacodec {

struct EncoderConfig {
  std::uint32_t sample_rate = 24000;
  std::vector<std::size_t> strides{2, 4, 5, 8};
  std::vector<std::size_t> channels{32, 64, 128, 256, 512};  // stem + one per stage
  std::size_t recurrent_hidden = 512;
  std::size_t recurrent_layers = 2;
  std::size_t latent_dim = 512;

  static EncoderConfig paper() { return {}; }
  static EncoderConfig tiny() { return {8000, {2, 4, 10}, {8, 16, 32, 64}, 64, 2, 32}; }

  std::size_t total_stride() const {
    return std::accumulate(strides.begin(), strides.end(), std::size_t{1}, std::multiplies<>());
  }
  double frame_rate() const { return static_cast<double>(sample_rate) / static_cast<double>(total_stride()); }

  void validate() const {
    if (strides.empty() || channels.size() != strides.size() + 1)
      throw Error("encoder: channel schedule needs one entry per stage plus the stem");
    for (auto s : strides)
      if (s == 0) throw Error("encoder: strides must be positive");
    for (auto c : channels)
      if (c < 2) throw Error("encoder: channel counts must be at least 2");
    if (recurrent_hidden == 0 || latent_dim == 0 || recurrent_layers == 0)
      throw Error("encoder: recurrent and latent widths must be positive");
    if (sample_rate == 0) throw Error("encoder: sample rate must be positive");
  }

  bool operator==(const EncoderConfig&) const = default;
};

struct LatentSequence {
  Tensor values;  // [T x D]
  double frame_rate = 0.0;

  std::size_t frames() const { return values.dim(0); }
};

inline std::size_t output_length(std::size_t samples, const EncoderConfig& cfg) {
  const std::size_t stride = cfg.total_stride();
  return (std::max<std::size_t>(samples, 1) + stride - 1) / stride;
}

class Encoder {
 public:
  Encoder() = default;
  Encoder(EncoderConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    stem_ = nn::Conv1d::same(1, cfg_.channels[0], 7, rng);
    for (std::size_t s = 0; s < cfg_.strides.size(); ++s) {
      const std::size_t c = cfg_.channels[s], next = cfg_.channels[s + 1], st = cfg_.strides[s];
      Stage stage;
      stage.res_a = nn::Conv1d::same(c, c / 2, 3, rng);
      stage.res_b = nn::Conv1d::same(c / 2, c, 1, rng);
      stage.down = nn::Conv1d(c, next, 2 * st, {st, st / 2, st - st / 2, 1, 1}, rng);
      stages_.push_back(std::move(stage));
    }
    lstm_ = nn::Lstm(cfg_.channels.back(), cfg_.recurrent_hidden, cfg_.recurrent_layers, rng);
    proj_ = nn::Linear(cfg_.recurrent_hidden, cfg_.latent_dim, rng);
  }

  const EncoderConfig& config() const noexcept { return cfg_; }

  // samples[L] -> h[T x D] with T = ceil(L / total_stride).
  ag::Var forward(const ag::Var& samples) const {
    const std::size_t len = samples.size();
    if (len == 0) throw Error("encoder: empty waveform");
    const std::size_t frames = output_length(len, cfg_);
    const std::size_t padded = frames * cfg_.total_stride();
    ag::Var x = ag::reshape(samples, {1, len});
    if (padded > len) x = ag::concat_cols({x, ag::Var(Tensor({1, padded - len}))});
    x = stem_(x);
    for (const auto& stage : stages_) {
      ag::Var y = stage.res_b(ag::elu(stage.res_a(ag::elu(x))));
      x = ag::add(x, y);
      x = stage.down(ag::elu(x));
    }
    ag::Var seq = ag::transpose(x);  // [T x C]
    ag::Var rec = lstm_(seq);
    if (cfg_.recurrent_hidden == cfg_.channels.back()) rec = ag::add(rec, seq);
    ag::Var h = proj_(ag::elu(rec));
    if (!h.value().all_finite()) throw NumericError("encoder: non-finite latent");
    return h;
  }

  LatentSequence encode(const Waveform& wave) const {
    if (wave.samples.empty()) throw Error("encoder: empty waveform");
    if (wave.sample_rate != cfg_.sample_rate) {
      throw ConfigMismatch("encoder: sample rate " + std::to_string(wave.sample_rate) + " does not match model rate " +
                  std::to_string(cfg_.sample_rate));
    }
    ag::NoGradGuard guard;
    ag::Var in(Tensor({wave.samples.size()}, wave.samples));
    return {forward(in).value(), cfg_.frame_rate()};
  }

  void collect(nn::ParameterList& out, const std::string& prefix) const {
    stem_.collect(out, prefix + ".stem");
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      const std::string p = prefix + ".stage" + std::to_string(s);
      stages_[s].res_a.collect(out, p + ".res_a");
      stages_[s].res_b.collect(out, p + ".res_b");
      stages_[s].down.collect(out, p + ".down");
    }
    lstm_.collect(out, prefix + ".lstm");
    proj_.collect(out, prefix + ".proj");
  }

 private:
  struct Stage {
    nn::Conv1d res_a, res_b, down;
  };

  EncoderConfig cfg_;
  nn::Conv1d stem_;
  std::vector<Stage> stages_;
  nn::Lstm lstm_;
  nn::Linear proj_;
};

}  // namespace sacodec
