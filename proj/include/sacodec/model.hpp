#pragma once

// The full codec: encoder, dual quantizer and decoder, plus the adversarial
// ensemble used only during training.

#include <string>

#include "sacodec/codebook_io.hpp"
#include "sacodec/config.hpp"
#include "sacodec/decoder.hpp"
#include "sacodec/discriminators.hpp"
#include "sacodec/encoder.hpp"
#include "sacodec/quantizer.hpp"

namespace sacodec {

struct ModelConfig {
  Profile profile = Profile::tiny;
  EncoderConfig encoder;
  QuantizerConfig quantizer;
  DecoderConfig decoder;
  DiscriminatorConfig discriminator;

  std::uint32_t sample_rate() const { return encoder.sample_rate; }
  std::size_t total_stride() const { return encoder.total_stride(); }
  double frame_rate() const { return encoder.frame_rate(); }
};

inline ModelConfig model_config(Profile profile) {
  ModelConfig m;
  m.profile = profile;
  if (profile == Profile::paper) {
    m.encoder = EncoderConfig::paper();
    m.quantizer = QuantizerConfig{1000, 768, 1024, 512};
    m.decoder = DecoderConfig::paper();
    m.discriminator = DiscriminatorConfig::paper();
  } else {
    m.encoder = EncoderConfig::tiny();
    m.quantizer = QuantizerConfig{64, 32, 64, 32};
    m.decoder = DecoderConfig::tiny();
    m.discriminator = DiscriminatorConfig::tiny();
  }
  m.decoder.input_dim = m.encoder.latent_dim;
  m.decoder.head = DecoderConfig::head_for(m.encoder.total_stride(), m.encoder.sample_rate);
  m.discriminator.sample_rate = m.encoder.sample_rate;
  return m;
}

// Applies the codebook-size override and ablation switches of a training config.
inline ModelConfig model_config(const TrainConfig& t, std::size_t semantic_dim = 0) {
  ModelConfig m = model_config(t.profile);
  auto& q = m.quantizer;
  if (t.k1) q.k1 = t.k1;
  if (t.k2) q.k2 = t.k2;
  if (semantic_dim) q.semantic_dim = semantic_dim;
  q.no_q1 = t.no_q1;
  q.no_q2 = t.no_q2;
  q.q1_random_learnable = t.q1_random_learnable;
  q.q1_direct_lookup = t.q1_direct_lookup;
  q.q2_plain_vq = t.q2_plain_vq;
  q.validate();
  return m;
}

// Loads the configured codebook file, or builds the profile's stand-in.
inline Tensor load_semantic_codebook(const TrainConfig& t) {
  if (!t.semantic_codebook.empty()) return read_codebook(t.semantic_codebook);
  const ModelConfig m = model_config(t.profile);
  const std::size_t k = t.k1 ? t.k1 : m.quantizer.k1;
  if (t.profile == Profile::paper) return placeholder_semantic_codebook(k, m.quantizer.semantic_dim);
  return tiny_semantic_codebook(k, m.quantizer.semantic_dim, m.encoder.sample_rate, m.encoder.total_stride());
}

class Codec {
 public:
  Codec(ModelConfig cfg, Tensor semantic_codebook, std::uint64_t seed) : cfg_(std::move(cfg)) {
    Rng enc_rng(seed, 1), q_rng(seed, 2), dec_rng(seed, 3), disc_rng(seed, 4);
    encoder_ = Encoder(cfg_.encoder, enc_rng);
    quantizer_ = DualQuantizer(cfg_.quantizer, std::move(semantic_codebook), q_rng);
    decoder_ = Decoder(cfg_.decoder, dec_rng);
    discriminator_ = DiscriminatorEnsemble(cfg_.discriminator, disc_rng);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  const Encoder& encoder() const noexcept { return encoder_; }
  const DualQuantizer& quantizer() const noexcept { return quantizer_; }
  DualQuantizer& quantizer() noexcept { return quantizer_; }
  const Decoder& decoder() const noexcept { return decoder_; }
  Decoder& decoder() noexcept { return decoder_; }
  const DiscriminatorEnsemble& discriminator() const noexcept { return discriminator_; }

  nn::ParameterList generator_parameters() const {
    nn::ParameterList out;
    encoder_.collect(out, "encoder");
    quantizer_.collect(out, "quantizer");
    decoder_.collect(out, "decoder");
    return out;
  }
  nn::ParameterList discriminator_parameters() const {
    nn::ParameterList out;
    discriminator_.collect(out, "disc");
    return out;
  }
  nn::ParameterList frozen_arrays() const {
    nn::ParameterList out;
    quantizer_.collect_frozen(out, "quantizer");
    return out;
  }

  // Identifies the generator weights a token stream was produced with.
  std::uint64_t checksum() const {
    Fnv1a64 h;
    for (const auto& list : {generator_parameters(), frozen_arrays()}) {
      for (const auto& p : list) {
        h.update(p.name);
        h.update(p.var.value().values());
      }
    }
    return h.digest();
  }

  LatentSequence encode(const Waveform& w) const { return encoder_.encode(w); }
  QuantizationResult quantize(const LatentSequence& h) const { return quantizer_.quantize(h.values); }
  Waveform decode(const Tensor& e_final) const { return decoder_.decode(e_final); }

  // Encode, quantize and decode; output trimmed to the input length.
  Waveform reconstruct(const Waveform& w) const {
    Waveform y = decode(quantize(encode(w)).e_final);
    y.samples.resize(w.samples.size());
    return y;
  }

 private:
  ModelConfig cfg_;
  Encoder encoder_;
  DualQuantizer quantizer_;
  Decoder decoder_;
  DiscriminatorEnsemble discriminator_;
};

}  // namespace sacodec
