#pragma once

// ConvNeXt backbone with one self-attention block, a spectral head and iSTFT
// synthesis: e_final[T x D] -> waveform[T * hop].

#include <cmath>
#include <string>
#include <vector>

#include "sacodec/nn.hpp"
#include "sacodec/signal.hpp"

namespace sacodec {

struct DecoderConfig {
  std::size_t input_dim = 512;
  std::size_t depth = 8;
  std::size_t width = 384;
  std::size_t attention_heads = 4;
  std::size_t attention_after = 4;  // blocks preceding the attention stage
  std::size_t expansion = 3;
  SpectralConfig head{1280, 320, 0, 24000.0, 0.0, 12000.0};

  static DecoderConfig paper() { return {}; }
  static DecoderConfig tiny() { return {32, 2, 64, 2, 1, 3, {320, 80, 0, 8000.0, 0.0, 4000.0}}; }

  // Head geometry tied to the encoder's total stride.
  static SpectralConfig head_for(std::size_t total_stride, double sample_rate) {
    return {4 * total_stride, total_stride, 0, sample_rate, 0.0, sample_rate / 2.0};
  }

  void validate() const {
    if (depth == 0 || width == 0 || input_dim == 0) throw Error("decoder: zero dimension");
    if (attention_heads == 0 || width % attention_heads != 0)
      throw Error("decoder: width " + std::to_string(width) + " not divisible by " +
                  std::to_string(attention_heads) + " heads");
    if (attention_after > depth) throw Error("decoder: attention placed past the last block");
    if (head.hop == 0 || head.fft_size < head.hop || head.fft_size % 2)
      throw Error("decoder: invalid head spectral config");
  }

  bool operator==(const DecoderConfig& o) const {
    return input_dim == o.input_dim && depth == o.depth && width == o.width &&
           attention_heads == o.attention_heads && attention_after == o.attention_after &&
           expansion == o.expansion && head.fft_size == o.head.fft_size && head.hop == o.head.hop &&
           head.sample_rate == o.head.sample_rate;
  }
};

inline constexpr double kMaxLogMagnitude = 4.605170185988092;  // log(100)

namespace ag {

// head[T x 3*bins] = (log magnitude, a, b) per bin; phase (1 + a, b) normalized.
inline Var spectral_head(const Var& head) {
  const std::size_t nb = head.dim(1) / 3;
  if (head.dim(1) != 3 * nb) throw Error("spectral_head: width must be a multiple of 3");
  Var mag = exp(clamp_max(slice_cols(head, 0, nb), kMaxLogMagnitude));
  Var a = add_scalar(slice_cols(head, nb, 2 * nb), 1.0);
  Var b = slice_cols(head, 2 * nb, 3 * nb);
  Var radius = sqrt(clamp_min(add(square(a), square(b)), 1e-18));
  Var re = mul(mag, div(a, radius));
  Var im = mul(mag, div(b, radius));
  return complex_pack(re, im);
}

}  // namespace ag

class Decoder {
 public:
  Decoder() = default;
  Decoder(DecoderConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    cfg_.head.validate();
    const std::size_t w = cfg_.width;
    embed_ = nn::Conv1d::same(cfg_.input_dim, w, 7, rng);
    embed_norm_ = nn::LayerNorm(w);
    const double ls = 1.0 / static_cast<double>(cfg_.depth);
    for (std::size_t i = 0; i < cfg_.depth; ++i) {
      Block b;
      b.dw = nn::Conv1d::same(w, w, 7, rng, w);
      b.norm = nn::LayerNorm(w);
      b.up = nn::Linear(w, cfg_.expansion * w, rng);
      b.down = nn::Linear(cfg_.expansion * w, w, rng);
      b.scale = ag::Var::parameter(Tensor({w}, ls));
      blocks_.push_back(std::move(b));
    }
    attn_norm_ = nn::LayerNorm(w);
    qkv_ = nn::Linear(w, 3 * w, rng);
    attn_out_ = nn::Linear(w, w, rng);
    final_norm_ = nn::LayerNorm(w);
    head_ = nn::Linear(w, 3 * cfg_.head.bins(), rng);
  }

  const DecoderConfig& config() const noexcept { return cfg_; }

  // Backbone features [T x width].
  ag::Var features(const ag::Var& e) const {
    if (e.value().rank() != 2 || e.dim(1) != cfg_.input_dim)
      throw Error("decoder: input " + shape_string(e.shape()) + " does not have width " +
                  std::to_string(cfg_.input_dim));
    check(e, "decoder input");
    ag::Var x = ag::transpose(embed_(ag::transpose(e)));
    x = embed_norm_(x);
    check(x, "decoder embedding");
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      if (i == cfg_.attention_after) x = attention(x);
      x = block(x, blocks_[i]);
      check(x, "decoder block " + std::to_string(i));
    }
    if (cfg_.attention_after == blocks_.size()) x = attention(x);
    return final_norm_(x);
  }

  // [T x bins x 2]
  ag::Var spectrum(const ag::Var& e) const {
    ag::Var spec = ag::spectral_head(head_(features(e)));
    check(spec, "decoder head");
    return spec;
  }

  // waveform[T * hop]
  ag::Var forward(const ag::Var& e) const { return ag::istft(spectrum(e), cfg_.head); }

  Waveform decode(const Tensor& e_final) const {
    ag::NoGradGuard guard;
    Tensor out = forward(ag::Var(e_final)).value();
    return {std::vector<double>(out.values().begin(), out.values().end()),
            static_cast<std::uint32_t>(cfg_.head.sample_rate)};
  }

  ComplexSpectrogram spectral_head(const Tensor& features) const {
    ag::NoGradGuard guard;
    return ComplexSpectrogram::from_tensor(ag::spectral_head(head_(ag::Var(features))).value(), cfg_.head);
  }

  nn::Linear& head() { return head_; }

  void collect(nn::ParameterList& out, const std::string& prefix) const {
    embed_.collect(out, prefix + ".embed");
    embed_norm_.collect(out, prefix + ".embed_norm");
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::string p = prefix + ".block" + std::to_string(i);
      blocks_[i].dw.collect(out, p + ".dw");
      blocks_[i].norm.collect(out, p + ".norm");
      blocks_[i].up.collect(out, p + ".up");
      blocks_[i].down.collect(out, p + ".down");
      out.push_back({p + ".scale", blocks_[i].scale});
    }
    attn_norm_.collect(out, prefix + ".attn_norm");
    qkv_.collect(out, prefix + ".attn_qkv");
    attn_out_.collect(out, prefix + ".attn_out");
    final_norm_.collect(out, prefix + ".final_norm");
    head_.collect(out, prefix + ".head");
  }

 private:
  struct Block {
    nn::Conv1d dw;
    nn::LayerNorm norm;
    nn::Linear up, down;
    ag::Var scale;
  };

  static void check(const ag::Var& v, const std::string& where) {
    if (!v.value().all_finite()) throw NumericError(where + ": non-finite activation");
  }

  ag::Var block(const ag::Var& x, const Block& b) const {
    ag::Var y = ag::transpose(b.dw(ag::transpose(x)));
    y = b.down(ag::gelu(b.up(b.norm(y))));
    return ag::add(x, ag::mul_row_vector(y, b.scale));
  }

  ag::Var attention(const ag::Var& x) const {
    const std::size_t w = cfg_.width, heads = cfg_.attention_heads, dh = w / heads;
    ag::Var qkv = qkv_(attn_norm_(x));
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<ag::Var> outs;
    for (std::size_t h = 0; h < heads; ++h) {
      ag::Var q = ag::slice_cols(qkv, h * dh, (h + 1) * dh);
      ag::Var k = ag::slice_cols(qkv, w + h * dh, w + (h + 1) * dh);
      ag::Var v = ag::slice_cols(qkv, 2 * w + h * dh, 2 * w + (h + 1) * dh);
      ag::Var att = ag::softmax_rows(ag::scale(ag::matmul_nt(q, k), inv));
      outs.push_back(ag::matmul(att, v));
    }
    ag::Var y = ag::add(x, attn_out_(ag::concat_cols(outs)));
    check(y, "decoder attention");
    return y;
  }

  DecoderConfig cfg_;
  nn::Conv1d embed_;
  nn::LayerNorm embed_norm_;
  std::vector<Block> blocks_;
  nn::LayerNorm attn_norm_;
  nn::Linear qkv_, attn_out_;
  nn::LayerNorm final_norm_;
  nn::Linear head_;
};

}  // namespace sacodec
