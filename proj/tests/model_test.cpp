#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sacodec/decoder.hpp"
#include "sacodec/discriminators.hpp"
#include "sacodec/encoder.hpp"
#include "sacodec/losses.hpp"
#include "test_support.hpp"

namespace {

using namespace sacodec;
using sacodec::testing::gradient_check;
using sacodec::testing::random_tensor;

Waveform noise(std::size_t n, std::uint64_t seed, std::uint32_t sr = 8000, double amp = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, amp);
  Waveform w{std::vector<double>(n), sr};
  for (auto& v : w.samples) v = d(rng);
  return w;
}

bool all_finite(const Tensor& t) {
  for (double v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// encoder

TEST(OutputLength, CeilArithmetic) {
  const auto paper = EncoderConfig::paper();
  EXPECT_EQ(paper.total_stride(), 320u);
  EXPECT_DOUBLE_EQ(paper.frame_rate(), 75.0);
  EXPECT_EQ(output_length(24000, paper), 75u);
  EXPECT_EQ(output_length(24001, paper), 76u);
  EXPECT_EQ(output_length(48000, paper), 150u);
  EXPECT_EQ(output_length(1, paper), 1u);
  EXPECT_EQ(output_length(320, paper), 1u);
  EXPECT_EQ(EncoderConfig::tiny().total_stride(), 80u);
}

TEST(Encoder, PaperProfileSecondGivesSeventyFiveFrames) {
  Rng rng(0, 1);
  const Encoder enc(EncoderConfig::paper(), rng);
  const auto h = enc.encode(noise(24000, 1, 24000));
  EXPECT_EQ(h.frames(), 75u);
  EXPECT_EQ(h.values.dim(1), 512u);
  EXPECT_DOUBLE_EQ(h.frame_rate, 75.0);
}

TEST(Encoder, LengthContractOnRandomLengths) {
  Rng rng(0, 1);
  const auto cfg = EncoderConfig::tiny();
  const Encoder enc(cfg, rng);
  std::mt19937_64 g(2);
  std::uniform_int_distribution<std::size_t> len(1, 400);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = len(g);
    const auto h = enc.encode(noise(n, static_cast<std::uint64_t>(i)));
    ASSERT_EQ(h.frames(), output_length(n, cfg)) << "length " << n;
    ASSERT_TRUE(all_finite(h.values));
  }
}

TEST(Encoder, Deterministic) {
  Rng rng(3, 1);
  const Encoder enc(EncoderConfig::tiny(), rng);
  const auto x = noise(1000, 4);
  const auto a = enc.encode(x), b = enc.encode(x);
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_EQ(a.values[i], b.values[i]);
}

TEST(Encoder, RejectsEmptyAndWrongRate) {
  Rng rng(0, 1);
  const Encoder enc(EncoderConfig::tiny(), rng);
  EXPECT_THROW(enc.encode(Waveform{{}, 8000}), Error);
  EXPECT_THROW(enc.encode(noise(800, 1, 16000)), ConfigMismatch);
}

TEST(Encoder, GradientReachesEveryParameter) {
  Rng rng(5, 1);
  const Encoder enc(EncoderConfig::tiny(), rng);
  const auto x = noise(400, 6);
  ag::Var h = enc.forward(ag::Var(Tensor({x.size()}, x.samples)));
  ag::backward(ag::sum(h));
  nn::ParameterList params;
  enc.collect(params, "encoder");
  ASSERT_FALSE(params.empty());
  for (const auto& p : params) {
    ASSERT_TRUE(p.var.has_grad()) << p.name;
    ASSERT_TRUE(all_finite(p.var.grad())) << p.name;
    double mx = 0.0;
    for (double g : p.var.grad().values()) mx = std::max(mx, std::abs(g));
    EXPECT_GT(mx, 0.0) << p.name;
  }
}

TEST(Encoder, DistinguishesInputsAtInitialization) {
  Rng rng(7, 1);
  const Encoder enc(EncoderConfig::tiny(), rng);
  const auto a = enc.encode(noise(800, 8)).values, b = enc.encode(noise(800, 9)).values;
  double diff = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    norm += a[i] * a[i];
  }
  EXPECT_GT(diff, 0.01 * norm);
}

// ---------------------------------------------------------------------------
// decoder

TEST(Decoder, OutputLengthIsFramesTimesStride) {
  Rng rng(0, 3);
  const Decoder dec(DecoderConfig::tiny(), rng);
  std::mt19937_64 g(1);
  for (std::size_t t : {1u, 2u, 7u, 25u}) {
    const auto y = dec.decode(random_tensor({t, 32}, g));
    EXPECT_EQ(y.size(), t * 80);
    EXPECT_EQ(y.sample_rate, 8000u);
  }
}

TEST(Decoder, PaperProfileSecond) {
  Rng rng(0, 3);
  const Decoder dec(DecoderConfig::paper(), rng);
  std::mt19937_64 g(2);
  EXPECT_EQ(dec.decode(random_tensor({75, 512}, g, 0.1)).size(), 24000u);
}

TEST(Decoder, Deterministic) {
  Rng rng(1, 3);
  const Decoder dec(DecoderConfig::tiny(), rng);
  std::mt19937_64 g(3);
  const Tensor e = random_tensor({6, 32}, g);
  EXPECT_EQ(dec.decode(e).samples, dec.decode(e).samples);
}

TEST(Decoder, FiniteAcrossSeeds) {
  std::mt19937_64 g(4);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed, 3);
    const Decoder dec(DecoderConfig::tiny(), rng);
    ASSERT_NO_THROW({
      const auto y = dec.decode(random_tensor({2, 32}, g, 3.0));
      for (double v : y.samples) ASSERT_TRUE(std::isfinite(v));
    }) << "seed " << seed;
  }
}

TEST(Decoder, RejectsNonFiniteInputAndWrongWidth) {
  Rng rng(0, 3);
  const Decoder dec(DecoderConfig::tiny(), rng);
  Tensor e({3, 32});
  e.at(1, 4) = std::nan("");
  EXPECT_THROW(dec.decode(e), NumericError);
  EXPECT_THROW(dec.decode(Tensor({3, 31})), Error);
}

TEST(Decoder, AttentionMakesOutputOrderSensitive) {
  Rng rng(2, 3);
  const Decoder dec(DecoderConfig::tiny(), rng);
  std::mt19937_64 g(5);
  const Tensor e = random_tensor({12, 32}, g);
  Tensor perm = e;
  for (std::size_t j = 0; j < 32; ++j) std::swap(perm.at(0, j), perm.at(11, j));
  const Tensor a = dec.features(ag::Var(e)).value(), b = dec.features(ag::Var(perm)).value();
  double diff = 0.0;
  for (std::size_t j = 0; j < a.dim(1); ++j) diff += std::abs(a.at(5, j) - b.at(5, j));
  EXPECT_GT(diff, 1e-9);
}

TEST(SpectralHead, ZeroFeaturesAndWeightsGiveUnitBins) {
  Rng rng(0, 3);
  Decoder dec(DecoderConfig::tiny(), rng);
  for (auto& v : dec.head().weight().mutable_value().storage()) v = 0.0;
  for (auto& v : dec.head().bias().mutable_value().storage()) v = 0.0;
  const auto spec = dec.spectral_head(Tensor({4, 64}));
  EXPECT_EQ(spec.frames, 4u);
  EXPECT_EQ(spec.bins, 161u);
  for (std::size_t t = 0; t < spec.frames; ++t)
    for (std::size_t k = 0; k < spec.bins; ++k) {
      EXPECT_EQ(spec.at(t, k).real(), 1.0);
      EXPECT_EQ(spec.at(t, k).imag(), 0.0);
    }
}

TEST(SpectralHead, MagnitudesArePositive) {
  std::mt19937_64 g(6);
  const ag::Var spec = ag::spectral_head(ag::Var(random_tensor({5, 30}, g, 4.0)));
  for (std::size_t i = 0; i < spec.size(); i += 2) {
    const double re = spec.value()[i], im = spec.value()[i + 1];
    EXPECT_GT(re * re + im * im, 0.0);
  }
}

TEST(SpectralHead, WaveformEnergyGradientMatchesFiniteDifferences) {
  std::mt19937_64 g(7);
  const SpectralConfig cfg{16, 4, 0, 8000.0, 0.0, 4000.0};
  Rng rng(3, 3);
  nn::Linear head(6, 3 * cfg.bins(), rng);
  const ag::Var feats(random_tensor({3, 6}, g, 0.3));
  auto build = [&] {
    ag::Var y = ag::istft(ag::spectral_head(head(feats)), cfg);
    return ag::sum(ag::square(y));
  };
  EXPECT_LT(gradient_check({head.weight(), head.bias()}, build), 1e-4);
}

// ---------------------------------------------------------------------------
// losses and discriminators

TEST(MelLoss, ZeroOnIdenticalAndSymmetric) {
  const MelLoss mel(8000.0);
  const auto x = noise(4000, 1), y = noise(4000, 2);
  EXPECT_EQ(mel(x, x), 0.0);
  EXPECT_EQ(mel(x, y), mel(y, x));
  EXPECT_GT(mel(x, y), 0.0);
}

TEST(MelLoss, RejectsLengthMismatch) {
  const MelLoss mel(8000.0);
  EXPECT_THROW(mel(noise(4000, 1), noise(3999, 1)), Error);
}

TEST(MelLoss, ScaleSchedule) {
  const MelLoss mel(8000.0);
  ASSERT_EQ(mel.scale_count(), 6u);
  const std::size_t windows[] = {64, 128, 256, 512, 1024, 2048};
  const std::size_t mels[] = {8, 16, 32, 64, 80, 80};
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(mel.scale(i).fft_size, windows[i]);
    EXPECT_EQ(mel.scale(i).hop, windows[i] / 4);
    EXPECT_EQ(mel.scale(i).mel_bins, mels[i]);
  }
}

TEST(MelLoss, ConstantOffsetMatrices) {
  const Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = a;
  for (auto& v : b.storage()) v += 0.75;
  EXPECT_DOUBLE_EQ(log_mel_distance(a, b), 0.75);
}

TEST(FoldPeriods, ReshapeArithmetic) {
  std::mt19937_64 g(8);
  const ag::Var wave(random_tensor({2310}, g));
  for (std::size_t p : {2u, 3u, 5u, 7u, 11u}) {
    const ag::Var f = fold_periods(wave, p);
    ASSERT_EQ(f.shape(), (Shape{1, 2310 / p, p}));
    EXPECT_EQ(f.value().at(0, 1, 0), wave.value()[p]);
  }
}

class EnsembleTest : public ::testing::Test {
 protected:
  EnsembleTest() : rng_(0, 4), ens_(DiscriminatorConfig::tiny(), rng_) {}
  Rng rng_;
  DiscriminatorEnsemble ens_;
};

TEST_F(EnsembleTest, OneOutputPerSubDiscriminator) {
  const auto x = noise(2400, 1);
  const auto out = ens_(ag::Var(Tensor({x.size()}, x.samples)));
  EXPECT_EQ(out.logits.size(), 5u + 3u * 5u);
  EXPECT_EQ(out.features.size(), out.logits.size());
  for (const auto& f : out.features) EXPECT_FALSE(f.empty());
}

TEST_F(EnsembleTest, DeterministicAndFinite) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto x = noise(600, s);
    const ag::Var v(Tensor({x.size()}, x.samples));
    ag::NoGradGuard guard;
    const auto a = ens_(v), b = ens_(v);
    for (std::size_t i = 0; i < a.logits.size(); ++i) {
      ASSERT_TRUE(all_finite(a.logits[i].value()));
      ASSERT_EQ(a.logits[i].value().storage(), b.logits[i].value().storage());
    }
  }
}

TEST_F(EnsembleTest, RejectsShortInput) {
  EXPECT_THROW(ens_(ag::Var(Tensor({21}))), Error);
}

TEST_F(EnsembleTest, LossGradientsStayInTheirPartition) {
  Rng rng(1, 1);
  nn::Linear gen(4, 4, rng);
  std::mt19937_64 g(9);
  const ag::Var z(random_tensor({150, 4}, g));
  const ag::Var fake = ag::reshape(gen(z), {600});
  const auto real_wave = noise(600, 10);
  const ag::Var real(Tensor({600}, real_wave.samples));
  nn::ParameterList dparams;
  ens_.collect(dparams, "disc");

  nn::set_requires_grad(dparams, false);
  ag::backward(ag::generator_adversarial_loss(ens_(fake)));
  nn::set_requires_grad(dparams, true);
  for (const auto& p : dparams) EXPECT_FALSE(p.var.has_grad()) << p.name;
  EXPECT_TRUE(gen.weight().has_grad());
  gen.weight().zero_grad();
  gen.bias().zero_grad();

  ag::backward(ag::discriminator_loss(ens_(real), ens_(ag::detach(fake))));
  EXPECT_FALSE(gen.weight().has_grad());
  bool any = false;
  for (const auto& p : dparams) any = any || p.var.has_grad();
  EXPECT_TRUE(any);
}

DiscriminatorOutput constant_output(std::vector<double> logits, double feature) {
  DiscriminatorOutput o;
  for (double l : logits) {
    o.logits.push_back(ag::Var(Tensor({2, 3}, l)));
    o.features.push_back({ag::Var(Tensor({4}, feature)), ag::Var(Tensor({2, 2}, feature))});
  }
  return o;
}

TEST(AdversarialLosses, OptimalAndFooled) {
  const auto real = constant_output({1.0, 1.0}, 0.0), fake = constant_output({0.0, 0.0}, 0.0);
  EXPECT_EQ(ag::discriminator_loss(real, fake).item(), 0.0);
  EXPECT_EQ(ag::generator_adversarial_loss(real).item(), 0.0);
}

TEST(AdversarialLosses, ScalarHandValue) {
  DiscriminatorOutput real, fake;
  real.logits.push_back(ag::Var(Tensor::scalar(0.5)));
  fake.logits.push_back(ag::Var(Tensor::scalar(0.25)));
  EXPECT_DOUBLE_EQ(ag::discriminator_loss(real, fake).item(), 0.3125);
  EXPECT_DOUBLE_EQ(ag::generator_adversarial_loss(fake).item(), 0.5625);
}

TEST(FeatureMatching, ConstantOffset) {
  const auto a = constant_output({0.0, 0.0, 0.0}, 1.0), b = constant_output({0.0, 0.0, 0.0}, 1.0 - 0.4);
  EXPECT_EQ(ag::feature_matching_loss(a, a).item(), 0.0);
  EXPECT_NEAR(ag::feature_matching_loss(a, b).item(), 0.4, 1e-15);
}

TEST(FeatureMatching, NonnegativeAndRejectsMismatch) {
  std::mt19937_64 g(11);
  DiscriminatorOutput a, b;
  a.features = {{ag::Var(random_tensor({5}, g))}};
  b.features = {{ag::Var(random_tensor({5}, g))}};
  a.logits = b.logits = {ag::Var(Tensor::scalar(0.0))};
  EXPECT_GE(ag::feature_matching_loss(a, b).item(), 0.0);
  b.features[0][0] = ag::Var(random_tensor({6}, g));
  EXPECT_THROW(ag::feature_matching_loss(a, b), Error);
}

TEST(TotalGeneratorLoss, PaperWeights) {
  const LossWeights w;
  EXPECT_EQ(w.rec, 45.0);
  EXPECT_EQ(w.adv, 1.0);
  EXPECT_EQ(w.feat, 1.0);
  EXPECT_EQ(w.com1, 25.0);
  EXPECT_EQ(w.com2, 5.0);
  EXPECT_EQ(total_generator_loss(LossBreakdown{}, w), 0.0);
  EXPECT_EQ(total_generator_loss(LossBreakdown{1, 1, 1, 1, 1}, w), 77.0);
}

TEST(TotalGeneratorLoss, LinearInEachComponent) {
  const LossWeights w;
  const LossBreakdown base{0.3, 1.7, 0.2, 0.9, 2.5};
  const double t0 = total_generator_loss(base, w);
  const double weights[] = {w.rec, w.adv, w.feat, w.com1, w.com2};
  double LossBreakdown::*fields[] = {&LossBreakdown::rec, &LossBreakdown::adv, &LossBreakdown::feat,
                                     &LossBreakdown::com1, &LossBreakdown::com2};
  for (int i = 0; i < 5; ++i) {
    LossBreakdown p = base;
    p.*fields[i] *= 2.0;
    EXPECT_NEAR(total_generator_loss(p, w) - t0, weights[i] * (base.*fields[i]), 1e-12);
  }
  ag::GeneratorLossTerms terms{ag::Var(Tensor::scalar(1)), ag::Var(Tensor::scalar(1)), ag::Var(Tensor::scalar(1)),
                               ag::Var(Tensor::scalar(1)), ag::Var(Tensor::scalar(1))};
  EXPECT_EQ(ag::total_generator_loss(terms, w).item(), 77.0);
}

}  // namespace
