#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sacodec/discriminators.hpp"
#include "sacodec/signal.hpp"

namespace sacodec {

struct LossWeights {
  double rec = 45.0;
  double adv = 1.0;
  double feat = 1.0;
  double com1 = 25.0;
  double com2 = 5.0;

  void validate() const {
    if (rec < 0 || adv < 0 || feat < 0 || com1 < 0 || com2 < 0) throw Error("loss weights must be nonnegative");
  }
};

struct LossBreakdown {
  double rec = 0.0;
  double adv = 0.0;
  double feat = 0.0;
  double com1 = 0.0;
  double com2 = 0.0;
  double total = 0.0;
  double disc = 0.0;
};

inline double total_generator_loss(const LossBreakdown& p, const LossWeights& w) {
  return w.rec * p.rec + w.adv * p.adv + w.feat * p.feat + w.com1 * p.com1 + w.com2 * p.com2;
}

// Multi-scale log-mel L1 distance.
class MelLoss {
 public:
  MelLoss() = default;
  MelLoss(double sample_rate, std::vector<std::size_t> windows = {64, 128, 256, 512, 1024, 2048}) {
    for (auto w : windows) {
      const std::size_t mels = std::clamp<std::size_t>(w / 8, 5, 80);
      SpectralConfig cfg{w, w / 4, mels, sample_rate, 0.0, sample_rate / 2.0};
      cfg.validate();
      scales_.push_back({cfg, cfg.mel_filterbank()});
    }
  }

  std::size_t scale_count() const noexcept { return scales_.size(); }
  const SpectralConfig& scale(std::size_t i) const { return scales_.at(i).cfg; }

  ag::Var operator()(const ag::Var& x, const ag::Var& y) const {
    if (x.size() != y.size())
      throw Error("mel loss: lengths " + std::to_string(x.size()) + " and " + std::to_string(y.size()) + " differ");
    std::vector<ag::Var> terms;
    for (const auto& s : scales_) terms.push_back(ag::mean_abs(ag::sub(ag::log_mel(x, s.cfg, s.fb), ag::log_mel(y, s.cfg, s.fb))));
    return ag::add_all(terms);
  }

  double operator()(const Waveform& x, const Waveform& y) const {
    ag::NoGradGuard guard;
    return (*this)(ag::Var(Tensor({x.size()}, x.samples)), ag::Var(Tensor({y.size()}, y.samples))).item();
  }

 private:
  struct Scale {
    SpectralConfig cfg;
    Tensor fb;
  };
  std::vector<Scale> scales_;
};

// Mean absolute difference between precomputed log-mel matrices.
inline double log_mel_distance(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "log_mel_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return a.size() ? s / static_cast<double>(a.size()) : 0.0;
}

namespace ag {

// Least-squares GAN terms. Returns {generator, discriminator}.
inline std::pair<Var, Var> adversarial_losses(const DiscriminatorOutput& real, const DiscriminatorOutput& fake) {
  if (real.logits.size() != fake.logits.size()) throw Error("adversarial_losses: ensemble sizes differ");
  std::vector<Var> gen, disc;
  for (std::size_t i = 0; i < real.logits.size(); ++i) {
    gen.push_back(mean_square(add_scalar(fake.logits[i], -1.0)));
    disc.push_back(mean_square(add_scalar(real.logits[i], -1.0)));
    disc.push_back(mean_square(fake.logits[i]));
  }
  return {add_all(gen), add_all(disc)};
}

inline Var generator_adversarial_loss(const DiscriminatorOutput& fake) {
  std::vector<Var> gen;
  for (const auto& l : fake.logits) gen.push_back(mean_square(add_scalar(l, -1.0)));
  return add_all(gen);
}

inline Var discriminator_loss(const DiscriminatorOutput& real, const DiscriminatorOutput& fake) {
  return adversarial_losses(real, fake).second;
}

// Mean over every (sub-discriminator, layer) pair of mean |real - fake|.
// Real features are treated as constants.
inline Var feature_matching_loss(const DiscriminatorOutput& real, const DiscriminatorOutput& fake) {
  if (real.features.size() != fake.features.size()) throw Error("feature_matching_loss: ensemble sizes differ");
  std::vector<Var> terms;
  for (std::size_t d = 0; d < real.features.size(); ++d) {
    if (real.features[d].size() != fake.features[d].size())
      throw Error("feature_matching_loss: layer counts differ for sub-discriminator " + std::to_string(d));
    for (std::size_t l = 0; l < real.features[d].size(); ++l) {
      require_same_shape(real.features[d][l].value(), fake.features[d][l].value(), "feature_matching_loss");
      terms.push_back(mean_abs(sub(detach(real.features[d][l]), fake.features[d][l])));
    }
  }
  if (terms.empty()) return Var(Tensor::scalar(0.0));
  return scale(add_all(terms), 1.0 / static_cast<double>(terms.size()));
}

struct GeneratorLossTerms {
  Var rec, adv, feat, com1, com2;
};

inline Var total_generator_loss(const GeneratorLossTerms& t, const LossWeights& w) {
  return add_all({scale(t.rec, w.rec), scale(t.adv, w.adv), scale(t.feat, w.feat), scale(t.com1, w.com1),
                  scale(t.com2, w.com2)});
}

}  // namespace ag

}  // namespace sacodec
