#pragma once

// Adversarial training loop: one discriminator update on (real, detached
// fake), then one generator update on the weighted objective.

#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sacodec/checkpoint.hpp"
#include "sacodec/corpus.hpp"
#include "sacodec/losses.hpp"

namespace sacodec {

struct StepRecord {
  std::size_t step = 0;
  double learning_rate = 0.0;
  LossBreakdown losses;
  Utilization semantic, residual;
};

inline nlohmann::json to_json(const StepRecord& r) {
  return {{"step", r.step},
          {"lr", r.learning_rate},
          {"rec", r.losses.rec},
          {"adv", r.losses.adv},
          {"feat", r.losses.feat},
          {"com1", r.losses.com1},
          {"com2", r.losses.com2},
          {"total", r.losses.total},
          {"disc", r.losses.disc},
          {"semantic_used", r.semantic.used_fraction},
          {"semantic_perplexity", r.semantic.perplexity},
          {"residual_used", r.residual.used_fraction},
          {"residual_perplexity", r.residual.perplexity}};
}

inline void require_finite_loss(double v, const char* component) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite loss component ") + component);
}

class Trainer {
 public:
  Trainer(TrainConfig cfg, Corpus corpus, Tensor semantic_codebook)
      : cfg_(std::move(cfg)), corpus_(std::move(corpus)) {
    cfg_.validate();
    const std::size_t dim = semantic_codebook.dim(1);
    codec_ = std::make_unique<Codec>(model_config(cfg_, dim), std::move(semantic_codebook), cfg_.seed);
    init();
  }

  // Continues from a saved state; the corpus must be supplied again.
  Trainer(const Checkpoint& ckpt, Corpus corpus) : cfg_(ckpt.config), corpus_(std::move(corpus)) {
    codec_ = std::make_unique<Codec>(restore_codec(ckpt));
    init();
    step_ = ckpt.step;
    if (ckpt.generator_steps) restore_optimizer(ckpt, gen_opt_, "gen", ckpt.generator_steps);
    if (ckpt.discriminator_steps) restore_optimizer(ckpt, disc_opt_, "disc", ckpt.discriminator_steps);
  }

  const TrainConfig& config() const noexcept { return cfg_; }
  TrainConfig& config() noexcept { return cfg_; }
  const Codec& codec() const noexcept { return *codec_; }
  Codec& codec() noexcept { return *codec_; }
  const AdamW& generator_optimizer() const noexcept { return gen_opt_; }
  const AdamW& discriminator_optimizer() const noexcept { return disc_opt_; }
  std::size_t step() const noexcept { return step_; }
  const Corpus& corpus() const noexcept { return corpus_; }

  // Keeps the discriminator fixed (no updates) when set.
  void freeze_discriminator(bool on) { freeze_disc_ = on; }

  std::size_t crop_samples() const { return cfg_.crop_samples(codec_->config().sample_rate()); }

  // Crops for a given step depend only on (seed, step).
  std::vector<Waveform> batch_for_step(std::size_t step) const {
    Rng rng(cfg_.seed ^ 0x9e3779b97f4a7c15ULL, step);
    std::vector<Waveform> batch;
    for (std::size_t b = 0; b < cfg_.batch_size; ++b) batch.push_back(sample_crop(corpus_, crop_samples(), rng));
    return batch;
  }

  StepRecord train_step(const std::vector<Waveform>& batch) {
    if (batch.empty()) throw Error("train_step: empty batch");
    StepRecord rec;
    rec.step = step_ + 1;
    rec.learning_rate = cosine_learning_rate(cfg_.learning_rate, step_, cfg_.steps);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const auto& w = cfg_.weights;
    const bool adversarial = w.adv > 0.0 || w.feat > 0.0;
    const auto& disc = codec_->discriminator();

    struct Forward {
      ag::Var real, fake;
      QuantizerOutput q;
    };
    std::vector<Forward> fwd;
    std::vector<int> sem_all, res_all;
    for (const auto& clip : batch) {
      Forward f;
      f.real = ag::Var(Tensor({clip.size()}, clip.samples));
      ag::Var h = codec_->encoder().forward(f.real);
      f.q = codec_->quantizer().forward(h);
      ag::Var y = codec_->decoder().forward(f.q.decoder_input);
      f.fake = y.size() == clip.size() ? y : ag::slice_cols(ag::reshape(y, {1, y.size()}), 0, clip.size());
      f.fake = ag::reshape(f.fake, {clip.size()});
      sem_all.insert(sem_all.end(), f.q.semantic_indices.begin(), f.q.semantic_indices.end());
      res_all.insert(res_all.end(), f.q.residual_indices.begin(), f.q.residual_indices.end());
      fwd.push_back(std::move(f));
    }

    // Discriminator update on detached fakes.
    if (adversarial) {
      disc_opt_.zero_grad();
      std::vector<ag::Var> terms;
      for (const auto& f : fwd) terms.push_back(ag::discriminator_loss(disc(f.real), disc(ag::detach(f.fake))));
      ag::Var ld = ag::scale(ag::add_all(terms), inv_b);
      rec.losses.disc = ld.item();
      require_finite_loss(rec.losses.disc, "disc");
      if (!freeze_disc_) {
        ag::backward(ld);
        disc_opt_.step(rec.learning_rate);
      }
      disc_opt_.zero_grad();
    }

    // Generator update; discriminator weights are constants here.
    nn::set_requires_grad(disc_opt_.parameters(), false);
    std::vector<ag::Var> rec_t, adv_t, feat_t, c1_t, c2_t;
    for (const auto& f : fwd) {
      rec_t.push_back(mel_(f.real, f.fake));
      c1_t.push_back(f.q.commit1);
      c2_t.push_back(f.q.commit2);
      if (adversarial) {
        DiscriminatorOutput real_out;
        {
          ag::NoGradGuard guard;
          real_out = disc(f.real);
        }
        DiscriminatorOutput fake_out = disc(f.fake);
        adv_t.push_back(ag::generator_adversarial_loss(fake_out));
        feat_t.push_back(ag::feature_matching_loss(real_out, fake_out));
      } else {
        adv_t.push_back(ag::Var(Tensor::scalar(0.0)));
        feat_t.push_back(ag::Var(Tensor::scalar(0.0)));
      }
    }
    nn::set_requires_grad(disc_opt_.parameters(), true);
    auto avg = [&](const std::vector<ag::Var>& v) { return ag::scale(ag::add_all(v), inv_b); };
    ag::GeneratorLossTerms terms{avg(rec_t), avg(adv_t), avg(feat_t), avg(c1_t), avg(c2_t)};
    ag::Var total = ag::total_generator_loss(terms, w);
    auto& l = rec.losses;
    l.rec = terms.rec.item();
    l.adv = terms.adv.item();
    l.feat = terms.feat.item();
    l.com1 = terms.com1.item();
    l.com2 = terms.com2.item();
    l.total = total.item();
    require_finite_loss(l.rec, "rec");
    require_finite_loss(l.adv, "adv");
    require_finite_loss(l.feat, "feat");
    require_finite_loss(l.com1, "com1");
    require_finite_loss(l.com2, "com2");
    require_finite_loss(l.total, "total");
    gen_opt_.zero_grad();
    ag::backward(total);
    gen_opt_.step(rec.learning_rate);
    gen_opt_.zero_grad();

    const auto& q = codec_->config().quantizer;
    rec.semantic = utilization_stats(sem_all, q.stream_k1());
    rec.residual = utilization_stats(res_all, q.stream_k2());
    ++step_;
    return rec;
  }

  // Runs the remaining steps up to cfg.steps. `on_step` sees every record.
  std::vector<StepRecord> fit(const std::function<void(const StepRecord&)>& on_step = {}) {
    std::unique_ptr<std::ofstream> log;
    if (!cfg_.log_path.empty()) {
      log = std::make_unique<std::ofstream>(cfg_.log_path, step_ == 0 ? std::ios::trunc : std::ios::app);
      if (!*log) throw Error("cannot open training log " + cfg_.log_path);
    }
    std::vector<StepRecord> records;
    while (step_ < cfg_.steps) {
      StepRecord r = train_step(batch_for_step(step_));
      if (log && cfg_.log_every && (r.step % cfg_.log_every == 0 || r.step == cfg_.steps)) {
        nlohmann::json j = to_json(r);
        if (cfg_.eval_every && r.step % cfg_.eval_every == 0) j["eval"] = evaluate();
        *log << j.dump() << "\n";
        log->flush();
      }
      if (!cfg_.checkpoint_path.empty() && cfg_.checkpoint_every && r.step % cfg_.checkpoint_every == 0)
        save(cfg_.checkpoint_path);
      if (on_step) on_step(r);
      records.push_back(r);
    }
    if (!cfg_.checkpoint_path.empty()) save(cfg_.checkpoint_path);
    return records;
  }

  // Validation over the whole corpus: mean multi-scale mel distance and
  // per-stream utilization.
  nlohmann::json evaluate() const {
    double mel = 0.0;
    std::vector<int> sem, res;
    for (const auto& clip : corpus_.clips) {
      auto qr = codec_->quantize(codec_->encode(clip));
      Waveform y = codec_->decode(qr.e_final);
      y.samples.resize(clip.size());
      mel += mel_(clip, y);
      sem.insert(sem.end(), qr.semantic_indices.begin(), qr.semantic_indices.end());
      res.insert(res.end(), qr.residual_indices.begin(), qr.residual_indices.end());
    }
    const auto& q = codec_->config().quantizer;
    const auto su = utilization_stats(sem, q.stream_k1()), ru = utilization_stats(res, q.stream_k2());
    return {{"mel_distance", mel / static_cast<double>(corpus_.size())},
            {"semantic_used", su.used_fraction},
            {"residual_used", ru.used_fraction}};
  }

  Checkpoint checkpoint() const { return make_checkpoint(cfg_, *codec_, step_, &gen_opt_, &disc_opt_); }
  void save(const std::string& path) const { save_checkpoint(path, checkpoint()); }

 private:
  void init() {
    if (corpus_.clips.empty()) throw Error("trainer: empty corpus");
    if (corpus_.sample_rate != codec_->config().sample_rate())
      throw ConfigMismatch("trainer: corpus sample rate " + std::to_string(corpus_.sample_rate) +
                           " does not match model rate " + std::to_string(codec_->config().sample_rate()));
    AdamWConfig oc{cfg_.learning_rate, cfg_.beta1, cfg_.beta2, cfg_.weight_decay};
    gen_opt_ = AdamW(codec_->generator_parameters(), oc);
    disc_opt_ = AdamW(codec_->discriminator_parameters(), oc);
    mel_ = MelLoss(codec_->config().sample_rate());
  }

  TrainConfig cfg_;
  Corpus corpus_;
  std::unique_ptr<Codec> codec_;
  AdamW gen_opt_, disc_opt_;
  MelLoss mel_;
  std::size_t step_ = 0;
  bool freeze_disc_ = false;
};

// Corpus named by a config: a WAV directory, or the synthetic vowel set.
inline Corpus corpus_for(const TrainConfig& cfg, bool allow_resample = false) {
  const ModelConfig m = model_config(cfg.profile);
  if (!cfg.corpus.empty()) return load_wav_directory(cfg.corpus, m.sample_rate(), allow_resample);
  return synthetic_corpus(cfg.corpus_clips, cfg.seed, m.sample_rate());
}

}  // namespace sacodec
