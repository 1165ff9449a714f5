// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "sacodec/sacodec.hpp"
#include "test_support.hpp"

namespace {

using namespace sacodec;
using sacodec::testing::numeric_gradient;
using sacodec::testing::random_tensor;
using sacodec::testing::relative_error;

constexpr std::uint64_t kSeeds[] = {0, 1, 2};
constexpr std::size_t kSteps = 200;
constexpr std::size_t kProbeClips = 80;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream o;
  o.precision(precision);
  o << v;
  return o.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------
// Training runs, shared between criteria

struct Run {
  double semantic_used = 0.0, residual_used = 0.0;
  double probe = 0.0;
  std::string probe_stream;
  double mel_before = 0.0, mel_after = 0.0;
  double first_rec = 0.0, last_rec = 0.0;
  bool frozen_unchanged = false;
  bool optimizers_exclude_frozen = false;
  double seconds = 0.0;
};

const Tensor& tiny_codebook() {
  static const Tensor c = load_semantic_codebook(TrainConfig::for_profile(Profile::tiny));
  return c;
}

Run train(std::uint64_t seed, const std::string& variant) {
  static std::map<std::pair<std::uint64_t, std::string>, Run> cache;
  const auto key = std::make_pair(seed, variant);
  if (auto it = cache.find(key); it != cache.end()) return it->second;

  const auto t0 = Clock::now();
  TrainConfig cfg = TrainConfig::for_profile(Profile::tiny);
  cfg.seed = seed;
  cfg.steps = kSteps;
  if (variant != "full") cfg.set(variant, "true");
  Trainer trainer(cfg, corpus_for(cfg), tiny_codebook());

  Run run;
  std::vector<std::uint64_t> frozen_before;
  for (const auto& p : trainer.codec().frozen_arrays()) frozen_before.push_back(tensor_checksum(p.var.value()));
  run.mel_before = reconstruction_mel_distance(trainer.corpus(), trainer.codec());
  const auto records = trainer.fit();
  run.first_rec = records.front().losses.rec;
  run.last_rec = records.back().losses.rec;
  run.mel_after = reconstruction_mel_distance(trainer.corpus(), trainer.codec());

  run.frozen_unchanged = true;
  std::size_t i = 0;
  for (const auto& p : trainer.codec().frozen_arrays())
    run.frozen_unchanged = run.frozen_unchanged && tensor_checksum(p.var.value()) == frozen_before[i++];
  run.optimizers_exclude_frozen = true;
  for (const auto* opt : {&trainer.generator_optimizer(), &trainer.discriminator_optimizer()})
    for (const auto& p : opt->parameters())
      for (const auto& f : trainer.codec().frozen_arrays())
        if (p.var.node() == f.var.node()) run.optimizers_exclude_frozen = false;

  const auto u = utilization_report(trainer.corpus(), trainer.codec());
  run.semantic_used = u.semantic.used_fraction;
  run.residual_used = u.residual.used_fraction;
  const auto probe = semantic_probe(synthetic_corpus(kProbeClips, seed + 1000, trainer.codec().config().sample_rate()),
                                    trainer.codec());
  run.probe = probe.accuracy;
  run.probe_stream = probe.stream;
  run.seconds = seconds_since(t0);
  cache[key] = run;
  return run;
}

// ---------------------------------------------------------------------------
// Criteria

Outcome bitrate_identity() {
  const ModelConfig m = model_config(Profile::paper);
  const double rate = m.frame_rate();
  const auto both = nominal_bitrate(rate, m.quantizer.k1, m.quantizer.k2);
  const auto semantic = nominal_bitrate(rate, m.quantizer.k1, 1);
  const bool pass = rate == 75.0 && both.semantic_bits + both.residual_bits == 20 && both.nominal_kbps == 1.5 &&
                    semantic.nominal_kbps == 0.75 && both.semantic_kbps == 0.75;
  return {pass, fmt(rate) + " Hz x " + std::to_string(both.semantic_bits + both.residual_bits) + " bits = " +
                    fmt(both.nominal_kbps) + " kbps; semantic stream " + fmt(semantic.nominal_kbps) + " kbps"};
}

Outcome frozen_discipline() {
  const Run r = train(0, "full");
  return {r.frozen_unchanged && r.optimizers_exclude_frozen,
          std::string("C_sem/C_coeff checksums ") + (r.frozen_unchanged ? "unchanged" : "CHANGED") +
              " after " + std::to_string(kSteps) + " steps; optimizers " +
              (r.optimizers_exclude_frozen ? "exclude" : "INCLUDE") + " frozen arrays"};
}

int brute_force(const Tensor& codebook, const Tensor& q, std::size_t row) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < codebook.dim(0); ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < codebook.dim(1); ++j) s += (q.at(row, j) - codebook.at(k, j)) * (q.at(row, j) - codebook.at(k, j));
    if (s < best_d) {
      best_d = s;
      best = static_cast<int>(k);
    }
  }
  return best;
}

Outcome quantizer_oracle() {
  std::size_t checked = 0, mismatches = 0;
  std::mt19937_64 rng(31);
  for (std::size_t k : {1, 2, 17, 64, 256}) {
    QuantizerConfig c;
    c.k1 = k;
    c.semantic_dim = 12;
    c.k2 = k;
    c.latent_dim = 16;
    Rng qrng(k, 2);
    DualQuantizer q(c, random_tensor({k, 12}, rng), qrng);
    // move away from the initial projector and basis
    for (auto& v : q.projector_weight().mutable_value().storage()) v += 0.3 * std::normal_distribution<double>()(rng);
    for (auto& v : q.projector_bias().mutable_value().storage()) v = 0.5 * std::normal_distribution<double>()(rng);
    for (auto& v : q.basis().mutable_value().storage()) v += 0.3 * std::normal_distribution<double>()(rng);

    // independent affine and product oracles for C1 and C2
    const Tensor& cs = q.frozen_semantic();
    const Tensor& w = q.projector_weight().value();
    const Tensor& b = q.projector_bias().value();
    Tensor c1({k, 16}), c2({k, 16});
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t o = 0; o < 16; ++o) {
        double s = b[o];
        for (std::size_t j = 0; j < 12; ++j) s += w.at(o, j) * cs.at(i, j);
        c1.at(i, o) = s;
        double t = 0.0;
        for (std::size_t j = 0; j < 16; ++j) t += q.frozen_coefficients().at(i, j) * q.basis().value().at(j, o);
        c2.at(i, o) = t;
      }

    const Tensor h = random_tensor({1000, 16}, rng, 2.0);
    const auto res = q.quantize(h);
    Tensor r({1000, 16});
    for (std::size_t t = 0; t < 1000; ++t) {
      const int s = brute_force(c1, h, t);
      mismatches += res.semantic_indices[t] != s;
      for (std::size_t j = 0; j < 16; ++j) r.at(t, j) = h.at(t, j) - c1.at(static_cast<std::size_t>(s), j);
    }
    for (std::size_t t = 0; t < 1000; ++t) mismatches += res.residual_indices[t] != brute_force(c2, r, t);
    checked += 2000;
  }
  return {mismatches == 0, std::to_string(checked) + " selections over K in {1,2,17,64,256}, " +
                               std::to_string(mismatches) + " mismatches"};
}

double mse(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

Outcome gradient_correctness() {
  std::mt19937_64 rng(41);
  QuantizerConfig c;
  c.k1 = 10;
  c.semantic_dim = 5;
  c.k2 = 12;
  c.latent_dim = 4;
  Rng qrng(7, 2);
  DualQuantizer q(c, random_tensor({10, 5}, rng), qrng);
  for (auto& v : q.basis().mutable_value().storage()) v += 0.2 * std::normal_distribution<double>()(rng);
  ag::Var h = ag::Var::parameter(random_tensor({6, 4}, rng));

  for (auto* p : {&q.projector_weight(), &q.projector_bias(), &q.basis()}) p->zero_grad();
  const auto out = q.forward(h);
  ag::backward(out.commit1);
  const Tensor gw = q.projector_weight().grad();
  const auto sem = out.semantic_indices;
  ag::backward(out.commit2);
  const Tensor gbasis = q.basis().grad();

  auto c1_rows = [&] {
    Tensor c1 = project_semantic_codebook(q.frozen_semantic(), q.projector_weight().value(), q.projector_bias().value());
    return gather(c1, nearest_indices(h.value(), c1));
  };
  const Tensor fd_w = numeric_gradient(q.projector_weight(), [&] { return mse(h.value(), c1_rows()); });
  const double err_w = relative_error(gw, fd_w);

  Tensor r = h.value();
  {
    const Tensor e1 = c1_rows();
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= e1[i];
  }
  const Tensor fd_basis = numeric_gradient(q.basis(), [&] {
    const Tensor c2 = effective_residual_codebook(q.frozen_coefficients(), q.basis().value());
    return mse(r, gather(c2, nearest_indices(r, c2)));
  });
  const double err_basis = relative_error(gbasis, fd_basis);

  // Straight-through: the gradient reaching h is the downstream gradient at
  // the quantized point.
  const Tensor e1 = random_tensor({6, 4}, rng), e2 = random_tensor({6, 4}, rng, 0.3);
  const Tensor weights = random_tensor({6, 4}, rng);
  auto downstream = [&](const ag::Var& z) { return ag::sum(ag::mul(ag::tanh(ag::mul(z, ag::Var(weights))), z)); };
  h.zero_grad();
  ag::backward(downstream(ag::fuse_and_passthrough(h, e1, e2)));
  ag::Var z = ag::Var::parameter(add_codes(e1, e2));
  const Tensor fd_z = numeric_gradient(z, [&] {
    ag::NoGradGuard guard;
    return downstream(z).item();
  });
  const double err_st = relative_error(h.grad(), fd_z);

  const double worst = std::max({err_w, err_basis, err_st});
  return {worst < 1e-4, "relative error L_com1/P_sem " + fmt(err_w, 3) + ", L_com2/W_basis " + fmt(err_basis, 3) +
                            ", straight-through/h " + fmt(err_st, 3) + " (limit 1e-4)"};
}

Outcome istft_round_trip() {
  std::vector<SpectralConfig> windows;
  for (Profile p : {Profile::tiny, Profile::paper}) {
    const ModelConfig m = model_config(p);
    windows.push_back(m.decoder.head);
    const MelLoss mel(m.sample_rate());
    for (std::size_t i = 0; i < mel.scale_count(); ++i) windows.push_back(mel.scale(i));
    for (auto n : m.discriminator.fft_sizes) windows.push_back({n, n / 4, 0, double(m.sample_rate()), 0.0, m.sample_rate() / 2.0});
  }
  std::mt19937_64 rng(51);
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& cfg : windows) {
    for (std::size_t len : {cfg.fft_size + 3 * cfg.hop + 7, std::size_t{12000}}) {
      Waveform x{std::vector<double>(len), static_cast<std::uint32_t>(cfg.sample_rate)};
      std::normal_distribution<double> d;
      for (auto& v : x.samples) v = d(rng);
      const Waveform y = istft(stft(x, cfg));
      double sig = 0.0, err = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        sig += x.samples[i] * x.samples[i];
        err += (x.samples[i] - y.samples[i]) * (x.samples[i] - y.samples[i]);
      }
      worst = std::min(worst, 10.0 * std::log10(sig / std::max(err, 1e-300)));
    }
  }
  return {worst > 40.0, std::to_string(windows.size()) + " configured windows, worst SNR " + fmt(worst) + " dB (need > 40)"};
}

Outcome projection_vs_direct() {
  std::string detail;
  double worst = std::numeric_limits<double>::infinity();
  for (auto seed : kSeeds) {
    const Run proj = train(seed, "full"), direct = train(seed, "q1_direct_lookup");
    const double ratio = direct.semantic_used > 0 ? proj.semantic_used / direct.semantic_used
                                                  : std::numeric_limits<double>::infinity();
    worst = std::min(worst, ratio);
    detail += "seed " + std::to_string(seed) + " " + fmt(proj.semantic_used, 3) + "/" + fmt(direct.semantic_used, 3) +
              " = " + fmt(ratio, 3) + "x; ";
  }
  return {worst >= 5.0, "semantic used_fraction projection/direct: " + detail + "min " + fmt(worst, 3) + "x (need >= 5)"};
}

Outcome residual_activation() {
  // one step on the basis moves every residual codeword
  const ModelConfig m = model_config(Profile::tiny);
  Rng qrng(3, 2);
  DualQuantizer q(m.quantizer, tiny_codebook(), qrng);
  std::mt19937_64 rng(61);
  const Tensor before = q.residual_codebook();
  const auto out = q.forward(ag::Var(random_tensor({4, m.quantizer.latent_dim}, rng)));
  ag::backward(out.commit2);
  Tensor& w = q.basis().mutable_value();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= 1e-3 * q.basis().grad()[i];
  const Tensor after = q.residual_codebook();
  std::size_t moved = 0;
  for (std::size_t k = 0; k < before.dim(0); ++k) {
    double d = 0.0;
    for (std::size_t j = 0; j < before.dim(1); ++j) d = std::max(d, std::abs(after.at(k, j) - before.at(k, j)));
    moved += d > 0.0;
  }
  bool pass = moved == before.dim(0);
  std::string detail = std::to_string(moved) + "/" + std::to_string(before.dim(0)) +
                       " codewords moved by one step on 4 selected frames; residual used_fraction learned-basis/plain-VQ: ";
  for (auto seed : kSeeds) {
    const Run full = train(seed, "full"), plain = train(seed, "q2_plain_vq");
    pass = pass && full.residual_used > plain.residual_used;
    if (!detail.empty() && detail.back() != ' ') detail += "; ";
    detail += "seed " + std::to_string(seed) + " " + fmt(full.residual_used, 3) + "/" + fmt(plain.residual_used, 3);
  }
  return {pass, detail};
}

Outcome convergence() {
  const Run r = train(0, "full");
  return {r.mel_after <= 0.5 * r.mel_before,
          "corpus mel distance untrained " + fmt(r.mel_before) + " -> " + fmt(r.mel_after) + " after " +
              std::to_string(kSteps) + " steps (ratio " + fmt(r.mel_after / r.mel_before, 3) +
              ", need <= 0.5); training mel loss step 1 " + fmt(r.first_rec) + " -> step " + std::to_string(kSteps) +
              " " + fmt(r.last_rec)};
}

Outcome ablation_directionality() {
  bool pass = true;
  std::string detail;
  for (auto seed : kSeeds) {
    const Run full = train(seed, "full"), no_q1 = train(seed, "no_q1"), no_q2 = train(seed, "no_q2");
    pass = pass && no_q1.probe < full.probe && no_q2.mel_after > full.mel_after;
    if (!detail.empty() && detail.back() != ' ') detail += "; ";
    detail += "seed " + std::to_string(seed) + ": probe full " + fmt(full.probe, 3) + " vs no-q1 " +
              fmt(no_q1.probe, 3) + " (" + no_q1.probe_stream + "), mel full " + fmt(full.mel_after) + " vs no-q2 " +
              fmt(no_q2.mel_after);
  }
  return {pass, detail};
}

Outcome bitstream_round_trip() {
  std::size_t failures = 0;
  TokenSequence s;
  s.header.sample_rate = 8000;
  s.header.frame_rate = 100;
  s.header.k1 = s.header.k2 = 8;
  for (int a = 0; a < 8; ++a)
    for (int b = 0; b < 8; ++b) {
      s.semantic.push_back(a);
      s.residual.push_back(b);
    }
  s.header.num_frames = 64;
  s.header.original_length = 6400;
  failures += !(unpack_tokens(pack_tokens(s)) == s);
  const std::string bytes = pack_tokens(s);
  failures += pack_tokens(unpack_tokens(bytes)) != bytes;

  std::mt19937_64 rng(71);
  std::uniform_int_distribution<int> a(0, 999), b(0, 1023);
  std::uniform_int_distribution<std::uint32_t> frames(0, 100);
  std::uniform_int_distribution<std::uint64_t> sum;
  for (int i = 0; i < 10000; ++i) {
    TokenSequence p;
    p.header.sample_rate = 24000;
    p.header.frame_rate = 75;
    p.header.k1 = 1000;
    p.header.k2 = 1024;
    p.header.num_frames = frames(rng);
    p.header.original_length = p.header.num_frames * 320ULL;
    p.header.model_checksum = sum(rng);
    for (std::uint32_t t = 0; t < p.header.num_frames; ++t) {
      p.semantic.push_back(a(rng));
      p.residual.push_back(b(rng));
    }
    const std::string packed = pack_tokens(p);
    failures += !(unpack_tokens(packed) == p) || packed.size() != 38 + (p.header.num_frames * 20 + 7) / 8;
  }
  return {failures == 0, "exhaustive 8x8 plus 10000 random paper-profile sequences, " + std::to_string(failures) + " failures"};
}

Outcome loss_arithmetic() {
  const LossWeights w;
  bool pass = total_generator_loss(LossBreakdown{1, 1, 1, 1, 1}, w) == 77.0;
  const LossBreakdown base{0.3, 1.7, 0.2, 0.9, 2.5};
  const double t0 = total_generator_loss(base, w);
  const double weights[] = {w.rec, w.adv, w.feat, w.com1, w.com2};
  double LossBreakdown::*fields[] = {&LossBreakdown::rec, &LossBreakdown::adv, &LossBreakdown::feat,
                                     &LossBreakdown::com1, &LossBreakdown::com2};
  for (int i = 0; i < 5; ++i) {
    LossBreakdown p = base;
    p.*fields[i] += 1.0;
    pass = pass && std::abs(total_generator_loss(p, w) - t0 - weights[i]) < 1e-12;
  }
  return {pass, "all-ones total " + fmt(total_generator_loss(LossBreakdown{1, 1, 1, 1, 1}, w)) +
                    " (expect 77); unit increments add 45/1/1/25/5"};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "bitrate identity", 1, bitrate_identity},
      {2, "frozen-codebook discipline", 120, frozen_discipline},
      {3, "quantizer oracle equivalence", 60, quantizer_oracle},
      {4, "gradient correctness", 60, gradient_correctness},
      {5, "istft round trip", 60, istft_round_trip},
      {6, "projection vs direct lookup utilization", 1800, projection_vs_direct},
      {7, "residual full activation", 1800, residual_activation},
      {8, "convergence", 600, convergence},
      {9, "ablation directionality", 2700, ablation_directionality},
      {10, "bitstream round trip", 60, bitstream_round_trip},
      {11, "loss arithmetic", 1, loss_arithmetic},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    const bool in_budget = secs <= c.budget_seconds;
    const bool pass = o.pass && in_budget;
    failed += !pass;
    std::printf("criterion %2d %s  %s: %s [%.1f s%s]\n", c.id, pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs,
                in_budget ? "" : ", over budget");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
