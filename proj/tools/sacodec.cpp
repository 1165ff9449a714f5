#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>

#include "sacodec/sacodec.hpp"

using namespace sacodec;
using nlohmann::json;

namespace {

struct Options {
  std::string config_path, checkpoint, out, profile;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k2, steps;
  bool no_q1 = false, no_q2 = false, q1_random_learnable = false;
  std::vector<std::string> sets;
  bool resample = false;
  bool override_checksum = false;
  bool resume = false;
  std::string input, output, tokens, corpus, log_path;
  std::string stream = "semantic";
  std::size_t probe_clips = 80;
  bool shuffle_labels = false;
};

void emit(const json& doc, const std::string& out) {
  if (out.empty()) {
    std::cout << doc.dump(2) << "\n";
    return;
  }
  std::ofstream f(out);
  if (!f) throw Error("cannot write report " + out);
  f << doc.dump(2) << "\n";
}

// Config from file, then command-line overrides.
TrainConfig build_config(const Options& o) {
  KeyValues kv;
  if (!o.config_path.empty()) kv = read_key_values(o.config_path);
  if (!o.profile.empty()) kv["profile"] = o.profile;
  TrainConfig c = TrainConfig::from_key_values(kv);
  if (o.seed) c.seed = *o.seed;
  if (o.k2) c.k2 = *o.k2;
  if (o.steps) c.steps = *o.steps;
  if (o.no_q1) c.no_q1 = true;
  if (o.no_q2) c.no_q2 = true;
  if (o.q1_random_learnable) c.q1_random_learnable = true;
  if (!o.corpus.empty()) c.corpus = o.corpus;
  if (!o.log_path.empty()) c.log_path = o.log_path;
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error("--set expects key=value, got '" + s + "'");
    c.set(s.substr(0, eq), s.substr(eq + 1));
  }
  c.validate();
  return c;
}

bool model_flags_given(const Options& o) {
  return o.seed || o.k2 || o.no_q1 || o.no_q2 || o.q1_random_learnable || !o.sets.empty() || !o.config_path.empty();
}

// A checkpoint when given, otherwise an untrained model from the config.
Codec load_model(const Options& o, TrainConfig* used = nullptr) {
  if (o.checkpoint.empty()) {
    const TrainConfig c = build_config(o);
    if (used) *used = c;
    return Codec(model_config(c, 0), load_semantic_codebook(c), c.seed);
  }
  std::optional<Profile> expected;
  if (!o.profile.empty()) expected = parse_profile(o.profile);
  const Checkpoint ck = load_checkpoint(o.checkpoint, expected);
  if (model_flags_given(o))
    std::cerr << "warning: model flags are ignored when a checkpoint is loaded\n";
  if (used) *used = ck.config;
  return restore_codec(ck);
}

json to_json(const Utilization& u) { return {{"used_fraction", u.used_fraction}, {"perplexity", u.perplexity}}; }

json to_json(const BitrateReport& r) {
  return {{"frame_rate", r.frame_rate},
          {"semantic_bits", r.semantic_bits},
          {"residual_bits", r.residual_bits},
          {"nominal_kbps", r.nominal_kbps},
          {"semantic_kbps", r.semantic_kbps},
          {"residual_kbps", r.residual_kbps},
          {"semantic_entropy_kbps", r.semantic_entropy_kbps},
          {"residual_entropy_kbps", r.residual_entropy_kbps}};
}

int run_train(const Options& o) {
  std::unique_ptr<Trainer> trainer;
  TrainConfig cfg;
  if (o.resume) {
    if (o.checkpoint.empty()) throw Error("--resume needs --checkpoint");
    Checkpoint ck = load_checkpoint(o.checkpoint);
    if (o.steps) ck.config.steps = *o.steps;
    ck.config.checkpoint_path = o.checkpoint;
    if (!o.log_path.empty()) ck.config.log_path = o.log_path;
    cfg = ck.config;
    trainer = std::make_unique<Trainer>(ck, corpus_for(cfg, o.resample));
  } else {
    cfg = build_config(o);
    if (!o.checkpoint.empty()) cfg.checkpoint_path = o.checkpoint;
    trainer = std::make_unique<Trainer>(cfg, corpus_for(cfg, o.resample), load_semantic_codebook(cfg));
  }
  const json before = trainer->evaluate();
  const auto records = trainer->fit();
  json doc{{"profile", to_string(cfg.profile)},
           {"seed", cfg.seed},
           {"steps", trainer->step()},
           {"initial_eval", before},
           {"final_eval", trainer->evaluate()}};
  if (!records.empty()) {
    doc["first_step"] = sacodec::to_json(records.front());
    doc["last_step"] = sacodec::to_json(records.back());
  }
  if (!cfg.checkpoint_path.empty()) doc["checkpoint"] = cfg.checkpoint_path;
  emit(doc, o.out);
  return 0;
}

int run_encode(const Options& o) {
  const Codec codec = load_model(o);
  const EncodeSummary s = encode_file(o.input, codec, o.output, o.resample);
  emit({{"input", o.input},
        {"output", o.output},
        {"num_frames", s.num_frames},
        {"payload_bits", s.payload_bits},
        {"file_bytes", s.file_bytes},
        {"duration_seconds", s.duration_seconds},
        {"kbps", s.kbps},
        {"nominal_kbps", s.nominal_kbps}},
       o.out);
  return 0;
}

int run_decode(const Options& o) {
  const Codec codec = load_model(o);
  std::string warning;
  const Waveform y = decode_file(o.input, codec, o.output, {o.override_checksum}, &warning);
  if (!warning.empty()) std::cerr << "warning: " << warning << "\n";
  json doc{{"input", o.input}, {"output", o.output}, {"samples", y.samples.size()}, {"sample_rate", y.sample_rate}};
  if (!warning.empty()) doc["warning"] = warning;
  emit(doc, o.out);
  return 0;
}

int run_report(const Options& o) {
  json doc;
  if (!o.tokens.empty()) {
    const TokenSequence seq = read_tokens(o.tokens);
    doc["tokens"] = o.tokens;
    doc["num_frames"] = seq.frames();
    doc["bitrate"] = to_json(bitrate_report(seq));
    if (o.checkpoint.empty() && !model_flags_given(o) && o.profile.empty()) {
      emit(doc, o.out);
      return 0;
    }
  }
  TrainConfig cfg;
  const Codec codec = load_model(o, &cfg);
  const auto& q = codec.config().quantizer;
  doc["profile"] = to_string(cfg.profile);
  doc["nominal"] = to_json(nominal_bitrate(codec.config().frame_rate(), q.stream_k1(), q.stream_k2()));
  doc["semantic_only"] = to_json(nominal_bitrate(codec.config().frame_rate(), q.stream_k1(), 1));
  const Corpus corpus = corpus_for(cfg, o.resample);
  const UtilizationReport u = utilization_report(corpus, codec);
  doc["frames"] = u.frames;
  doc["semantic"] = to_json(u.semantic);
  doc["residual"] = to_json(u.residual);
  doc["mel_distance"] = reconstruction_mel_distance(corpus, codec);
  emit(doc, o.out);
  return 0;
}

int run_probe(const Options& o) {
  TrainConfig cfg;
  const Codec codec = load_model(o, &cfg);
  Corpus corpus = cfg.corpus.empty() ? synthetic_corpus(o.probe_clips, cfg.seed + 1000, codec.config().sample_rate())
                                     : corpus_for(cfg, o.resample);
  ProbeOptions opts;
  opts.stream = o.stream == "both" ? ProbeStream::both : ProbeStream::semantic;
  opts.shuffle_labels = o.shuffle_labels;
  opts.seed = cfg.seed;
  const ProbeResult r = semantic_probe(corpus, codec, opts);
  emit({{"accuracy", r.accuracy},
        {"chance", r.chance},
        {"sigma", r.sigma},
        {"classes", r.classes},
        {"train_clips", r.train_clips},
        {"test_clips", r.test_clips},
        {"stream", r.stream},
        {"shuffled_labels", o.shuffle_labels}},
       o.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sacodec: semantic-anchored low-bitrate speech codec"};
  app.require_subcommand(1);
  Options o;

  auto model_flags = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--checkpoint", o.checkpoint, "checkpoint file");
    sub->add_option("--profile", o.profile, "model profile")->check(CLI::IsMember({"paper", "tiny"}));
    sub->add_option("--seed", o.seed, "random seed");
    sub->add_flag("--no-q1", o.no_q1, "drop the semantic quantizer");
    sub->add_flag("--no-q2", o.no_q2, "drop the residual quantizer");
    sub->add_flag("--q1-random-learnable", o.q1_random_learnable, "learnable random Q1 codebook instead of the anchor");
    sub->add_option("--k2", o.k2, "residual codebook size")->check(CLI::PositiveNumber);
    sub->add_option("--set", o.sets, "extra config override key=value (repeatable)");
    sub->add_flag("--resample", o.resample, "resample audio to the model rate");
    sub->add_option("--out", o.out, "write the JSON report here instead of stdout");
  };

  auto* train = app.add_subcommand("train", "train a model");
  model_flags(train);
  train->add_option("--steps", o.steps, "training steps");
  train->add_option("--corpus", o.corpus, "directory of WAV files (default: synthetic corpus)");
  train->add_option("--log", o.log_path, "JSON-lines training log");
  train->add_flag("--resume", o.resume, "continue from --checkpoint");

  auto* encode = app.add_subcommand("encode", "audio to .sact tokens");
  model_flags(encode);
  encode->add_option("input", o.input, "input WAV")->required()->check(CLI::ExistingFile);
  encode->add_option("output", o.output, "output .sact")->required();

  auto* decode = app.add_subcommand("decode", ".sact tokens to audio");
  model_flags(decode);
  decode->add_option("input", o.input, "input .sact")->required()->check(CLI::ExistingFile);
  decode->add_option("output", o.output, "output WAV")->required();
  decode->add_flag("--override-checksum", o.override_checksum, "decode despite a model checksum mismatch");

  auto* report = app.add_subcommand("report", "bitrate, utilization and reconstruction report");
  model_flags(report);
  report->add_option("--tokens", o.tokens, "report on a .sact file")->check(CLI::ExistingFile);
  report->add_option("--corpus", o.corpus, "directory of WAV files (default: synthetic corpus)");

  auto* probe = app.add_subcommand("probe", "linear probe on token histograms");
  model_flags(probe);
  probe->add_option("--stream", o.stream, "token streams to probe")->check(CLI::IsMember({"semantic", "both"}));
  probe->add_option("--clips", o.probe_clips, "synthetic probe clips")->check(CLI::Range(8, 100000));
  probe->add_option("--corpus", o.corpus, "labeled WAV directory");
  probe->add_flag("--shuffle-labels", o.shuffle_labels, "null control");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return run_train(o);
    if (encode->parsed()) return run_encode(o);
    if (decode->parsed()) return run_decode(o);
    if (report->parsed()) return run_report(o);
    if (probe->parsed()) return run_probe(o);
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << " (byte offset " << e.offset() << ")\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
