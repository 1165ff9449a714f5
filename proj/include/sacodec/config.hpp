#pragma once

// Flat key = value configuration. Lines starting with '#' are comments.
//
// Keys:
//   profile                paper | tiny
//   seed                   integer
//   steps                  training steps
//   batch_size             crops per step
//   crop_seconds           crop length in seconds
//   learning_rate, beta1, beta2, weight_decay
//   lambda_rec, lambda_adv, lambda_feat, lambda_com1, lambda_com2
//   k1, k2                 codebook sizes (k1 must match the semantic codebook)
//   semantic_codebook      path to a codebook file (descriptor at <path>.txt)
//   no_q1, no_q2, q1_random_learnable, q1_direct_lookup, q2_plain_vq   true | false
//   corpus                 directory of WAV files; empty for the synthetic corpus
//   corpus_clips           number of synthetic clips
//   log_path               JSON-lines training log
//   log_every              steps between log records
//   eval_every             steps between validation records (0 disables)
//   checkpoint_path, checkpoint_every

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "sacodec/error.hpp"
#include "sacodec/losses.hpp"

namespace sacodec {

enum class Profile { paper, tiny };

inline std::string to_string(Profile p) { return p == Profile::paper ? "paper" : "tiny"; }

inline Profile parse_profile(const std::string& s) {
  if (s == "paper") return Profile::paper;
  if (s == "tiny") return Profile::tiny;
  throw Error("unknown profile '" + s + "' (expected paper or tiny)");
}

using KeyValues = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline KeyValues parse_key_values(std::istream& in, const std::string& source = "<config>") {
  KeyValues kv;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw Error(source + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw Error(source + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = trim(t.substr(eq + 1));
  }
  return kv;
}

inline KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path);
  return parse_key_values(in, path);
}

struct TrainConfig {
  Profile profile = Profile::tiny;
  std::uint64_t seed = 0;
  std::size_t steps = 200;
  std::size_t batch_size = 1;
  double crop_seconds = 1.0;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double weight_decay = 1e-2;
  LossWeights weights;
  std::size_t k1 = 0;  // 0 = profile default
  std::size_t k2 = 0;
  std::string semantic_codebook;
  bool no_q1 = false;
  bool no_q2 = false;
  bool q1_random_learnable = false;
  bool q1_direct_lookup = false;
  bool q2_plain_vq = false;
  std::string corpus;
  std::size_t corpus_clips = 10;
  std::string log_path;
  std::size_t log_every = 1;
  std::size_t eval_every = 0;
  std::string checkpoint_path;
  std::size_t checkpoint_every = 0;

  static TrainConfig for_profile(Profile p) {
    TrainConfig c;
    c.profile = p;
    if (p == Profile::tiny) c.learning_rate = 2e-3;
    return c;
  }

  std::size_t crop_samples(std::uint32_t sample_rate) const {
    return static_cast<std::size_t>(std::llround(crop_seconds * sample_rate));
  }

  void validate() const {
    if (batch_size == 0) throw Error("batch_size must be positive");
    if (!(crop_seconds > 0.0)) throw Error("crop_seconds must be positive");
    if (!(learning_rate >= 0.0)) throw Error("learning_rate must be nonnegative");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw Error("betas must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw Error("weight_decay must be nonnegative");
    weights.validate();
  }

  KeyValues to_key_values() const {
    auto num = [](double v) {
      std::ostringstream o;
      o.precision(17);
      o << v;
      return o.str();
    };
    auto flag = [](bool b) { return std::string(b ? "true" : "false"); };
    return {{"profile", to_string(profile)},
            {"seed", std::to_string(seed)},
            {"steps", std::to_string(steps)},
            {"batch_size", std::to_string(batch_size)},
            {"crop_seconds", num(crop_seconds)},
            {"learning_rate", num(learning_rate)},
            {"beta1", num(beta1)},
            {"beta2", num(beta2)},
            {"weight_decay", num(weight_decay)},
            {"lambda_rec", num(weights.rec)},
            {"lambda_adv", num(weights.adv)},
            {"lambda_feat", num(weights.feat)},
            {"lambda_com1", num(weights.com1)},
            {"lambda_com2", num(weights.com2)},
            {"k1", std::to_string(k1)},
            {"k2", std::to_string(k2)},
            {"semantic_codebook", semantic_codebook},
            {"no_q1", flag(no_q1)},
            {"no_q2", flag(no_q2)},
            {"q1_random_learnable", flag(q1_random_learnable)},
            {"q1_direct_lookup", flag(q1_direct_lookup)},
            {"q2_plain_vq", flag(q2_plain_vq)},
            {"corpus", corpus},
            {"corpus_clips", std::to_string(corpus_clips)},
            {"log_path", log_path},
            {"log_every", std::to_string(log_every)},
            {"eval_every", std::to_string(eval_every)},
            {"checkpoint_path", checkpoint_path},
            {"checkpoint_every", std::to_string(checkpoint_every)}};
  }

  // Unknown keys are rejected so typos do not pass silently.
  static TrainConfig from_key_values(const KeyValues& kv) {
    TrainConfig c = for_profile(kv.count("profile") ? parse_profile(kv.at("profile")) : Profile::tiny);
    for (const auto& [key, value] : kv) c.set(key, value);
    c.validate();
    return c;
  }

  void set(const std::string& key, const std::string& value) {
    if (key == "profile") profile = parse_profile(value);
    else if (key == "seed") seed = parse_uint(key, value);
    else if (key == "steps") steps = parse_uint(key, value);
    else if (key == "batch_size") batch_size = parse_uint(key, value);
    else if (key == "crop_seconds") crop_seconds = parse_double(key, value);
    else if (key == "learning_rate") learning_rate = parse_double(key, value);
    else if (key == "beta1") beta1 = parse_double(key, value);
    else if (key == "beta2") beta2 = parse_double(key, value);
    else if (key == "weight_decay") weight_decay = parse_double(key, value);
    else if (key == "lambda_rec") weights.rec = parse_double(key, value);
    else if (key == "lambda_adv") weights.adv = parse_double(key, value);
    else if (key == "lambda_feat") weights.feat = parse_double(key, value);
    else if (key == "lambda_com1") weights.com1 = parse_double(key, value);
    else if (key == "lambda_com2") weights.com2 = parse_double(key, value);
    else if (key == "k1") k1 = parse_uint(key, value);
    else if (key == "k2") k2 = parse_uint(key, value);
    else if (key == "semantic_codebook") semantic_codebook = value;
    else if (key == "no_q1") no_q1 = parse_bool(key, value);
    else if (key == "no_q2") no_q2 = parse_bool(key, value);
    else if (key == "q1_random_learnable") q1_random_learnable = parse_bool(key, value);
    else if (key == "q1_direct_lookup") q1_direct_lookup = parse_bool(key, value);
    else if (key == "q2_plain_vq") q2_plain_vq = parse_bool(key, value);
    else if (key == "corpus") corpus = value;
    else if (key == "corpus_clips") corpus_clips = parse_uint(key, value);
    else if (key == "log_path") log_path = value;
    else if (key == "log_every") log_every = parse_uint(key, value);
    else if (key == "eval_every") eval_every = parse_uint(key, value);
    else if (key == "checkpoint_path") checkpoint_path = value;
    else if (key == "checkpoint_every") checkpoint_every = parse_uint(key, value);
    else throw Error("unknown config key '" + key + "'");
  }

  std::string to_text() const {
    std::string out;
    for (const auto& [k, v] : to_key_values()) out += k + " = " + v + "\n";
    return out;
  }

 private:
  static std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw Error("config key '" + key + "': bad integer '" + v + "'");
    return out;
  }
  static double parse_double(const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      const double out = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw Error("config key '" + key + "': bad number '" + v + "'");
    }
  }
  static bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw Error("config key '" + key + "': bad boolean '" + v + "'");
  }
};

}  // namespace sacodec
