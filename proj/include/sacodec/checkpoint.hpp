#pragma once

// Single-file checkpoint container.
//
//   "SACK" | u32 version | u64 config length | config text (key = value)
//   u64 step | u64 generator optimizer steps | u64 discriminator optimizer steps
//   u32 array count, then per array:
//     u16 name length | name | u8 role | u8 rank | u64 dims[rank]
//     u64 fnv1a64 of the data bytes | float64 LE data
//
// All integers little-endian.

#include <bit>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sacodec/hash.hpp"
#include "sacodec/model.hpp"
#include "sacodec/optim.hpp"
#include "sacodec/wav.hpp"

namespace sacodec {

enum class ArrayRole : std::uint8_t { generator = 0, discriminator = 1, frozen = 2, optimizer = 3 };

struct CheckpointArray {
  std::string name;
  ArrayRole role = ArrayRole::generator;
  Tensor value;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  TrainConfig config;
  std::uint64_t step = 0;
  std::uint64_t generator_steps = 0;
  std::uint64_t discriminator_steps = 0;
  std::vector<CheckpointArray> arrays;

  const CheckpointArray* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put_u16(out_, v); }
  void u32(std::uint32_t v) { put_u32(out_, v); }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>(v >> (8 * i)));
  }
  void bytes(std::string_view s) { out_.append(s); }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& b, std::string source) : b_(b), source_(std::move(source)) {}

  std::size_t offset() const noexcept { return pos_; }
  bool done() const noexcept { return pos_ == b_.size(); }

  void need(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n) throw FormatError(source_ + ": truncated while reading " + what, pos_);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return b_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const auto v = read_u16(&b_[pos_]);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    const auto v = read_u32(&b_[pos_]);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(&b_[pos_]), n);
    pos_ += n;
    return s;
  }
  const unsigned char* raw(std::size_t n, const char* what) {
    need(n, what);
    const unsigned char* p = &b_[pos_];
    pos_ += n;
    return p;
  }

 private:
  const std::vector<unsigned char>& b_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  detail::ByteWriter w;
  w.bytes("SACK");
  w.u32(Checkpoint::kVersion);
  const std::string text = c.config.to_text();
  w.u64(text.size());
  w.bytes(text);
  w.u64(c.step);
  w.u64(c.generator_steps);
  w.u64(c.discriminator_steps);
  w.u32(static_cast<std::uint32_t>(c.arrays.size()));
  for (const auto& a : c.arrays) {
    w.u16(static_cast<std::uint16_t>(a.name.size()));
    w.bytes(a.name);
    w.u8(static_cast<std::uint8_t>(a.role));
    w.u8(static_cast<std::uint8_t>(a.value.rank()));
    for (auto d : a.value.shape()) w.u64(d);
    std::string data;
    data.reserve(a.value.size() * 8);
    for (double v : a.value.values()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) data.push_back(static_cast<char>(bits >> (8 * i)));
    }
    w.u64(fnv1a64(data));
    w.bytes(data);
  }
  return w.str();
}

inline Checkpoint parse_checkpoint(const std::vector<unsigned char>& bytes, const std::string& source = "<checkpoint>") {
  detail::ByteReader r(bytes, source);
  if (r.str(4, "magic") != "SACK") throw FormatError(source + ": not a checkpoint", 0);
  const std::uint32_t version = r.u32("version");
  if (version != Checkpoint::kVersion)
    throw FormatError(source + ": unsupported checkpoint version " + std::to_string(version), 4);
  Checkpoint c;
  const std::uint64_t text_len = r.u64("config length");
  std::istringstream text(r.str(text_len, "config"));
  c.config = TrainConfig::from_key_values(parse_key_values(text, source));
  c.step = r.u64("step");
  c.generator_steps = r.u64("optimizer steps");
  c.discriminator_steps = r.u64("optimizer steps");
  const std::uint32_t count = r.u32("array count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t start = r.offset();
    CheckpointArray a;
    a.name = r.str(r.u16("name length"), "array name");
    const std::uint8_t role = r.u8("array role");
    if (role > 3) throw FormatError(source + ": bad role for array " + a.name, start);
    a.role = static_cast<ArrayRole>(role);
    Shape shape(r.u8("rank"));
    for (auto& d : shape) d = r.u64("dimension");
    const std::uint64_t sum = r.u64("checksum");
    const std::size_t n = shape_size(shape);
    const unsigned char* data = r.raw(n * 8, "array data");
    if (fnv1a64(data, n * 8) != sum) {
      throw ChecksumError(source + ": checksum mismatch for " +
                          std::string(a.role == ArrayRole::frozen ? "frozen codebook " : "array ") + a.name);
    }
    std::vector<double> values(n);
    for (std::size_t j = 0; j < n; ++j) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(data[8 * j + static_cast<std::size_t>(b)]) << (8 * b);
      values[j] = std::bit_cast<double>(bits);
    }
    a.value = Tensor(std::move(shape), std::move(values));
    c.arrays.push_back(std::move(a));
  }
  if (!r.done()) throw FormatError(source + ": trailing bytes", r.offset());
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  detail::write_file_atomic(path, serialize_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::string& path, std::optional<Profile> expected = std::nullopt) {
  Checkpoint c = parse_checkpoint(detail::read_file_bytes(path), path);
  if (expected && *expected != c.config.profile) {
    throw ConfigMismatch(path + ": checkpoint was trained with profile " + to_string(c.config.profile) +
                         ", requested " + to_string(*expected));
  }
  return c;
}

// Captures a codec and (optionally) its optimizers.
inline Checkpoint make_checkpoint(const TrainConfig& cfg, const Codec& codec, std::uint64_t step,
                                  const AdamW* gen = nullptr, const AdamW* disc = nullptr) {
  Checkpoint c;
  c.config = cfg;
  c.step = step;
  for (const auto& p : codec.generator_parameters()) c.arrays.push_back({p.name, ArrayRole::generator, p.var.value()});
  for (const auto& p : codec.discriminator_parameters())
    c.arrays.push_back({p.name, ArrayRole::discriminator, p.var.value()});
  for (const auto& p : codec.frozen_arrays()) c.arrays.push_back({p.name, ArrayRole::frozen, p.var.value()});
  auto add_opt = [&](AdamW* opt, const std::string& tag) {
    if (!opt) return;
    const auto& params = opt->parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      c.arrays.push_back({"opt." + tag + ".m." + params[i].name, ArrayRole::optimizer, opt->first_moments()[i]});
      c.arrays.push_back({"opt." + tag + ".v." + params[i].name, ArrayRole::optimizer, opt->second_moments()[i]});
    }
  };
  add_opt(const_cast<AdamW*>(gen), "gen");
  add_opt(const_cast<AdamW*>(disc), "disc");
  c.generator_steps = gen ? gen->steps() : 0;
  c.discriminator_steps = disc ? disc->steps() : 0;
  return c;
}

inline const Tensor& checkpoint_array(const Checkpoint& c, const std::string& name) {
  const auto* a = c.find(name);
  if (!a) throw ConfigMismatch("checkpoint has no array named " + name);
  return a->value;
}

inline void assign_array(const ag::Var& var, const Tensor& value, const std::string& name) {
  if (var.shape() != value.shape()) {
    throw ConfigMismatch("checkpoint array " + name + " has shape " + shape_string(value.shape()) + ", model expects " +
                         shape_string(var.shape()));
  }
  const_cast<ag::Var&>(var).mutable_value() = value;
}

// Rebuilds the codec a checkpoint describes and loads every array into it.
inline Codec restore_codec(const Checkpoint& c) {
  const Tensor& c_sem = checkpoint_array(c, "quantizer.q1.c_sem");
  Codec codec(model_config(c.config, c_sem.dim(1)), c_sem, c.config.seed);
  for (const auto& p : codec.frozen_arrays()) {
    const Tensor& stored = checkpoint_array(c, p.name);
    if (tensor_checksum(stored) != tensor_checksum(p.var.value()) && p.name != "quantizer.q1.c_sem")
      throw ChecksumError("frozen array " + p.name + " does not match the value regenerated from the seed");
  }
  for (const auto& list : {codec.generator_parameters(), codec.discriminator_parameters()})
    for (const auto& p : list) assign_array(p.var, checkpoint_array(c, p.name), p.name);
  return codec;
}

inline void restore_optimizer(const Checkpoint& c, AdamW& opt, const std::string& tag, std::uint64_t steps) {
  const auto& params = opt.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    opt.first_moments()[i] = checkpoint_array(c, "opt." + tag + ".m." + params[i].name);
    opt.second_moments()[i] = checkpoint_array(c, "opt." + tag + ".v." + params[i].name);
  }
  opt.set_steps(steps);
}

}  // namespace sacodec
