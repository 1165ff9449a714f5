#pragma once

// Parameterized layers built on the ag:: operations. Layers own their
// parameters as ag::Var leaves and report them through collect().

#include <cmath>
#include <string>
#include <vector>

#include "sacodec/autograd.hpp"
#include "sacodec/random.hpp"

namespace sacodec::nn {

struct NamedParameter {
  std::string name;
  ag::Var var;
};
using ParameterList = std::vector<NamedParameter>;

inline Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = rng.uniform(-bound, bound);
  return t;
}

inline Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = rng.normal(0.0, stddev);
  return t;
}

inline void set_requires_grad(const ParameterList& params, bool on) {
  for (const auto& p : params) const_cast<ag::Var&>(p.var).set_requires_grad(on);
}

inline std::size_t parameter_count(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var.size();
  return n;
}

class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool bias = true) {
    const double bound = std::sqrt(3.0 / static_cast<double>(in));
    weight_ = ag::Var::parameter(uniform_tensor({out, in}, bound, rng));
    if (bias) bias_ = ag::Var::parameter(Tensor({out}));
  }

  // x[n x in] -> [n x out]
  ag::Var operator()(const ag::Var& x) const { return ag::linear(x, weight_, bias_); }

  void collect(ParameterList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight_});
    if (bias_.defined()) out.push_back({prefix + ".bias", bias_});
  }

  ag::Var& weight() { return weight_; }
  ag::Var& bias() { return bias_; }

 private:
  ag::Var weight_;
  ag::Var bias_;
};

class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(std::size_t in, std::size_t out, std::size_t kernel, ag::Conv1dSpec spec, Rng& rng)
      : spec_(spec) {
    const double fan_in = static_cast<double>(in / spec.groups * kernel);
    const double bound = std::sqrt(3.0 / fan_in);
    weight_ = ag::Var::parameter(uniform_tensor({out, in / spec.groups, kernel}, bound, rng));
    bias_ = ag::Var::parameter(Tensor({out}));
  }

  // Same-length convolution for odd kernels at stride 1.
  static Conv1d same(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng, std::size_t groups = 1) {
    return Conv1d(in, out, kernel, {1, kernel / 2, kernel / 2, 1, groups}, rng);
  }

  // x[in x L] -> [out x Lout]
  ag::Var operator()(const ag::Var& x) const { return ag::conv1d(x, weight_, bias_, spec_); }

  void collect(ParameterList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight_});
    out.push_back({prefix + ".bias", bias_});
  }

 private:
  ag::Conv1dSpec spec_;
  ag::Var weight_;
  ag::Var bias_;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kh, std::size_t kw, ag::Conv2dSpec spec, Rng& rng)
      : spec_(spec) {
    const double bound = std::sqrt(3.0 / static_cast<double>(in * kh * kw));
    weight_ = ag::Var::parameter(uniform_tensor({out, in, kh, kw}, bound, rng));
    bias_ = ag::Var::parameter(Tensor({out}));
  }

  ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, weight_, bias_, spec_); }

  void collect(ParameterList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight_});
    out.push_back({prefix + ".bias", bias_});
  }

 private:
  ag::Conv2dSpec spec_;
  ag::Var weight_;
  ag::Var bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t width)
      : gamma_(ag::Var::parameter(Tensor({width}, 1.0))), beta_(ag::Var::parameter(Tensor({width}, 0.0))) {}

  // Normalizes each row of x[n x width].
  ag::Var operator()(const ag::Var& x) const { return ag::layer_norm_rows(x, gamma_, beta_); }

  void collect(ParameterList& out, const std::string& prefix) const {
    out.push_back({prefix + ".gamma", gamma_});
    out.push_back({prefix + ".beta", beta_});
  }

 private:
  ag::Var gamma_;
  ag::Var beta_;
};

// Multi-layer LSTM over a [T x in] sequence, gate order (i, f, g, o).
class Lstm {
 public:
  Lstm() = default;
  Lstm(std::size_t in, std::size_t hidden, std::size_t layers, Rng& rng) : hidden_(hidden) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t input = l == 0 ? in : hidden;
      layers_.push_back({ag::Var::parameter(uniform_tensor({4 * hidden, input}, bound, rng)),
                         ag::Var::parameter(uniform_tensor({4 * hidden, hidden}, bound, rng)),
                         ag::Var::parameter(uniform_tensor({4 * hidden}, bound, rng))});
    }
  }

  std::size_t hidden() const noexcept { return hidden_; }

  ag::Var operator()(const ag::Var& x) const {
    ag::Var seq = x;
    for (const auto& layer : layers_) seq = run_layer(seq, layer);
    return seq;
  }

  void collect(ParameterList& out, const std::string& prefix) const {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const std::string p = prefix + ".l" + std::to_string(l);
      out.push_back({p + ".w_ih", layers_[l].w_ih});
      out.push_back({p + ".w_hh", layers_[l].w_hh});
      out.push_back({p + ".bias", layers_[l].bias});
    }
  }

 private:
  struct Layer {
    ag::Var w_ih, w_hh, bias;
  };

  ag::Var run_layer(const ag::Var& x, const Layer& layer) const {
    const std::size_t steps = x.dim(0), h = hidden_;
    ag::Var projected = ag::linear(x, layer.w_ih, layer.bias);  // [T x 4H]
    ag::Var state(Tensor({1, h}));
    ag::Var cell(Tensor({1, h}));
    std::vector<ag::Var> outputs;
    outputs.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      ag::Var gates = ag::add(ag::slice_rows(projected, t, t + 1), ag::matmul_nt(state, layer.w_hh));
      ag::Var in_gate = ag::sigmoid(ag::slice_cols(gates, 0, h));
      ag::Var forget = ag::sigmoid(ag::slice_cols(gates, h, 2 * h));
      ag::Var candidate = ag::tanh(ag::slice_cols(gates, 2 * h, 3 * h));
      ag::Var out_gate = ag::sigmoid(ag::slice_cols(gates, 3 * h, 4 * h));
      cell = ag::add(ag::mul(forget, cell), ag::mul(in_gate, candidate));
      state = ag::mul(out_gate, ag::tanh(cell));
      outputs.push_back(state);
    }
    return ag::concat_rows(outputs);
  }

  std::size_t hidden_ = 0;
  std::vector<Layer> layers_;
};

}  // namespace sacodec::nn
