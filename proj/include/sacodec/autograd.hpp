#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// A Var is a shared handle to a graph node. Operations on Vars that require
// gradients record a backward closure; backward() walks the graph in reverse
// topological order and accumulates into every reachable leaf's grad buffer.

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <memory>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sacodec/tensor.hpp"

namespace sacodec::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor(value.shape());
    return grad;
  }
  bool has_grad() const { return !grad.empty() && grad.shape() == value.shape(); }
};

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var parameter(Tensor value) { return Var(std::move(value), true); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return node_->has_grad(); }
  void zero_grad() { node_->grad = Tensor(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
  std::size_t size() const { return node_->value.size(); }
  double item() const { return node_->value[0]; }

  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Builds a result Var. The backward closure is attached only when recording
// is enabled and at least one input needs gradients.
inline Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || (in.defined() && in.requires_grad());
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node_ptr());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

// True when input slot i of a recorded node wants a gradient.
inline bool wants(const Node& self, std::size_t i) {
  return i < self.inputs.size() && self.inputs[i] && self.inputs[i]->requires_grad;
}

inline void backward(const Var& root) {
  if (root.size() != 1) throw Error("backward: root must be a scalar, got " + shape_string(root.shape()));
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward || !node->has_grad()) continue;
    node->backward(*node);
    node->grad = Tensor();  // interior gradients are not retained
  }
}

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {

template <typename F, typename DF>
Var unary(const Var& a, F f, DF df) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  Tensor saved_y = grad_enabled() && a.requires_grad() ? y : Tensor();
  return make_result(std::move(y), {a}, [df, saved_y = std::move(saved_y)](Node& self) {
    const Tensor& x = self.inputs[0]->value;
    Tensor& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += self.grad[i] * df(x[i], saved_y[i]);
  });
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return make_result(std::move(y), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants(self, k)) continue;
      Tensor& g = self.inputs[k]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  return make_result(std::move(y), {a, b}, [](Node& self) {
    if (wants(self, 0)) {
      Tensor& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      Tensor& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return make_result(std::move(y), {a, b}, [](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    if (wants(self, 0)) {
      Tensor& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (wants(self, 1)) {
      Tensor& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

inline Var div(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "div");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= b.value()[i];
  return make_result(std::move(y), {a, b}, [](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    if (wants(self, 0)) {
      Tensor& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / bv[i];
    }
    if (wants(self, 1)) {
      Tensor& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * av[i] / (bv[i] * bv[i]);
    }
  });
}

inline Var scale(const Var& a, double s) {
  return detail::unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Var add_scalar(const Var& a, double s) {
  return detail::unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Var square(const Var& a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var abs(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Var exp(const Var& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var sqrt(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

inline Var tanh(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var elu(const Var& a, double alpha = 1.0) {
  return detail::unary(
      a, [alpha](double x) { return x > 0.0 ? x : alpha * std::expm1(x); },
      [alpha](double x, double y) { return x > 0.0 ? 1.0 : y + alpha; });
}

inline Var leaky_relu(const Var& a, double slope) {
  return detail::unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

// tanh approximation of GELU
inline Var gelu(const Var& a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  return detail::unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::tanh(k * (x + c * x * x * x))); },
      [](double x, double) {
        const double t = std::tanh(k * (x + c * x * x * x));
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * c * x * x);
      });
}

// max(x, lo); zero gradient where the floor is active.
inline Var clamp_min(const Var& a, double lo) {
  return detail::unary(
      a, [lo](double x) { return x < lo ? lo : x; }, [lo](double x, double) { return x < lo ? 0.0 : 1.0; });
}

inline Var clamp_max(const Var& a, double hi) {
  return detail::unary(
      a, [hi](double x) { return x > hi ? hi : x; }, [hi](double x, double) { return x > hi ? 0.0 : 1.0; });
}

// Constant copy with no history.
inline Var detach(const Var& a) { return Var(a.value(), false); }

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make_result(Tensor::scalar(s), {a}, [](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const double gs = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gs;
  });
}

inline Var mean(const Var& a) {
  const double n = static_cast<double>(a.size());
  return scale(sum(a), 1.0 / n);
}

inline Var mean_square(const Var& a) { return mean(square(a)); }

inline Var mean_abs(const Var& a) { return mean(abs(a)); }

// Sum of a list of scalars.
inline Var add_all(const std::vector<Var>& terms) {
  if (terms.empty()) return Var(Tensor::scalar(0.0));
  Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Var reshape(const Var& a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  return make_result(std::move(y), {a}, [](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

inline Var transpose(const Var& a) {
  return make_result(sacodec::transpose(a.value()), {a}, [](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const std::size_t n = g.dim(0), m = g.dim(1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) g.at(i, j) += self.grad.at(j, i);
  });
}

inline Var slice_cols(const Var& a, std::size_t c0, std::size_t c1) {
  const Tensor& x = a.value();
  if (x.rank() != 2 || c0 > c1 || c1 > x.dim(1)) throw Error("slice_cols: bad range");
  const std::size_t n = x.dim(0), w = c1 - c0;
  Tensor y({n, w});
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(x.data() + i * x.dim(1) + c0, w, y.data() + i * w);
  return make_result(std::move(y), {a}, [c0, w](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const std::size_t n = g.dim(0), m = g.dim(1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * m + c0 + j] += self.grad[i * w + j];
  });
}

inline Var slice_rows(const Var& a, std::size_t r0, std::size_t r1) {
  const Tensor& x = a.value();
  if (x.rank() != 2 || r0 > r1 || r1 > x.dim(0)) throw Error("slice_rows: bad range");
  const std::size_t m = x.dim(1);
  Tensor y({r1 - r0, m});
  std::copy_n(x.data() + r0 * m, (r1 - r0) * m, y.data());
  return make_result(std::move(y), {a}, [r0, m](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[r0 * m + i] += self.grad[i];
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_cols: no inputs");
  const std::size_t n = parts[0].dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.value().rank() != 2 || p.dim(0) != n) throw Error("concat_cols: row mismatch");
    total += p.dim(1);
  }
  Tensor y({n, total});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t w = p.dim(1);
    for (std::size_t i = 0; i < n; ++i) std::copy_n(p.value().data() + i * w, w, y.data() + i * total + off);
    off += w;
  }
  return make_result(std::move(y), parts, [offsets, total](Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      if (!wants(self, k)) continue;
      Tensor& g = self.inputs[k]->grad_buffer();
      const std::size_t n = g.dim(0), w = g.dim(1);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * total + offsets[k] + j];
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_rows: no inputs");
  const std::size_t m = parts[0].value().rank() == 2 ? parts[0].dim(1) : parts[0].size();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.size() % m != 0) throw Error("concat_rows: column mismatch");
    rows += p.size() / m;
  }
  Tensor y({rows, m});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().data(), p.size(), y.data() + off);
    off += p.size();
  }
  return make_result(std::move(y), parts, [](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      const std::size_t len = self.inputs[k]->value.size();
      if (wants(self, k)) {
        Tensor& g = self.inputs[k]->grad_buffer();
        for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[off + i];
      }
      off += len;
    }
  });
}

// rows[t] = table[indices[t]]; backward scatter-adds into the selected rows.
inline Var gather_rows(const Var& table, const std::vector<int>& indices) {
  const Tensor& c = table.value();
  const std::size_t k = c.dim(0), d = c.dim(1);
  Tensor y({indices.size(), d});
  for (std::size_t t = 0; t < indices.size(); ++t) {
    const auto idx = static_cast<std::size_t>(indices[t]);
    if (indices[t] < 0 || idx >= k) throw Error("gather_rows: index out of range");
    std::copy_n(c.data() + idx * d, d, y.data() + t * d);
  }
  return make_result(std::move(y), {table}, [indices, d](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t t = 0; t < indices.size(); ++t) {
      const auto idx = static_cast<std::size_t>(indices[t]);
      for (std::size_t j = 0; j < d; ++j) g[idx * d + j] += self.grad[t * d + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(const Var& a, const Var& b) {
  Tensor y = sacodec::matmul(a.value(), b.value());
  return make_result(std::move(y), {a, b}, [](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    const std::size_t n = av.dim(0), k = av.dim(1), m = bv.dim(1);
    if (wants(self, 0))
      kernels::gemm_nt(self.grad.data(), bv.data(), self.inputs[0]->grad_buffer().data(), n, m, k, true);
    if (wants(self, 1))
      kernels::gemm_tn(av.data(), self.grad.data(), self.inputs[1]->grad_buffer().data(), n, k, m, true);
  });
}

// a[n x k] * b[m x k]^T
inline Var matmul_nt(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(1)) {
    throw Error("matmul_nt: incompatible shapes " + shape_string(av.shape()) + " and " +
                shape_string(bv.shape()));
  }
  const std::size_t n = av.dim(0), k = av.dim(1), m = bv.dim(0);
  Tensor y({n, m});
  kernels::gemm_nt(av.data(), bv.data(), y.data(), n, k, m, false);
  return make_result(std::move(y), {a, b}, [n, k, m](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    if (wants(self, 0))
      kernels::gemm_nn(self.grad.data(), bv.data(), self.inputs[0]->grad_buffer().data(), n, m, k, true);
    if (wants(self, 1))
      kernels::gemm_tn(self.grad.data(), av.data(), self.inputs[1]->grad_buffer().data(), n, m, k, true);
  });
}

// Adds bias[m] to every row of x[n x m].
inline Var add_row_vector(const Var& x, const Var& bias) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.dim(0), m = xv.dim(1);
  if (bias.size() != m) throw Error("add_row_vector: bias length mismatch");
  Tensor y = xv;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] += bias.value()[j];
  return make_result(std::move(y), {x, bias}, [n, m](Node& self) {
    if (wants(self, 0)) {
      Tensor& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      Tensor& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) g[j] += self.grad[i * m + j];
    }
  });
}

// Multiplies every row of x[n x m] elementwise by scale[m].
inline Var mul_row_vector(const Var& x, const Var& scale) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.dim(0), m = xv.dim(1);
  if (scale.size() != m) throw Error("mul_row_vector: scale length mismatch");
  Tensor y = xv;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] *= scale.value()[j];
  return make_result(std::move(y), {x, scale}, [n, m](Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    const Tensor& sv = self.inputs[1]->value;
    if (wants(self, 0)) {
      Tensor& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) g[i * m + j] += self.grad[i * m + j] * sv[j];
    }
    if (wants(self, 1)) {
      Tensor& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) g[j] += self.grad[i * m + j] * xv[i * m + j];
    }
  });
}

// Interleaves re[n x m] and im[n x m] into [n x m x 2].
inline Var complex_pack(const Var& re, const Var& im) {
  require_same_shape(re.value(), im.value(), "complex_pack");
  const std::size_t n = re.dim(0), m = re.dim(1);
  Tensor y({n, m, 2});
  for (std::size_t i = 0; i < n * m; ++i) {
    y[2 * i] = re.value()[i];
    y[2 * i + 1] = im.value()[i];
  }
  return make_result(std::move(y), {re, im}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants(self, k)) continue;
      Tensor& g = self.inputs[k]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[2 * i + k];
    }
  });
}

// x[n x in] * weight[out x in]^T + bias[out]
inline Var linear(const Var& x, const Var& weight, const Var& bias = Var()) {
  Var y = matmul_nt(x, weight);
  return bias.defined() ? add_row_vector(y, bias) : y;
}

// Row-wise softmax of a 2-D tensor.
inline Var softmax_rows(const Var& a) {
  const Tensor& x = a.value();
  const std::size_t n = x.dim(0), m = x.dim(1);
  Tensor y({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = x[i * m];
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, x[i * m + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += (y[i * m + j] = std::exp(x[i * m + j] - mx));
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] /= s;
  }
  Tensor saved = y;
  return make_result(std::move(y), {a}, [saved = std::move(saved), n, m](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += self.grad[i * m + j] * saved[i * m + j];
      for (std::size_t j = 0; j < m; ++j) g[i * m + j] += saved[i * m + j] * (self.grad[i * m + j] - dot);
    }
  });
}

// Normalizes each row of x[n x c] to zero mean / unit variance, then applies
// the per-column affine gamma, beta.
inline Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.dim(0), c = xv.dim(1);
  if (gamma.size() != c || beta.size() != c) throw Error("layer_norm_rows: affine size mismatch");
  Tensor xhat({n, c});
  std::vector<double> inv_std(n);
  Tensor y({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xv[i * c + j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xv[i * c + j] - mu) * (xv[i * c + j] - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (xv[i * c + j] - mu) * inv_std[i];
      y[i * c + j] = xhat[i * c + j] * gamma.value()[j] + beta.value()[j];
    }
  }
  return make_result(std::move(y), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std), n, c](Node& self) {
    const Tensor& gam = self.inputs[1]->value;
    if (wants(self, 1)) {
      Tensor& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j] * xhat[i * c + j];
    }
    if (wants(self, 2)) {
      Tensor& g = self.inputs[2]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    }
    if (wants(self, 0)) {
      Tensor& g = self.inputs[0]->grad_buffer();
      std::vector<double> gh(c);
      for (std::size_t i = 0; i < n; ++i) {
        double mean_gh = 0.0, mean_ghx = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          gh[j] = self.grad[i * c + j] * gam[j];
          mean_gh += gh[j];
          mean_ghx += gh[j] * xhat[i * c + j];
        }
        mean_gh /= static_cast<double>(c);
        mean_ghx /= static_cast<double>(c);
        for (std::size_t j = 0; j < c; ++j)
          g[i * c + j] += inv_std[i] * (gh[j] - mean_gh - xhat[i * c + j] * mean_ghx);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Convolutions

namespace detail {

// Output positions t in [lo, hi) with 0 <= t*stride + offset < in_len.
inline std::pair<std::size_t, std::size_t> valid_range(long offset, long stride, long in_len, long out_len) {
  long lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  long hi = (in_len - 1 - offset) < 0 ? 0 : (in_len - 1 - offset) / stride + 1;
  hi = std::min(hi, out_len);
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace detail

struct Conv1dSpec {
  std::size_t stride = 1;
  std::size_t pad_left = 0;
  std::size_t pad_right = 0;
  std::size_t dilation = 1;
  std::size_t groups = 1;
};

inline std::size_t conv_output_length(std::size_t in_len, std::size_t kernel, const Conv1dSpec& s) {
  const long span = static_cast<long>(s.dilation * (kernel - 1) + 1);
  const long padded = static_cast<long>(in_len + s.pad_left + s.pad_right);
  if (padded < span) return 0;
  return static_cast<std::size_t>((padded - span) / static_cast<long>(s.stride) + 1);
}

struct Conv2dSpec {
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
};

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Uninitialized buffer; every element is written before it is read.
inline std::unique_ptr<double[]> scratch(std::size_t n) { return std::unique_ptr<double[]>(new double[n]); }

// Unfolds one channel group of x[C x L] into col[(cpg*K) x Lout]; `add`
// reverses the direction and accumulates col back into x.
template <bool add>
void unfold1d(std::conditional_t<add, double*, const double*> x, double* col, std::size_t cpg, std::size_t len,
              std::size_t k, std::size_t lout, const Conv1dSpec& s) {
  for (std::size_t cl = 0; cl < cpg; ++cl) {
    auto xr = x + cl * len;
    for (std::size_t kk = 0; kk < k; ++kk) {
      double* cr = col + (cl * k + kk) * lout;
      const long off = static_cast<long>(kk * s.dilation) - static_cast<long>(s.pad_left);
      auto [lo, hi] = valid_range(off, static_cast<long>(s.stride), static_cast<long>(len), static_cast<long>(lout));
      if constexpr (!add) {
        std::fill(cr, cr + lo, 0.0);
        std::fill(cr + hi, cr + lout, 0.0);
      }
      for (std::size_t t = lo; t < hi; ++t) {
        const auto src = static_cast<std::size_t>(static_cast<long>(t * s.stride) + off);
        if constexpr (add) xr[src] += cr[t];
        else cr[t] = xr[src];
      }
    }
  }
}

template <bool add>
void unfold2d(std::conditional_t<add, double*, const double*> x, double* col, std::size_t cin, std::size_t h,
              std::size_t w, std::size_t kh, std::size_t kw, std::size_t ho, std::size_t wo, const Conv2dSpec& s) {
  const std::size_t plane = ho * wo;
  for (std::size_t ci = 0; ci < cin; ++ci) {
    auto xc = x + ci * h * w;
    for (std::size_t a = 0; a < kh; ++a) {
      const long offh = static_cast<long>(a) - static_cast<long>(s.pad_h);
      auto [rlo, rhi] = valid_range(offh, static_cast<long>(s.stride_h), static_cast<long>(h), static_cast<long>(ho));
      for (std::size_t b = 0; b < kw; ++b) {
        double* cp = col + ((ci * kh + a) * kw + b) * plane;
        const long offw = static_cast<long>(b) - static_cast<long>(s.pad_w);
        auto [clo, chi] = valid_range(offw, static_cast<long>(s.stride_w), static_cast<long>(w), static_cast<long>(wo));
        if constexpr (!add) {
          std::fill(cp, cp + rlo * wo, 0.0);
          std::fill(cp + rhi * wo, cp + plane, 0.0);
        }
        for (std::size_t r = rlo; r < rhi; ++r) {
          const long base = (static_cast<long>(r * s.stride_h) + offh) * static_cast<long>(w) + offw;
          double* cr = cp + r * wo;
          if constexpr (!add) {
            std::fill(cr, cr + clo, 0.0);
            std::fill(cr + chi, cr + wo, 0.0);
          }
          for (std::size_t c = clo; c < chi; ++c) {
            const long src = base + static_cast<long>(c * s.stride_w);
            if constexpr (add) xc[src] += cr[c];
            else cr[c] = xc[src];
          }
        }
      }
    }
  }
}

}  // namespace detail

// x[cin x L], weight[cout x cin/groups x K], bias[cout] (optional) -> [cout x Lout]
inline Var conv1d(const Var& x, const Var& weight, const Var& bias, const Conv1dSpec& s) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() != 2 || wv.rank() != 3) throw Error("conv1d: expected x[C x L] and w[Co x Ci x K]");
  const std::size_t cin = xv.dim(0), len = xv.dim(1);
  const std::size_t cout = wv.dim(0), cpg = wv.dim(1), k = wv.dim(2);
  if (cin != cpg * s.groups || cout % s.groups != 0) {
    throw Error("conv1d: channel mismatch, input " + std::to_string(cin) + " weight " +
                shape_string(wv.shape()) + " groups " + std::to_string(s.groups));
  }
  const std::size_t lout = conv_output_length(len, k, s);
  if (lout == 0) throw Error("conv1d: input of length " + std::to_string(len) + " too short");
  const std::size_t opg = cout / s.groups, rows = cpg * k;
  using detail::RowMat;
  Tensor y({cout, lout});
  auto col = detail::scratch(rows * lout);
  for (std::size_t g = 0; g < s.groups; ++g) {
    detail::unfold1d<false>(xv.data() + g * cpg * len, col.get(), cpg, len, k, lout, s);
    Eigen::Map<RowMat> yg(y.data() + g * opg * lout, static_cast<long>(opg), static_cast<long>(lout));
    Eigen::Map<const RowMat> wg(wv.data() + g * opg * rows, static_cast<long>(opg), static_cast<long>(rows));
    Eigen::Map<const RowMat> cm(col.get(), static_cast<long>(rows), static_cast<long>(lout));
    yg.noalias() = wg * cm;
    if (bias.defined())
      for (std::size_t o = 0; o < opg; ++o) yg.row(static_cast<long>(o)).array() += bias.value()[g * opg + o];
  }
  return make_result(std::move(y), {x, weight, bias}, [s, len, cout, cpg, k, lout, opg, rows](Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    const Tensor& wv = self.inputs[1]->value;
    double* gx = wants(self, 0) ? self.inputs[0]->grad_buffer().data() : nullptr;
    double* gw = wants(self, 1) ? self.inputs[1]->grad_buffer().data() : nullptr;
    if (wants(self, 2)) {
      Tensor& gb = self.inputs[2]->grad_buffer();
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t t = 0; t < lout; ++t) gb[co] += self.grad[co * lout + t];
    }
    auto col = detail::scratch(rows * lout);
    for (std::size_t g = 0; g < s.groups; ++g) {
      Eigen::Map<const RowMat> gy(self.grad.data() + g * opg * lout, static_cast<long>(opg), static_cast<long>(lout));
      Eigen::Map<RowMat> cm(col.get(), static_cast<long>(rows), static_cast<long>(lout));
      if (gw) {
        detail::unfold1d<false>(xv.data() + g * cpg * len, col.get(), cpg, len, k, lout, s);
        Eigen::Map<RowMat>(gw + g * opg * rows, static_cast<long>(opg), static_cast<long>(rows)).noalias() +=
            gy * cm.transpose();
      }
      if (gx) {
        Eigen::Map<const RowMat> wg(wv.data() + g * opg * rows, static_cast<long>(opg), static_cast<long>(rows));
        cm.noalias() = wg.transpose() * gy;
        detail::unfold1d<true>(gx + g * cpg * len, col.get(), cpg, len, k, lout, s);
      }
    }
  });
}

// x[cin x H x W], weight[cout x cin x kh x kw], bias[cout] -> [cout x Ho x Wo]
inline Var conv2d(const Var& x, const Var& weight, const Var& bias, const Conv2dSpec& s) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(1) != xv.dim(0)) {
    throw Error("conv2d: incompatible shapes " + shape_string(xv.shape()) + " and " +
                shape_string(wv.shape()));
  }
  const std::size_t cin = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  const std::size_t cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  const std::size_t ho = conv_output_length(h, kh, {s.stride_h, s.pad_h, s.pad_h, 1, 1});
  const std::size_t wo = conv_output_length(w, kw, {s.stride_w, s.pad_w, s.pad_w, 1, 1});
  if (ho == 0 || wo == 0) throw Error("conv2d: input " + shape_string(xv.shape()) + " too small");
  const std::size_t rows = cin * kh * kw, plane = ho * wo;
  using detail::RowMat;
  auto col = detail::scratch(rows * plane);
  detail::unfold2d<false>(xv.data(), col.get(), cin, h, w, kh, kw, ho, wo, s);
  Tensor y({cout, ho, wo});
  Eigen::Map<RowMat> ym(y.data(), static_cast<long>(cout), static_cast<long>(plane));
  ym.noalias() = Eigen::Map<const RowMat>(wv.data(), static_cast<long>(cout), static_cast<long>(rows)) *
                 Eigen::Map<const RowMat>(col.get(), static_cast<long>(rows), static_cast<long>(plane));
  if (bias.defined())
    for (std::size_t co = 0; co < cout; ++co) ym.row(static_cast<long>(co)).array() += bias.value()[co];
  return make_result(std::move(y), {x, weight, bias}, [s, cin, h, w, cout, kh, kw, ho, wo, rows, plane](Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    const Tensor& wv = self.inputs[1]->value;
    double* gx = wants(self, 0) ? self.inputs[0]->grad_buffer().data() : nullptr;
    double* gw = wants(self, 1) ? self.inputs[1]->grad_buffer().data() : nullptr;
    if (wants(self, 2)) {
      Tensor& gb = self.inputs[2]->grad_buffer();
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t i = 0; i < plane; ++i) gb[co] += self.grad[co * plane + i];
    }
    Eigen::Map<const RowMat> gy(self.grad.data(), static_cast<long>(cout), static_cast<long>(plane));
    auto col = detail::scratch(rows * plane);
    Eigen::Map<RowMat> cm(col.get(), static_cast<long>(rows), static_cast<long>(plane));
    if (gw) {
      detail::unfold2d<false>(xv.data(), col.get(), cin, h, w, kh, kw, ho, wo, s);
      Eigen::Map<RowMat>(gw, static_cast<long>(cout), static_cast<long>(rows)).noalias() += gy * cm.transpose();
    }
    if (gx) {
      cm.noalias() = Eigen::Map<const RowMat>(wv.data(), static_cast<long>(cout), static_cast<long>(rows)).transpose() * gy;
      detail::unfold2d<true>(gx, col.get(), cin, h, w, kh, kw, ho, wo, s);
    }
  });
}

// ---------------------------------------------------------------------------
// Quantizer passthrough

// Forward value is `code` bit-for-bit; backward routes the incoming gradient
// to `input` unchanged and nothing to `code`.
inline Var straight_through(const Var& input, const Var& code) {
  require_same_shape(input.value(), code.value(), "straight_through");
  return make_result(code.value(), {input}, [](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

}  // namespace sacodec::ag
