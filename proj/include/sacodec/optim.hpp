#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "sacodec/nn.hpp"

namespace sacodec {

struct AdamWConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double weight_decay = 1e-2;
  double eps = 1e-8;
};

// Half-cosine decay from base to zero over total steps; constant when total is 0.
inline double cosine_learning_rate(double base, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  const double p = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * p));
}

// AdamW with decoupled weight decay. Owns the exact list of parameters it may
// update; nothing else is ever touched.
class AdamW {
 public:
  AdamW() = default;
  AdamW(nn::ParameterList params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.var.shape());
      v_.emplace_back(p.var.shape());
    }
  }

  const nn::ParameterList& parameters() const noexcept { return params_; }
  std::size_t steps() const noexcept { return steps_; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  void set_steps(std::size_t s) { steps_ = s; }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  void step(double lr) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      ag::Var& var = params_[i].var;
      Tensor& w = var.mutable_value();
      const bool has = var.has_grad();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double g = has ? var.grad()[j] : 0.0;
        m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
        v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
        const double mh = m_[i][j] / bc1, vh = v_[i][j] / bc2;
        w[j] -= lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * w[j]);
      }
    }
  }

 private:
  nn::ParameterList params_;
  AdamWConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t steps_ = 0;
};

}  // namespace sacodec
