#pragma once

// Asymmetric dual quantizer. Q1 snaps the latent to a learned projection of a
// frozen semantic codebook; Q2 quantizes what is left against a codebook
// spanned by frozen random coefficients and a learnable basis.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "sacodec/hash.hpp"
#include "sacodec/nn.hpp"

namespace sacodec {

// ---------------------------------------------------------------------------
// Free operations on values

inline void require_finite(const Tensor& t, const std::string& what) {
  if (!t.all_finite()) throw NumericError(what + ": non-finite values");
}

// C1[k] = W * C_sem[k] + b
inline Tensor project_semantic_codebook(const Tensor& c_sem, const Tensor& weight, const Tensor& bias) {
  require_finite(weight, "semantic projector weight");
  require_finite(bias, "semantic projector bias");
  if (c_sem.rank() != 2 || weight.rank() != 2 || weight.dim(1) != c_sem.dim(1) || bias.size() != weight.dim(0)) {
    throw Error("project_semantic_codebook: shapes " + shape_string(c_sem.shape()) + ", " +
                shape_string(weight.shape()) + ", " + shape_string(bias.shape()) + " do not compose");
  }
  const std::size_t k = c_sem.dim(0), out = weight.dim(0), in = weight.dim(1);
  Tensor c1({k, out});
  kernels::gemm_nt(c_sem.data(), weight.data(), c1.data(), k, in, out, false);
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t j = 0; j < out; ++j) c1.at(r, j) += bias[j];
  return c1;
}

inline Tensor effective_residual_codebook(const Tensor& coefficients, const Tensor& basis) {
  return matmul(coefficients, basis);
}

struct Nearest {
  int index = 0;
  double distance = 0.0;  // squared Euclidean
};

// Exhaustive scan; strict comparison keeps the lowest index on ties.
inline Nearest nearest_codeword(std::span<const double> query, const Tensor& codebook) {
  if (codebook.rank() != 2 || codebook.dim(0) == 0 || codebook.dim(1) != query.size()) {
    throw Error("nearest_codeword: query of width " + std::to_string(query.size()) + " against codebook " +
                shape_string(codebook.shape()));
  }
  const std::size_t k = codebook.dim(0), d = codebook.dim(1);
  Nearest best{0, std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i < k; ++i) {
    const double* c = codebook.data() + i * d;
    double dist = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = query[j] - c[j];
      dist += diff * diff;
    }
    if (dist < best.distance) best = {static_cast<int>(i), dist};
  }
  return best;
}

inline std::vector<int> nearest_indices(const Tensor& queries, const Tensor& codebook) {
  std::vector<int> out(queries.dim(0));
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = nearest_codeword(queries.row(t), codebook).index;
  return out;
}

inline Tensor gather(const Tensor& codebook, const std::vector<int>& indices) {
  const std::size_t d = codebook.dim(1);
  Tensor out({indices.size(), d});
  for (std::size_t t = 0; t < indices.size(); ++t) {
    if (indices[t] < 0 || static_cast<std::size_t>(indices[t]) >= codebook.dim(0))
      throw Error("gather: index " + std::to_string(indices[t]) + " out of range");
    std::copy_n(codebook.data() + static_cast<std::size_t>(indices[t]) * d, d, out.data() + t * d);
  }
  return out;
}

struct VqSelection {
  std::vector<int> indices;
  Tensor codes;
};

inline VqSelection quantize_against(const Tensor& x, const Tensor& codebook) {
  auto idx = nearest_indices(x, codebook);
  Tensor codes = gather(codebook, idx);
  return {std::move(idx), std::move(codes)};
}

inline Tensor acoustic_residual(const Tensor& h, const Tensor& e1) {
  require_same_shape(h, e1, "acoustic_residual");
  Tensor r(h.shape());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = h[i] - e1[i];
  return r;
}

inline Tensor add_codes(const Tensor& e1, const Tensor& e2) {
  require_same_shape(e1, e2, "fuse");
  Tensor out(e1.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = e1[i] + e2[i];
  return out;
}

namespace ag {

// Value e1 + e2, gradient straight through to h.
inline Var fuse_and_passthrough(const Var& h, const Tensor& e1, const Tensor& e2) {
  return straight_through(h, Var(add_codes(e1, e2)));
}

// mean_sq(sg(input) - code) + beta * mean_sq(input - sg(code))
inline Var commitment_loss(const Var& input, const Var& code, double beta = 0.25) {
  return add(mean_square(sub(detach(input), code)), scale(mean_square(sub(input, detach(code))), beta));
}

}  // namespace ag

struct Utilization {
  double used_fraction = 0.0;
  double perplexity = 0.0;
};

inline Utilization utilization_stats(const std::vector<int>& indices, std::size_t k) {
  if (k == 0) throw Error("utilization_stats: empty codebook");
  std::vector<std::size_t> counts(k, 0);
  for (int i : indices) {
    if (i < 0 || static_cast<std::size_t>(i) >= k)
      throw Error("utilization_stats: index " + std::to_string(i) + " outside [0, " + std::to_string(k) + ")");
    ++counts[static_cast<std::size_t>(i)];
  }
  if (indices.empty()) return {0.0, 0.0};
  std::size_t used = 0;
  double entropy = 0.0;
  const double n = static_cast<double>(indices.size());
  for (auto c : counts) {
    if (!c) continue;
    ++used;
    const double p = static_cast<double>(c) / n;
    entropy -= p * std::log(p);
  }
  return {static_cast<double>(used) / static_cast<double>(k), std::exp(entropy)};
}

// ---------------------------------------------------------------------------
// Quantizer module

struct QuantizerConfig {
  std::size_t k1 = 1000;
  std::size_t semantic_dim = 768;
  std::size_t k2 = 1024;
  std::size_t latent_dim = 512;
  double beta = 0.25;
  bool no_q1 = false;
  bool no_q2 = false;
  bool q1_random_learnable = false;
  // Control arms for the utilization experiments: Q1 looks up the frozen
  // codebook with no projection; Q2 is an ordinary learnable codebook.
  bool q1_direct_lookup = false;
  bool q2_plain_vq = false;

  // Widths written to the token header; an ablated stream has one code.
  std::size_t stream_k1() const { return no_q1 ? 1 : k1; }
  std::size_t stream_k2() const { return no_q2 ? 1 : k2; }

  void validate() const {
    if (k1 == 0 || k2 == 0 || semantic_dim == 0 || latent_dim == 0) throw Error("quantizer: zero dimension");
    if (k1 > 65535 || k2 > 65535) throw Error("quantizer: codebook sizes must fit in 16 bits");
    if (no_q1 && no_q2) throw Error("quantizer: cannot disable both quantizers");
    if (q1_direct_lookup && semantic_dim != latent_dim)
      throw Error("quantizer: direct lookup needs semantic_dim == latent_dim");
    if (q1_direct_lookup && q1_random_learnable) throw Error("quantizer: conflicting Q1 variants");
  }

  bool operator==(const QuantizerConfig&) const = default;
};

struct QuantizationResult {
  std::vector<int> semantic_indices;
  std::vector<int> residual_indices;
  Tensor e1, e2, e_final;
  double commit1 = 0.0, commit2 = 0.0;
};

// Training-graph output.
struct QuantizerOutput {
  ag::Var decoder_input;
  ag::Var commit1, commit2;
  std::vector<int> semantic_indices;
  std::vector<int> residual_indices;
};

// Row-orthonormal (rows <= cols) or column-orthonormal matrix from a Gaussian
// draw; spectral norm 1.
inline Tensor orthogonal_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows == cols) {
    Tensor eye({rows, cols});
    for (std::size_t i = 0; i < rows; ++i) eye.at(i, i) = 1.0;
    return eye;
  }
  const std::size_t tall = std::max(rows, cols), wide = std::min(rows, cols);
  Eigen::MatrixXd g(tall, wide);
  for (Eigen::Index i = 0; i < g.rows(); ++i)
    for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(tall, wide);
  Tensor out({rows, cols});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out.at(i, j) = rows >= cols ? q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))
                                  : q(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
  return out;
}

class DualQuantizer {
 public:
  DualQuantizer() = default;
  DualQuantizer(QuantizerConfig cfg, Tensor semantic_codebook, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    if (semantic_codebook.rank() != 2 || semantic_codebook.dim(0) != cfg_.k1 ||
        semantic_codebook.dim(1) != cfg_.semantic_dim) {
      throw ConfigMismatch("quantizer: semantic codebook " + shape_string(semantic_codebook.shape()) +
                           " does not match configured " + std::to_string(cfg_.k1) + "x" +
                           std::to_string(cfg_.semantic_dim));
    }
    require_finite(semantic_codebook, "semantic codebook");
    const std::size_t d = cfg_.latent_dim;
    c_sem_ = ag::Var(std::move(semantic_codebook));
    proj_weight_ = ag::Var::parameter(orthogonal_matrix(d, cfg_.semantic_dim, rng));
    proj_bias_ = ag::Var::parameter(Tensor({d}));
    c_coeff_ = ag::Var(nn::normal_tensor({cfg_.k2, d}, 1.0 / std::sqrt(static_cast<double>(d)), rng));
    Tensor eye({d, d});
    for (std::size_t i = 0; i < d; ++i) eye.at(i, i) = 1.0;
    basis_ = ag::Var::parameter(std::move(eye));
    if (cfg_.q1_random_learnable)
      learnable_c1_ = ag::Var::parameter(nn::normal_tensor({cfg_.k1, d}, 1.0 / std::sqrt(static_cast<double>(d)), rng));
    if (cfg_.q2_plain_vq) learnable_c2_ = ag::Var::parameter(c_coeff_.value());
  }

  const QuantizerConfig& config() const noexcept { return cfg_; }

  const Tensor& frozen_semantic() const { return c_sem_.value(); }
  const Tensor& frozen_coefficients() const { return c_coeff_.value(); }

  // Learnable parameters only; the frozen codebooks are never listed here.
  void collect(nn::ParameterList& out, const std::string& prefix) const {
    if (cfg_.q1_random_learnable) {
      out.push_back({prefix + ".q1.codebook", learnable_c1_});
    } else if (!cfg_.q1_direct_lookup) {
      out.push_back({prefix + ".q1.proj.weight", proj_weight_});
      out.push_back({prefix + ".q1.proj.bias", proj_bias_});
    }
    if (cfg_.q2_plain_vq) out.push_back({prefix + ".q2.codebook", learnable_c2_});
    else out.push_back({prefix + ".q2.basis", basis_});
  }

  void collect_frozen(nn::ParameterList& out, const std::string& prefix) const {
    out.push_back({prefix + ".q1.c_sem", c_sem_});
    out.push_back({prefix + ".q2.c_coeff", c_coeff_});
  }

  ag::Var& projector_weight() { return proj_weight_; }
  ag::Var& projector_bias() { return proj_bias_; }
  ag::Var& basis() { return basis_; }

  // Effective codebooks as graph nodes.
  ag::Var semantic_codebook_var() const {
    if (cfg_.q1_random_learnable) return learnable_c1_;
    if (cfg_.q1_direct_lookup) return c_sem_;
    return ag::linear(c_sem_, proj_weight_, proj_bias_);
  }
  ag::Var residual_codebook_var() const {
    if (cfg_.q2_plain_vq) return learnable_c2_;
    return ag::matmul(c_coeff_, basis_);
  }

  // Effective codebooks as values, cached until the parameters change.
  Tensor semantic_codebook() const {
    return cached(caches_->semantic, semantic_key(), [&] {
      if (cfg_.q1_random_learnable) return learnable_c1_.value();
      if (cfg_.q1_direct_lookup) return c_sem_.value();
      return project_semantic_codebook(c_sem_.value(), proj_weight_.value(), proj_bias_.value());
    });
  }
  Tensor residual_codebook() const {
    return cached(caches_->residual, residual_key(), [&] {
      if (cfg_.q2_plain_vq) return learnable_c2_.value();
      require_finite(basis_.value(), "residual basis");
      return effective_residual_codebook(c_coeff_.value(), basis_.value());
    });
  }

  QuantizerOutput forward(const ag::Var& h) const {
    check_latent(h.value());
    const std::size_t t = h.dim(0), d = cfg_.latent_dim;
    QuantizerOutput out;
    Tensor e1_value({t, d}), e2_value({t, d});
    ag::Var r = h;
    if (cfg_.no_q1) {
      out.semantic_indices.assign(t, 0);
      out.commit1 = ag::Var(Tensor::scalar(0.0));
    } else {
      ag::Var c1 = semantic_codebook_var();
      out.semantic_indices = nearest_indices(h.value(), c1.value());
      ag::Var e1 = ag::gather_rows(c1, out.semantic_indices);
      out.commit1 = ag::commitment_loss(h, e1, cfg_.beta);
      r = ag::sub(h, ag::detach(e1));
      e1_value = e1.value();
    }
    if (cfg_.no_q2) {
      out.residual_indices.assign(t, 0);
      out.commit2 = ag::Var(Tensor::scalar(0.0));
    } else {
      ag::Var c2 = residual_codebook_var();
      out.residual_indices = nearest_indices(r.value(), c2.value());
      ag::Var e2 = ag::gather_rows(c2, out.residual_indices);
      out.commit2 = ag::commitment_loss(r, e2, cfg_.beta);
      e2_value = e2.value();
    }
    out.decoder_input = ag::fuse_and_passthrough(h, e1_value, e2_value);
    return out;
  }

  QuantizationResult quantize(const Tensor& h) const {
    check_latent(h);
    const std::size_t t = h.dim(0), d = cfg_.latent_dim;
    QuantizationResult res;
    res.e1 = Tensor({t, d});
    res.e2 = Tensor({t, d});
    Tensor r = h;
    if (cfg_.no_q1) {
      res.semantic_indices.assign(t, 0);
    } else {
      auto sel = quantize_against(h, semantic_codebook());
      res.semantic_indices = std::move(sel.indices);
      res.e1 = std::move(sel.codes);
      r = acoustic_residual(h, res.e1);
      res.commit1 = (1.0 + cfg_.beta) * mean_sq_diff(h, res.e1);
    }
    if (cfg_.no_q2) {
      res.residual_indices.assign(t, 0);
    } else {
      auto sel = quantize_against(r, residual_codebook());
      res.residual_indices = std::move(sel.indices);
      res.e2 = std::move(sel.codes);
      res.commit2 = (1.0 + cfg_.beta) * mean_sq_diff(r, res.e2);
    }
    res.e_final = add_codes(res.e1, res.e2);
    return res;
  }

  // Token pairs back to e_final.
  Tensor dequantize(const std::vector<int>& semantic, const std::vector<int>& residual) const {
    if (semantic.size() != residual.size()) throw Error("dequantize: stream lengths differ");
    const std::size_t t = semantic.size(), d = cfg_.latent_dim;
    Tensor e1 = cfg_.no_q1 ? Tensor({t, d}) : gather(semantic_codebook(), semantic);
    Tensor e2 = cfg_.no_q2 ? Tensor({t, d}) : gather(residual_codebook(), residual);
    return add_codes(e1, e2);
  }

 private:
  struct Cache {
    std::optional<std::uint64_t> key;
    Tensor value;
  };
  struct Caches {
    Cache semantic, residual;
    std::mutex mutex;
  };

  static double mean_sq_diff(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return a.size() ? s / static_cast<double>(a.size()) : 0.0;
  }

  void check_latent(const Tensor& h) const {
    if (h.rank() != 2 || h.dim(1) != cfg_.latent_dim)
      throw Error("quantizer: latent " + shape_string(h.shape()) + " does not have width " +
                  std::to_string(cfg_.latent_dim));
    require_finite(h, "quantizer input");
  }

  std::uint64_t semantic_key() const {
    Fnv1a64 f;
    if (cfg_.q1_random_learnable) {
      f.update(learnable_c1_.value().values());
    } else if (!cfg_.q1_direct_lookup) {
      f.update(proj_weight_.value().values());
      f.update(proj_bias_.value().values());
    }
    return f.digest();
  }
  std::uint64_t residual_key() const {
    Fnv1a64 f;
    f.update((cfg_.q2_plain_vq ? learnable_c2_ : basis_).value().values());
    return f.digest();
  }

  template <class F>
  Tensor cached(Cache& cache, std::uint64_t key, F compute) const {
    std::lock_guard lock(caches_->mutex);
    if (cache.key != key) {
      cache.value = compute();
      cache.key = key;
    }
    return cache.value;
  }

  QuantizerConfig cfg_;
  ag::Var c_sem_, proj_weight_, proj_bias_;
  ag::Var c_coeff_, basis_;
  ag::Var learnable_c1_, learnable_c2_;
  std::shared_ptr<Caches> caches_ = std::make_shared<Caches>();
};

}  // namespace sacodec
