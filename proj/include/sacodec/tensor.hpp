#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sacodec/error.hpp"

namespace sacodec {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

// Dense row-major array of doubles. Value semantics; copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw Error("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                  shape_string(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
    return Tensor({rows, cols}, std::vector<double>(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  std::span<double> row(std::size_t i) { return {data_.data() + i * shape_[1], shape_[1]}; }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * shape_[1], shape_[1]};
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw Error("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (a.shape() != b.shape()) {
    throw Error(std::string(where) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                shape_string(b.shape()));
  }
}

inline Tensor transpose(const Tensor& a) {
  const std::size_t n = a.dim(0), m = a.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

namespace kernels {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const RowMat> view(const double* p, std::size_t r, std::size_t c) {
  return {p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}
inline Eigen::Map<RowMat> view(double* p, std::size_t r, std::size_t c) {
  return {p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}

// c[n x m] (+)= a[n x k] * b[k x m]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                    std::size_t m, bool accumulate) {
  auto cm = view(c, n, m);
  if (accumulate) cm.noalias() += view(a, n, k) * view(b, k, m);
  else cm.noalias() = view(a, n, k) * view(b, k, m);
}

// c[n x m] (+)= a[n x k] * b[m x k]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                    std::size_t m, bool accumulate) {
  auto cm = view(c, n, m);
  if (accumulate) cm.noalias() += view(a, n, k) * view(b, m, k).transpose();
  else cm.noalias() = view(a, n, k) * view(b, m, k).transpose();
}

// c[k x m] (+)= a[n x k]^T * b[n x m]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                    std::size_t m, bool accumulate) {
  auto cm = view(c, k, m);
  if (accumulate) cm.noalias() += view(a, n, k).transpose() * view(b, n, m);
  else cm.noalias() = view(a, n, k).transpose() * view(b, n, m);
}

}  // namespace kernels

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw Error("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                shape_string(b.shape()));
  }
  Tensor c({a.dim(0), b.dim(1)});
  kernels::gemm_nn(a.data(), b.data(), c.data(), a.dim(0), a.dim(1), b.dim(1), false);
  return c;
}

}  // namespace sacodec
