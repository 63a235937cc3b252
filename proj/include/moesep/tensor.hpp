// Copyright 2026 moesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "moesep/common.hpp"

namespace moesep {

// Dense row-major tensor. Training code instantiates Scalar = float,
// gradient checks instantiate Scalar = double.
template <class Scalar>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), Scalar(0)) {}

  Tensor(std::initializer_list<int64_t> shape)
      : Tensor(std::vector<int64_t>(shape)) {}

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int64_t> shape, Scalar value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
  }

  static Tensor from(std::vector<int64_t> shape, std::vector<Scalar> values) {
    Tensor t;
    t.shape_ = std::move(shape);
    if (static_cast<int64_t>(values.size()) != checked_numel(t.shape_)) {
      throw std::invalid_argument("Tensor::from: data size does not match shape");
    }
    t.data_ = std::move(values);
    return t;
  }

  static Tensor randn(std::vector<int64_t> shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.data_) v = static_cast<Scalar>(dist(rng));
    return t;
  }

  static Tensor uniform(std::vector<int64_t> shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.data_) v = static_cast<Scalar>(dist(rng));
    return t;
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  Scalar operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  Scalar& operator()(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  Scalar operator()(int64_t i, int64_t j) const {
    return data_[static_cast<size_t>(i * shape_[1] + j)];
  }

  Scalar& operator()(int64_t i, int64_t j, int64_t k) {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  Scalar operator()(int64_t i, int64_t j, int64_t k) const {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }

  // Pointer to row i of a 2-D tensor (or to slice i of the leading dim).
  Scalar* row(int64_t i) { return data_.data() + i * row_stride(); }
  const Scalar* row(int64_t i) const { return data_.data() + i * row_stride(); }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (Scalar v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other);
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator-=(const Tensor& other) {
    require_same_shape(other);
    for (size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
  }

  Tensor& operator*=(Scalar s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  void add_scaled(const Tensor& other, Scalar scale) {
    require_same_shape(other);
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
  }

  template <class Other>
  Tensor<Other> cast() const {
    Tensor<Other> out;
    out = Tensor<Other>(shape_);
    for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<Other>(data_[static_cast<size_t>(i)]);
    return out;
  }

 private:
  static int64_t checked_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  int64_t row_stride() const {
    int64_t s = 1;
    for (size_t i = 1; i < shape_.size(); ++i) s *= shape_[i];
    return s;
  }

  void require_same_shape(const Tensor& other) const {
    if (!same_shape(other)) throw std::invalid_argument("Tensor: shape mismatch");
  }

  std::vector<int64_t> shape_;
  std::vector<Scalar> data_;
};

namespace detail {

template <class Scalar>
using EigenMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class Scalar>
Eigen::Map<const EigenMat<Scalar>> map2d(const Tensor<Scalar>& t) {
  if (t.rank() != 2) throw std::invalid_argument("matmul: tensor is not 2-D");
  return Eigen::Map<const EigenMat<Scalar>>(t.data(), t.dim(0), t.dim(1));
}

template <class Scalar>
Eigen::Map<EigenMat<Scalar>> map2d(Tensor<Scalar>& t) {
  if (t.rank() != 2) throw std::invalid_argument("matmul: tensor is not 2-D");
  return Eigen::Map<EigenMat<Scalar>>(t.data(), t.dim(0), t.dim(1));
}

}  // namespace detail

// C = A · B for 2-D tensors.
template <class Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.dim(1) != b.dim(0)) throw std::invalid_argument("matmul: inner dimensions differ");
  Tensor<Scalar> c({a.dim(0), b.dim(1)});
  detail::map2d(c).noalias() = detail::map2d(a) * detail::map2d(b);
  return c;
}

// C = Aᵀ · B
template <class Scalar>
Tensor<Scalar> matmul_tn(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.dim(0) != b.dim(0)) throw std::invalid_argument("matmul_tn: leading dimensions differ");
  Tensor<Scalar> c({a.dim(1), b.dim(1)});
  detail::map2d(c).noalias() = detail::map2d(a).transpose() * detail::map2d(b);
  return c;
}

// C = A · Bᵀ
template <class Scalar>
Tensor<Scalar> matmul_nt(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.dim(1) != b.dim(1)) throw std::invalid_argument("matmul_nt: trailing dimensions differ");
  Tensor<Scalar> c({a.dim(0), b.dim(0)});
  detail::map2d(c).noalias() = detail::map2d(a) * detail::map2d(b).transpose();
  return c;
}

// out += Aᵀ · B  (gradient accumulation for linear weights)
template <class Scalar>
void add_matmul_tn(Tensor<Scalar>& out, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::map2d(out).noalias() += detail::map2d(a).transpose() * detail::map2d(b);
}

}  // namespace moesep
