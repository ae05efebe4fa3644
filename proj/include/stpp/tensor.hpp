// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 stppmot contributors

#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "stpp/common.hpp"

namespace stpp {

/// Dense n-dimensional array of 64-bit reals in row-major order, with an
/// optional gradient buffer of the same length. This is the numeric
/// substrate for every layer and map in the library.
class Tensor {
 public:
  Tensor() = default;

  /// Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(checked_size(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_size(shape_) != data_.size())
      throw std::invalid_argument("Tensor: shape does not match data length");
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at3(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double at3(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double& at4(std::size_t f, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((f * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  double at4(std::size_t f, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((f * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  /// Gradient buffer; created on demand, zero-filled.
  bool has_grad() const { return !grad_.empty(); }
  std::vector<double>& grad() {
    if (grad_.empty()) grad_.assign(data_.size(), 0.0);
    return grad_;
  }
  const std::vector<double>& grad() const { return grad_; }
  void clear_grad() { grad_.clear(); }

  /// Serialization: u32 rank, u32 extents, then the data as little-endian
  /// 64-bit reals. Used by checkpoints and frame files.
  void write(std::ostream& os) const {
    detail::write_u32_le(os, static_cast<std::uint32_t>(shape_.size()));
    for (std::size_t e : shape_) detail::write_u32_le(os, static_cast<std::uint32_t>(e));
    for (double v : data_) detail::write_f64_le(os, v);
  }

  static Tensor read(std::istream& is) {
    std::uint32_t rank = detail::read_u32_le(is);
    if (rank > 8) throw DataError("tensor record: implausible rank " + std::to_string(rank));
    std::vector<std::size_t> shape(rank);
    for (auto& e : shape) {
      e = detail::read_u32_le(is);
      if (e == 0) throw DataError("tensor record: zero extent");
    }
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = detail::read_f64_le(is);
    return t;
  }

 private:
  static std::size_t checked_size(const std::vector<std::size_t>& shape) {
    if (shape.empty()) throw std::invalid_argument("Tensor: empty shape");
    std::size_t n = 1;
    for (std::size_t e : shape) {
      if (e == 0) throw std::invalid_argument("Tensor: zero extent");
      n *= e;
    }
    return n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

/// Uniform fill in [-bound, bound]; the standard fan-in initializer lives
/// in the layer constructors.
inline void fill_uniform(Tensor& t, Rng& rng, double bound) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
}

}  // namespace stpp
