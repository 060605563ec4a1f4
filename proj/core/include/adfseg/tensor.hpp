#pragma once

#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace adfseg::nn {

using Scalar = double;
using Shape = std::vector<int64_t>;

/// Dense row-major tensor of doubles. Rank is small (<= 4 in this codebase).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<Scalar> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, Scalar v);
  static Tensor scalar(Scalar v) { return full({}, v); }

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t i) const;
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::vector<Scalar>& vec() { return data_; }
  const std::vector<Scalar>& vec() const { return data_; }

  Scalar& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  Scalar operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  Scalar& at(int64_t i) { return data_[static_cast<size_t>(i)]; }
  Scalar& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * dim(1) + j)]; }
  Scalar& at(int64_t i, int64_t j, int64_t k) {
    return data_[static_cast<size_t>((i * dim(1) + j) * dim(2) + k)];
  }
  Scalar& at(int64_t i, int64_t j, int64_t k, int64_t l) {
    return data_[static_cast<size_t>(((i * dim(1) + j) * dim(2) + k) * dim(3) + l)];
  }
  Scalar at(int64_t i) const { return data_[static_cast<size_t>(i)]; }
  Scalar at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * dim(1) + j)]; }
  Scalar at(int64_t i, int64_t j, int64_t k) const {
    return data_[static_cast<size_t>((i * dim(1) + j) * dim(2) + k)];
  }
  Scalar at(int64_t i, int64_t j, int64_t k, int64_t l) const {
    return data_[static_cast<size_t>(((i * dim(1) + j) * dim(2) + k) * dim(3) + l)];
  }

  /// Scalar tensors (rank 0 or numel 1) collapse to their single value.
  Scalar item() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  void fill(Scalar v);
  void add_(const Tensor& other);   // elementwise +=
  void scale_(Scalar c);

 private:
  Shape shape_;
  std::vector<Scalar> data_;
};

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

}  // namespace adfseg::nn
