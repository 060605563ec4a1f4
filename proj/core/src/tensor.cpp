#include "adfseg/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "adfseg/errors.hpp"

namespace adfseg::nn {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (int64_t d : shape_) {
    if (d < 0) throw ContractError("Tensor: negative dimension in shape " + shape_str(shape_));
  }
  data_.assign(static_cast<size_t>(shape_numel(shape_)), Scalar{0});
}

Tensor::Tensor(Shape shape, std::vector<Scalar> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size())) {
    throw ContractError("Tensor: value count does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::full(Shape shape, Scalar v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

int64_t Tensor::dim(int64_t i) const {
  if (i < 0 || i >= rank()) throw ContractError("Tensor::dim: axis out of range");
  return shape_[static_cast<size_t>(i)];
}

Scalar Tensor::item() const {
  if (numel() != 1) throw ContractError("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
  return data_[0];
}

bool Tensor::all_finite() const {
  for (Scalar v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(Scalar v) {
  for (auto& x : data_) x = v;
}

void Tensor::add_(const Tensor& other) {
  if (!same_shape(other)) {
    throw ContractError("Tensor::add_: shape mismatch " + shape_str(shape_) + " vs " + shape_str(other.shape_));
  }
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

void Tensor::scale_(Scalar c) {
  for (auto& x : data_) x *= c;
}

}  // namespace adfseg::nn
