#include "cdon/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace cdon {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) +
         "," + std::to_string(w) + ")";
}

Tensor4::Tensor4(Shape shape, real fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw DimensionError("negative tensor dimension " + shape.str());
  }
  data_.assign(shape.size(), fill);
}

Tensor4::Tensor4(Shape shape, std::vector<real> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape.size()) {
    throw DimensionError("data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape.str());
  }
}

void Tensor4::ensure_grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), real(0));
}

void Tensor4::zero_grad() {
  ensure_grad();
  std::fill(grad_.begin(), grad_.end(), real(0));
}

Tensor4 Tensor4::reshaped(Shape shape) const {
  if (shape.size() != data_.size()) {
    throw DimensionError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  return Tensor4(shape, data_);
}

void Tensor4::fill(real v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor4::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](real v) { return std::isfinite(v); });
}

void Tensor4::check_finite(const char* op) const {
  if (!all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
}

bool Tensor4::same_as(const Tensor4& other) const {
  return shape_ == other.shape_ &&
         (data_.empty() ||
          std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(real)) == 0);
}

void expect_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    throw DimensionError(std::string(what) + ": shape " + a.str() + " vs " + b.str());
  }
}

}  // namespace cdon
