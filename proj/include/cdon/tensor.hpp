#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cdon/common.hpp"

namespace cdon {

/// (batch, channels, height, width).
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense row-major NCHW array with an optional gradient slot.
///
/// The gradient buffer is allocated on demand (ensure_grad) and always has
/// the same shape as the data. Parameters carry requires_grad = true; the
/// autodiff Graph accumulates into their slot on backward.
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape shape, real fill = 0);
  Tensor4(Shape shape, std::vector<real> data);

  static Tensor4 scalar(real v) { return Tensor4({1, 1, 1, 1}, v); }

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(int b, int k, int i, int j) const {
    return ((static_cast<std::size_t>(b) * shape_.c + k) * shape_.h + i) * shape_.w + j;
  }
  real& operator()(int b, int k, int i, int j) { return data_[index(b, k, i, j)]; }
  real operator()(int b, int k, int i, int j) const { return data_[index(b, k, i, j)]; }
  real& operator[](std::size_t i) { return data_[i]; }
  real operator[](std::size_t i) const { return data_[i]; }

  std::span<real> data() { return data_; }
  std::span<const real> data() const { return data_; }
  const std::vector<real>& values() const { return data_; }
  real* ptr() { return data_.data(); }
  const real* ptr() const { return data_.data(); }

  /// Pointer to plane (b, k).
  real* plane(int b, int k) { return data_.data() + index(b, k, 0, 0); }
  const real* plane(int b, int k) const { return data_.data() + index(b, k, 0, 0); }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const { return !grad_.empty(); }
  std::span<real> grad() { return grad_; }
  std::span<const real> grad() const { return grad_; }
  void ensure_grad();
  void zero_grad();
  void clear_grad() { grad_.clear(); }

  /// Same data, new dims of equal element count.
  Tensor4 reshaped(Shape shape) const;
  void fill(real v);

  bool all_finite() const;
  /// Throws NumericError naming `op` when any value is NaN/Inf.
  void check_finite(const char* op) const;

  /// Bitwise equality of shape and data (grad ignored).
  bool same_as(const Tensor4& other) const;

 private:
  Shape shape_{};
  std::vector<real> data_;
  std::vector<real> grad_;
  bool requires_grad_ = false;
};

/// Throws DimensionError with `what` unless a == b.
void expect_shape(const Shape& a, const Shape& b, const char* what);

}  // namespace cdon
