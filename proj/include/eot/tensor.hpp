#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "eot/errors.hpp"

namespace eot::diffmath {

// Global numeric precision. Attack and gradient paths compare values at the
// 1e-5..1e-3 scale, which single precision cannot resolve reliably.
using real = double;

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major array of reals. Rank 0 (empty shape) is a scalar with one
/// element. Values are expected to stay finite; graph execution enforces it.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<real> data);

  static Tensor scalar(real value);
  static Tensor full(Shape shape, real value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const;

  real* data() { return data_.data(); }
  const real* data() const { return data_.data(); }

  real& operator[](std::size_t i) { return data_[i]; }
  real operator[](std::size_t i) const { return data_[i]; }

  /// Bounds-checked multi-index access (row-major).
  real& at(std::initializer_list<std::size_t> idx);
  real at(std::initializer_list<std::size_t> idx) const;

  /// Value of a one-element tensor.
  real item() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> idx) const;

  Shape shape_;
  std::vector<real> data_;
};

/// Largest elementwise |a-b|; shapes must match.
real max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace eot::diffmath

namespace eot {
using diffmath::max_abs_diff;
using diffmath::numel;
using diffmath::real;
using diffmath::Shape;
using diffmath::shape_to_string;
using diffmath::Tensor;
}  // namespace eot
