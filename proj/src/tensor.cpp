#include "eot/tensor.hpp"

#include <cmath>
#include <sstream>

namespace eot::diffmath {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ",";
    out << shape[i];
  }
  out << "]";
  return out.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(numel(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<real> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel(shape_) != data_.size()) {
    throw Error("tensor: shape " + shape_to_string(shape_) + " does not match data length " +
                std::to_string(data_.size()));
  }
}

Tensor Tensor::scalar(real value) { return Tensor({}, {value}); }

Tensor Tensor::full(Shape shape, real value) {
  Tensor t(std::move(shape));
  for (auto& v : t.data_) v = value;
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw Error("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                shape_to_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::flat_index(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != shape_.size()) {
    throw Error("tensor: index rank " + std::to_string(idx.size()) + " vs shape " +
                shape_to_string(shape_));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : idx) {
    if (i >= shape_[axis]) {
      throw Error("tensor: index out of bounds at axis " + std::to_string(axis));
    }
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

real& Tensor::at(std::initializer_list<std::size_t> idx) { return data_[flat_index(idx)]; }

real Tensor::at(std::initializer_list<std::size_t> idx) const { return data_[flat_index(idx)]; }

real Tensor::item() const {
  if (data_.size() != 1) {
    throw Error("tensor: item() on tensor with " + std::to_string(data_.size()) + " elements");
  }
  return data_[0];
}

bool Tensor::all_finite() const {
  for (real v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

real max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw Error("tensor: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                shape_to_string(b.shape()));
  }
  real m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

}  // namespace eot::diffmath
