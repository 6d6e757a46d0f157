#pragma once

#include <memory>
#include <vector>

#include "eot/graph.hpp"
#include "eot/tensor.hpp"

namespace eot::view {

/// One concrete sampled transformation compiled to an affine-plus-clamp map:
///
///   t(x) = clamp( (S x) * mul + add, 0, 1 )
///
/// where S is a sparse spatial map applied per channel, mul an optional
/// per-channel factor, and add a dense per-pixel field absorbing background
/// fill, brightness, and frozen noise. Every transformation family in the
/// repository (2D warp + photometrics, 3D render + lighting) lowers to this
/// form, so the direct and graph evaluation paths share one set of kernels
/// and produce bit-identical values.
struct ViewTransform {
  std::shared_ptr<const diffmath::SparseMap> map;
  std::vector<real> channel_mul;  // empty means all ones
  Tensor add = Tensor::scalar(0.0);  // [out_h,out_w,C]; all-zero is skipped
  bool clamp_output = true;

  std::size_t channels() const;
  Shape out_shape() const;

  /// Direct evaluation of t(x) for x of shape [in_h,in_w,C].
  Tensor apply(const Tensor& x) const;

  /// Appends the same computation to a graph; gradients flow to x only.
  diffmath::NodeRef append(diffmath::Graph& graph, diffmath::NodeRef x) const;

  void validate() const;
};

}  // namespace eot::view
