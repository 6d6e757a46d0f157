#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "eot/tensor.hpp"

namespace eot::diffmath {

/// Sparse affine coordinate map from one spatial grid to another, stored as
/// CSR over output pixels. Applied per channel: out[p,c] = sum_k w_k * x[col_k,c].
/// Rows left empty mean the output pixel takes no input (background handled
/// by an additive constant outside the map).
struct SparseMap {
  std::size_t out_h = 0, out_w = 0;
  std::size_t in_h = 0, in_w = 0;
  std::vector<std::uint32_t> row_offsets;  // out_h*out_w + 1 entries
  std::vector<std::uint32_t> cols;         // spatial texel index row*in_w+col
  std::vector<real> weights;

  std::size_t rows() const { return out_h * out_w; }
  void validate() const;  // throws on inconsistent structure
};

enum class Op {
  kInput,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kScale,
  kOffset,
  kMatMul,
  kBiasAdd,
  kConv2d,
  kMaxPool2,
  kRelu,
  kClamp,
  kPower,
  kLogSoftmax,
  kGather,
  kSparseMatVec,
  kRgbToLab,
  kStack,
  kReshape,
  kReduceSum,
  kReduceMean,
};

const char* op_name(Op op);

struct NodeRef {
  int id = -1;
};

/// Computation graph over tensors. Nodes are appended in topological order by
/// construction and are immutable once added; shapes are inferred and checked
/// at build time. Graphs and tensors never mutate during evaluation, so a
/// built graph may be evaluated from many threads concurrently.
class Graph {
 public:
  NodeRef input(const std::string& name, Shape shape);
  NodeRef constant(Tensor value, const std::string& label = "constant");

  NodeRef add(NodeRef a, NodeRef b);
  NodeRef sub(NodeRef a, NodeRef b);
  NodeRef mul(NodeRef a, NodeRef b);
  NodeRef scale(NodeRef a, real factor);
  NodeRef offset(NodeRef a, real shift);
  NodeRef matmul(NodeRef a, NodeRef b);
  /// x[..., C] + bias[C].
  NodeRef bias_add(NodeRef x, NodeRef bias);
  /// NHWC input, [kh,kw,cin,cout] kernel, valid padding, stride 1.
  NodeRef conv2d(NodeRef x, NodeRef kernel, NodeRef bias, const std::string& label = "conv2d");
  /// 2x2 window, stride 2, floor semantics on odd dims. Ties take the
  /// first (row-major) element of the window.
  NodeRef maxpool2(NodeRef x);
  /// Subgradient at 0 taken from the right (derivative 1).
  NodeRef relu(NodeRef x);
  /// Subgradient convention: derivative 1 at both bounds (taken from inside
  /// the interval).
  NodeRef clamp(NodeRef x, real lo, real hi);
  /// Elementwise x^p. For p < 1 the derivative at x == 0 is defined as 0.
  NodeRef power(NodeRef x, real exponent);
  /// Log-softmax over the last axis.
  NodeRef log_softmax(NodeRef x);
  /// out[k] = x.flat[indices[k]].
  NodeRef gather(NodeRef x, std::vector<std::size_t> indices);
  /// Applies a sparse spatial map per channel: [in_h,in_w,C] -> [out_h,out_w,C].
  NodeRef sparse_matvec(std::shared_ptr<const SparseMap> map, NodeRef x);
  /// sRGB in [0,1] (D65) to CIELAB, last axis must be 3.
  NodeRef rgb_to_lab(NodeRef x);
  /// Stacks k same-shape tensors into [k, ...].
  NodeRef stack(const std::vector<NodeRef>& parts);
  NodeRef reshape(NodeRef x, Shape shape);
  NodeRef reduce_sum(NodeRef x);
  NodeRef reduce_mean(NodeRef x);

  void set_output(const std::string& name, NodeRef node);

  std::size_t node_count() const { return nodes_.size(); }
  const Shape& shape_of(NodeRef node) const;
  const std::map<std::string, int>& inputs() const { return input_ids_; }
  const std::map<std::string, int>& outputs() const { return output_ids_; }

 private:
  friend class Executor;

  struct GatherMeta {
    std::vector<std::size_t> indices;
  };
  struct SparseMeta {
    std::shared_ptr<const SparseMap> map;
  };
  struct ScalarPairMeta {
    real a = 0.0, b = 0.0;  // clamp lo/hi
  };
  using Meta = std::variant<std::monostate, Tensor, real, ScalarPairMeta, GatherMeta, SparseMeta>;

  struct Node {
    Op op;
    Shape shape;
    std::vector<int> args;
    Meta meta;
    std::string label;
  };

  NodeRef push(Node node);
  const Node& node(NodeRef ref) const;
  const Node& checked(NodeRef ref, const char* context) const;
  [[noreturn]] void fail(const std::string& message) const;

  std::vector<Node> nodes_;
  std::map<std::string, int> input_ids_;
  std::map<std::string, int> output_ids_;
};

/// Deterministic forward pass. Every declared input must be bound exactly
/// once; shapes must match the declaration. Throws naming the offending node
/// on shape mismatch or non-finite intermediate.
std::map<std::string, Tensor> evaluate(const Graph& graph,
                                       const std::map<std::string, Tensor>& inputs);

/// d(scalar_output)/d(wrt) by reverse accumulation; result has the shape of
/// the wrt input. scalar_output must have shape [].
Tensor gradient(const Graph& graph, const std::map<std::string, Tensor>& inputs,
                const std::string& wrt, const std::string& scalar_output);

/// One forward plus one backward pass for several wrt inputs.
std::map<std::string, Tensor> gradients(const Graph& graph,
                                        const std::map<std::string, Tensor>& inputs,
                                        const std::vector<std::string>& wrts,
                                        const std::string& scalar_output);

/// Forward values plus gradient in a single execution.
struct ValueAndGradient {
  std::map<std::string, Tensor> outputs;
  Tensor grad;
};
ValueAndGradient value_and_gradient(const Graph& graph,
                                    const std::map<std::string, Tensor>& inputs,
                                    const std::string& wrt, const std::string& scalar_output);

/// Forward values plus gradients for several inputs in a single execution.
struct ValueAndGradients {
  std::map<std::string, Tensor> outputs;
  std::map<std::string, Tensor> grads;
};
ValueAndGradients value_and_gradients(const Graph& graph,
                                      const std::map<std::string, Tensor>& inputs,
                                      const std::vector<std::string>& wrts,
                                      const std::string& scalar_output);

/// Central finite differences of scalar_output with respect to every element
/// of wrt, compared elementwise against gradient(); returns the max relative
/// error with denominator max(|a|,|b|,1e-8).
real finite_diff_check(const Graph& graph, const std::map<std::string, Tensor>& inputs,
                       const std::string& wrt, const std::string& scalar_output, real step);

struct GradCheckRow {
  std::string primitive;
  real max_rel_error = 0.0;
  bool pass = false;
};

/// Finite-difference check for every registered primitive at random non-kink
/// points; pass threshold 1e-4 with step 1e-5.
std::vector<GradCheckRow> gradcheck_primitives(std::uint64_t seed);

}  // namespace eot::diffmath
