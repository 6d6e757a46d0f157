#include "eot/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <utility>

#include "eot/color.hpp"
#include "eot/errors.hpp"
#include "eot/rng.hpp"

namespace eot::diffmath {

namespace {

// C[m,n] += A[m,k] * B[k,n]
void gemm_acc(std::size_t m, std::size_t k, std::size_t n, const real* a, const real* b, real* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const real* arow = a + i * k;
    real* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const real av = arow[p];
      const real* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A^T B where A is [k,m], B is [k,n]
void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const real* a, const real* b,
                 real* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const real* arow = a + p * m;
    const real* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const real av = arow[i];
      real* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A B^T where A is [m,k], B is [n,k]
void gemm_nt_acc(std::size_t m, std::size_t k, std::size_t n, const real* a, const real* b,
                 real* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const real* arow = a + i * k;
    real* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const real* brow = b + j * k;
      real acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

std::string index_string(int id) { return "#" + std::to_string(id); }

}  // namespace

void SparseMap::validate() const {
  if (row_offsets.size() != rows() + 1) {
    throw Error("sparse map: row_offsets has " + std::to_string(row_offsets.size()) +
                " entries, expected " + std::to_string(rows() + 1));
  }
  if (row_offsets.front() != 0 || row_offsets.back() != cols.size()) {
    throw Error("sparse map: row_offsets must start at 0 and end at nnz");
  }
  if (cols.size() != weights.size()) {
    throw Error("sparse map: cols/weights size mismatch");
  }
  const std::size_t in_size = in_h * in_w;
  for (std::size_t r = 0; r + 1 < row_offsets.size(); ++r) {
    if (row_offsets[r] > row_offsets[r + 1]) {
      throw Error("sparse map: row_offsets must be non-decreasing");
    }
  }
  for (std::uint32_t c : cols) {
    if (c >= in_size) {
      throw Error("sparse map: column index " + std::to_string(c) + " out of range for " +
                  std::to_string(in_h) + "x" + std::to_string(in_w) + " input");
    }
  }
}

const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kConstant: return "constant";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kOffset: return "offset";
    case Op::kMatMul: return "matmul";
    case Op::kBiasAdd: return "bias_add";
    case Op::kConv2d: return "conv2d";
    case Op::kMaxPool2: return "maxpool2";
    case Op::kRelu: return "relu";
    case Op::kClamp: return "clamp";
    case Op::kPower: return "power";
    case Op::kLogSoftmax: return "log_softmax";
    case Op::kGather: return "gather";
    case Op::kSparseMatVec: return "sparse_matvec";
    case Op::kRgbToLab: return "rgb_to_lab";
    case Op::kStack: return "stack";
    case Op::kReshape: return "reshape";
    case Op::kReduceSum: return "reduce_sum";
    case Op::kReduceMean: return "reduce_mean";
  }
  return "unknown";
}

NodeRef Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return NodeRef{static_cast<int>(nodes_.size()) - 1};
}

const Graph::Node& Graph::node(NodeRef ref) const { return nodes_[static_cast<std::size_t>(ref.id)]; }

const Graph::Node& Graph::checked(NodeRef ref, const char* context) const {
  if (ref.id < 0 || ref.id >= static_cast<int>(nodes_.size())) {
    fail(std::string("graph: ") + context + ": node reference " + std::to_string(ref.id) +
         " is not part of this graph");
  }
  return nodes_[static_cast<std::size_t>(ref.id)];
}

void Graph::fail(const std::string& message) const { throw Error(message); }

const Shape& Graph::shape_of(NodeRef ref) const { return checked(ref, "shape_of").shape; }

NodeRef Graph::input(const std::string& name, Shape shape) {
  if (name.empty()) fail("graph: input name must not be empty");
  if (input_ids_.count(name) != 0) fail("graph: duplicate input name '" + name + "'");
  NodeRef ref = push(Node{Op::kInput, std::move(shape), {}, std::monostate{}, name});
  input_ids_[name] = ref.id;
  return ref;
}

NodeRef Graph::constant(Tensor value, const std::string& label) {
  Shape shape = value.shape();
  return push(Node{Op::kConstant, std::move(shape), {}, Meta{std::move(value)}, label});
}

NodeRef Graph::add(NodeRef a, NodeRef b) {
  const Node& na = checked(a, "add");
  const Node& nb = checked(b, "add");
  if (na.shape != nb.shape) {
    fail("graph: add: shape mismatch " + shape_to_string(na.shape) + " vs " +
         shape_to_string(nb.shape));
  }
  return push(Node{Op::kAdd, na.shape, {a.id, b.id}, std::monostate{}, "add"});
}

NodeRef Graph::sub(NodeRef a, NodeRef b) {
  const Node& na = checked(a, "sub");
  const Node& nb = checked(b, "sub");
  if (na.shape != nb.shape) {
    fail("graph: sub: shape mismatch " + shape_to_string(na.shape) + " vs " +
         shape_to_string(nb.shape));
  }
  return push(Node{Op::kSub, na.shape, {a.id, b.id}, std::monostate{}, "sub"});
}

NodeRef Graph::mul(NodeRef a, NodeRef b) {
  const Node& na = checked(a, "mul");
  const Node& nb = checked(b, "mul");
  if (na.shape != nb.shape) {
    fail("graph: mul: shape mismatch " + shape_to_string(na.shape) + " vs " +
         shape_to_string(nb.shape));
  }
  return push(Node{Op::kMul, na.shape, {a.id, b.id}, std::monostate{}, "mul"});
}

NodeRef Graph::scale(NodeRef a, real factor) {
  const Node& na = checked(a, "scale");
  return push(Node{Op::kScale, na.shape, {a.id}, Meta{factor}, "scale"});
}

NodeRef Graph::offset(NodeRef a, real shift) {
  const Node& na = checked(a, "offset");
  return push(Node{Op::kOffset, na.shape, {a.id}, Meta{shift}, "offset"});
}

NodeRef Graph::matmul(NodeRef a, NodeRef b) {
  const Node& na = checked(a, "matmul");
  const Node& nb = checked(b, "matmul");
  if (na.shape.size() != 2 || nb.shape.size() != 2) {
    fail("graph: matmul: both arguments must be rank 2, got " + shape_to_string(na.shape) +
         " and " + shape_to_string(nb.shape));
  }
  if (na.shape[1] != nb.shape[0]) {
    fail("graph: matmul: inner dimensions disagree: " + shape_to_string(na.shape) + " x " +
         shape_to_string(nb.shape));
  }
  return push(Node{Op::kMatMul, Shape{na.shape[0], nb.shape[1]}, {a.id, b.id}, std::monostate{},
                   "matmul"});
}

NodeRef Graph::bias_add(NodeRef x, NodeRef bias) {
  const Node& nx = checked(x, "bias_add");
  const Node& nb = checked(bias, "bias_add");
  if (nx.shape.empty()) fail("graph: bias_add: x must have rank >= 1");
  if (nb.shape.size() != 1 || nb.shape[0] != nx.shape.back()) {
    fail("graph: bias_add: bias shape " + shape_to_string(nb.shape) +
         " does not match trailing dimension of " + shape_to_string(nx.shape));
  }
  return push(Node{Op::kBiasAdd, nx.shape, {x.id, bias.id}, std::monostate{}, "bias_add"});
}

NodeRef Graph::conv2d(NodeRef x, NodeRef kernel, NodeRef bias, const std::string& label) {
  const Node& nx = checked(x, "conv2d");
  const Node& nk = checked(kernel, "conv2d");
  const Node& nb = checked(bias, "conv2d");
  if (nx.shape.size() != 4) {
    fail("graph: conv2d: input must be [N,H,W,C], got " + shape_to_string(nx.shape));
  }
  if (nk.shape.size() != 4) {
    fail("graph: conv2d: kernel must be [kh,kw,cin,cout], got " + shape_to_string(nk.shape));
  }
  if (nk.shape[2] != nx.shape[3]) {
    fail("graph: conv2d: kernel cin " + std::to_string(nk.shape[2]) +
         " does not match input channels " + std::to_string(nx.shape[3]));
  }
  if (nb.shape.size() != 1 || nb.shape[0] != nk.shape[3]) {
    fail("graph: conv2d: bias shape " + shape_to_string(nb.shape) + " does not match cout " +
         std::to_string(nk.shape[3]));
  }
  if (nk.shape[0] > nx.shape[1] || nk.shape[1] > nx.shape[2]) {
    fail("graph: conv2d: kernel " + shape_to_string(nk.shape) + " larger than input " +
         shape_to_string(nx.shape));
  }
  Shape out{nx.shape[0], nx.shape[1] - nk.shape[0] + 1, nx.shape[2] - nk.shape[1] + 1,
            nk.shape[3]};
  return push(Node{Op::kConv2d, std::move(out), {x.id, kernel.id, bias.id}, std::monostate{},
                   label});
}

NodeRef Graph::maxpool2(NodeRef x) {
  const Node& nx = checked(x, "maxpool2");
  if (nx.shape.size() != 4) {
    fail("graph: maxpool2: input must be [N,H,W,C], got " + shape_to_string(nx.shape));
  }
  if (nx.shape[1] < 2 || nx.shape[2] < 2) {
    fail("graph: maxpool2: spatial dims must be >= 2, got " + shape_to_string(nx.shape));
  }
  Shape out{nx.shape[0], nx.shape[1] / 2, nx.shape[2] / 2, nx.shape[3]};
  return push(Node{Op::kMaxPool2, std::move(out), {x.id}, std::monostate{}, "maxpool2"});
}

NodeRef Graph::relu(NodeRef x) {
  const Node& nx = checked(x, "relu");
  return push(Node{Op::kRelu, nx.shape, {x.id}, std::monostate{}, "relu"});
}

NodeRef Graph::clamp(NodeRef x, real lo, real hi) {
  const Node& nx = checked(x, "clamp");
  if (!(lo <= hi)) {
    fail("graph: clamp: lower bound " + std::to_string(lo) + " exceeds upper bound " +
         std::to_string(hi));
  }
  return push(Node{Op::kClamp, nx.shape, {x.id}, Meta{ScalarPairMeta{lo, hi}}, "clamp"});
}

NodeRef Graph::power(NodeRef x, real exponent) {
  const Node& nx = checked(x, "power");
  return push(Node{Op::kPower, nx.shape, {x.id}, Meta{exponent}, "power"});
}

NodeRef Graph::log_softmax(NodeRef x) {
  const Node& nx = checked(x, "log_softmax");
  if (nx.shape.empty() || nx.shape.back() == 0) {
    fail("graph: log_softmax: input must have a non-empty trailing axis, got " +
         shape_to_string(nx.shape));
  }
  return push(Node{Op::kLogSoftmax, nx.shape, {x.id}, std::monostate{}, "log_softmax"});
}

NodeRef Graph::gather(NodeRef x, std::vector<std::size_t> indices) {
  const Node& nx = checked(x, "gather");
  const std::size_t n = numel(nx.shape);
  for (std::size_t idx : indices) {
    if (idx >= n) {
      fail("graph: gather: index " + std::to_string(idx) + " out of range for " +
           shape_to_string(nx.shape));
    }
  }
  Shape out{indices.size()};
  return push(Node{Op::kGather, std::move(out), {x.id}, Meta{GatherMeta{std::move(indices)}},
                   "gather"});
}

NodeRef Graph::sparse_matvec(std::shared_ptr<const SparseMap> map, NodeRef x) {
  if (!map) fail("graph: sparse_matvec: map must not be null");
  map->validate();
  const Node& nx = checked(x, "sparse_matvec");
  if (nx.shape.size() != 3) {
    fail("graph: sparse_matvec: input must be [H,W,C], got " + shape_to_string(nx.shape));
  }
  if (nx.shape[0] != map->in_h || nx.shape[1] != map->in_w) {
    fail("graph: sparse_matvec: input " + shape_to_string(nx.shape) + " does not match map input " +
         std::to_string(map->in_h) + "x" + std::to_string(map->in_w));
  }
  Shape out{map->out_h, map->out_w, nx.shape[2]};
  return push(Node{Op::kSparseMatVec, std::move(out), {x.id}, Meta{SparseMeta{std::move(map)}},
                   "sparse_matvec"});
}

NodeRef Graph::rgb_to_lab(NodeRef x) {
  const Node& nx = checked(x, "rgb_to_lab");
  if (nx.shape.empty() || nx.shape.back() != 3) {
    fail("graph: rgb_to_lab: trailing axis must be 3 (RGB), got " + shape_to_string(nx.shape));
  }
  return push(Node{Op::kRgbToLab, nx.shape, {x.id}, std::monostate{}, "rgb_to_lab"});
}

NodeRef Graph::stack(const std::vector<NodeRef>& parts) {
  if (parts.empty()) fail("graph: stack: needs at least one part");
  const Node& first = checked(parts[0], "stack");
  std::vector<int> args;
  args.reserve(parts.size());
  for (NodeRef p : parts) {
    const Node& np = checked(p, "stack");
    if (np.shape != first.shape) {
      fail("graph: stack: part shapes differ: " + shape_to_string(first.shape) + " vs " +
           shape_to_string(np.shape));
    }
    args.push_back(p.id);
  }
  Shape out;
  out.reserve(first.shape.size() + 1);
  out.push_back(parts.size());
  out.insert(out.end(), first.shape.begin(), first.shape.end());
  return push(Node{Op::kStack, std::move(out), std::move(args), std::monostate{}, "stack"});
}

NodeRef Graph::reshape(NodeRef x, Shape shape) {
  const Node& nx = checked(x, "reshape");
  if (numel(shape) != numel(nx.shape)) {
    fail("graph: reshape: cannot reshape " + shape_to_string(nx.shape) + " to " +
         shape_to_string(shape) + " (element counts differ)");
  }
  return push(Node{Op::kReshape, std::move(shape), {x.id}, std::monostate{}, "reshape"});
}

NodeRef Graph::reduce_sum(NodeRef x) {
  checked(x, "reduce_sum");
  return push(Node{Op::kReduceSum, Shape{}, {x.id}, std::monostate{}, "reduce_sum"});
}

NodeRef Graph::reduce_mean(NodeRef x) {
  checked(x, "reduce_mean");
  return push(Node{Op::kReduceMean, Shape{}, {x.id}, std::monostate{}, "reduce_mean"});
}

void Graph::set_output(const std::string& name, NodeRef node) {
  if (name.empty()) fail("graph: output name must not be empty");
  checked(node, "set_output");
  if (output_ids_.count(name) != 0) fail("graph: duplicate output name '" + name + "'");
  output_ids_[name] = node.id;
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

class Executor {
 public:
  explicit Executor(const Graph& graph) : g_(graph) {}

  void run(const std::map<std::string, Tensor>& inputs) {
    bind(inputs);
    values_.clear();
    values_.reserve(g_.nodes_.size());
    pool_argmax_.assign(g_.nodes_.size(), {});
    for (std::size_t id = 0; id < g_.nodes_.size(); ++id) {
      values_.push_back(forward(static_cast<int>(id)));
      if (!values_.back().all_finite()) {
        throw Error("evaluate: node " + describe(static_cast<int>(id)) +
                    " produced a non-finite value");
      }
    }
  }

  std::map<std::string, Tensor> named_outputs() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, id] : g_.output_ids_) out.emplace(name, values_[id]);
    return out;
  }

  std::map<std::string, Tensor> backward(const std::vector<std::string>& wrts,
                                         const std::string& scalar_output) const {
    const auto out_it = g_.output_ids_.find(scalar_output);
    if (out_it == g_.output_ids_.end()) {
      throw Error("gradient: graph has no output named '" + scalar_output + "'");
    }
    const int out_id = out_it->second;
    if (!g_.nodes_[out_id].shape.empty()) {
      throw Error("gradient: output '" + scalar_output + "' has shape " +
                  shape_to_string(g_.nodes_[out_id].shape) + "; expected a scalar");
    }

    std::vector<int> wrt_ids;
    wrt_ids.reserve(wrts.size());
    for (const std::string& name : wrts) {
      const auto it = g_.input_ids_.find(name);
      if (it == g_.input_ids_.end()) {
        throw Error("gradient: '" + name + "' is not an input of this graph");
      }
      wrt_ids.push_back(it->second);
    }

    // Nodes reachable forward from any wrt input; adjoints of other nodes are
    // never consumed, so they are skipped entirely (frozen parameters cost
    // nothing during the backward pass).
    std::vector<char> needed(g_.nodes_.size(), 0);
    for (int id : wrt_ids) needed[id] = 1;
    for (std::size_t id = 0; id < g_.nodes_.size(); ++id) {
      if (needed[id]) continue;
      for (int arg : g_.nodes_[id].args) {
        if (needed[arg]) {
          needed[id] = 1;
          break;
        }
      }
    }

    std::vector<std::optional<Tensor>> adj(g_.nodes_.size());
    auto adj_ref = [&](int id) -> Tensor& {
      if (!adj[id]) adj[id].emplace(Tensor::full(g_.nodes_[id].shape, 0.0));
      return *adj[id];
    };
    if (needed[out_id]) adj_ref(out_id)[0] = 1.0;

    for (int id = out_id; id >= 0; --id) {
      if (!adj[id] || !needed[id]) continue;
      propagate(id, *adj[id], needed, adj_ref);
    }

    std::map<std::string, Tensor> result;
    for (std::size_t i = 0; i < wrts.size(); ++i) {
      const int id = wrt_ids[i];
      result.emplace(wrts[i], adj[id] ? *adj[id] : Tensor::full(g_.nodes_[id].shape, 0.0));
    }
    return result;
  }

 private:
  std::string describe(int id) const {
    const Graph::Node& n = g_.nodes_[id];
    std::string s = index_string(id) + " " + op_name(n.op);
    if (!n.label.empty() && n.label != op_name(n.op)) s += " '" + n.label + "'";
    return s;
  }

  void bind(const std::map<std::string, Tensor>& inputs) {
    for (const auto& [name, tensor] : inputs) {
      const auto it = g_.input_ids_.find(name);
      if (it == g_.input_ids_.end()) {
        throw Error("evaluate: '" + name + "' is not an input of this graph");
      }
      if (tensor.shape() != g_.nodes_[it->second].shape) {
        throw Error("evaluate: input '" + name + "' has shape " + shape_to_string(tensor.shape()) +
                    "; graph declares " + shape_to_string(g_.nodes_[it->second].shape));
      }
    }
    for (const auto& [name, id] : g_.input_ids_) {
      if (inputs.count(name) == 0) {
        throw Error("evaluate: missing binding for input '" + name + "'");
      }
    }
    bound_ = &inputs;
  }

  Tensor forward(int id) {
    const Graph::Node& n = g_.nodes_[id];
    switch (n.op) {
      case Op::kInput:
        return bound_->at(n.label);
      case Op::kConstant:
        return std::get<Tensor>(n.meta);
      case Op::kAdd: {
        Tensor out = values_[n.args[0]];
        const Tensor& b = values_[n.args[1]];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
        return out;
      }
      case Op::kSub: {
        Tensor out = values_[n.args[0]];
        const Tensor& b = values_[n.args[1]];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
        return out;
      }
      case Op::kMul: {
        Tensor out = values_[n.args[0]];
        const Tensor& b = values_[n.args[1]];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
        return out;
      }
      case Op::kScale: {
        Tensor out = values_[n.args[0]];
        const real f = std::get<real>(n.meta);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= f;
        return out;
      }
      case Op::kOffset: {
        Tensor out = values_[n.args[0]];
        const real f = std::get<real>(n.meta);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += f;
        return out;
      }
      case Op::kMatMul: {
        const Tensor& a = values_[n.args[0]];
        const Tensor& b = values_[n.args[1]];
        Tensor out = Tensor::full(n.shape, 0.0);
        gemm_acc(a.dim(0), a.dim(1), b.dim(1), a.data(), b.data(), out.data());
        return out;
      }
      case Op::kBiasAdd: {
        Tensor out = values_[n.args[0]];
        const Tensor& b = values_[n.args[1]];
        const std::size_t c = b.size();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % c];
        return out;
      }
      case Op::kConv2d:
        return conv2d_forward(n);
      case Op::kMaxPool2:
        return maxpool_forward(id, n);
      case Op::kRelu: {
        Tensor out = values_[n.args[0]];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
        return out;
      }
      case Op::kClamp: {
        Tensor out = values_[n.args[0]];
        const auto& b = std::get<Graph::ScalarPairMeta>(n.meta);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(out[i], b.a), b.b);
        return out;
      }
      case Op::kPower: {
        Tensor out = values_[n.args[0]];
        const real p = std::get<real>(n.meta);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(out[i], p);
        return out;
      }
      case Op::kLogSoftmax: {
        const Tensor& x = values_[n.args[0]];
        Tensor out = x;
        const std::size_t cols = n.shape.back();
        const std::size_t rows = out.size() / cols;
        for (std::size_t r = 0; r < rows; ++r) {
          real* row = out.data() + r * cols;
          real m = row[0];
          for (std::size_t j = 1; j < cols; ++j) m = std::max(m, row[j]);
          real sum = 0.0;
          for (std::size_t j = 0; j < cols; ++j) sum += std::exp(row[j] - m);
          const real lse = m + std::log(sum);
          for (std::size_t j = 0; j < cols; ++j) row[j] -= lse;
        }
        return out;
      }
      case Op::kGather: {
        const Tensor& x = values_[n.args[0]];
        const auto& meta = std::get<Graph::GatherMeta>(n.meta);
        Tensor out(Shape{meta.indices.size()});
        for (std::size_t i = 0; i < meta.indices.size(); ++i) out[i] = x[meta.indices[i]];
        return out;
      }
      case Op::kSparseMatVec: {
        const Tensor& x = values_[n.args[0]];
        const SparseMap& map = *std::get<Graph::SparseMeta>(n.meta).map;
        const std::size_t channels = n.shape[2];
        Tensor out = Tensor::full(n.shape, 0.0);
        for (std::size_t p = 0; p < map.rows(); ++p) {
          real* orow = out.data() + p * channels;
          for (std::uint32_t k = map.row_offsets[p]; k < map.row_offsets[p + 1]; ++k) {
            const real w = map.weights[k];
            const real* xrow = x.data() + static_cast<std::size_t>(map.cols[k]) * channels;
            for (std::size_t c = 0; c < channels; ++c) orow[c] += w * xrow[c];
          }
        }
        return out;
      }
      case Op::kRgbToLab: {
        const Tensor& x = values_[n.args[0]];
        Tensor out(n.shape);
        for (std::size_t i = 0; i < x.size(); i += 3) {
          color::rgb_to_lab(x.data() + i, out.data() + i);
        }
        return out;
      }
      case Op::kStack: {
        Tensor out(n.shape);
        const std::size_t part = numel(g_.nodes_[n.args[0]].shape);
        for (std::size_t k = 0; k < n.args.size(); ++k) {
          const Tensor& src = values_[n.args[k]];
          std::copy(src.data(), src.data() + part, out.data() + k * part);
        }
        return out;
      }
      case Op::kReshape: {
        const Tensor& x = values_[n.args[0]];
        return Tensor(n.shape, std::vector<real>(x.data(), x.data() + x.size()));
      }
      case Op::kReduceSum: {
        const Tensor& x = values_[n.args[0]];
        real acc = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
        return Tensor::scalar(acc);
      }
      case Op::kReduceMean: {
        const Tensor& x = values_[n.args[0]];
        real acc = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
        return Tensor::scalar(acc / static_cast<real>(x.size()));
      }
    }
    throw Error("evaluate: unhandled op at node " + index_string(id));
  }

  Tensor conv2d_forward(const Graph::Node& n) {
    const Tensor& x = values_[n.args[0]];
    const Tensor& k = values_[n.args[1]];
    const Tensor& bias = values_[n.args[2]];
    const std::size_t batch = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
    const std::size_t kh = k.dim(0), kw = k.dim(1), cout = k.dim(3);
    const std::size_t oh = n.shape[1], ow = n.shape[2];
    const std::size_t patch = kh * kw * cin;
    Tensor out(n.shape);
    std::vector<real> cols(oh * ow * patch);
    for (std::size_t b = 0; b < batch; ++b) {
      const real* xs = x.data() + b * h * w * cin;
      im2col(xs, h, w, cin, kh, kw, oh, ow, cols.data());
      real* os = out.data() + b * oh * ow * cout;
      for (std::size_t p = 0; p < oh * ow; ++p) {
        for (std::size_t c = 0; c < cout; ++c) os[p * cout + c] = bias[c];
      }
      gemm_acc(oh * ow, patch, cout, cols.data(), k.data(), os);
    }
    return out;
  }

  static void im2col(const real* x, std::size_t h, std::size_t w, std::size_t cin, std::size_t kh,
                     std::size_t kw, std::size_t oh, std::size_t ow, real* cols) {
    std::size_t p = 0;
    for (std::size_t oi = 0; oi < oh; ++oi) {
      for (std::size_t oj = 0; oj < ow; ++oj, ++p) {
        real* dst = cols + p * (kh * kw * cin);
        for (std::size_t ki = 0; ki < kh; ++ki) {
          const real* src = x + ((oi + ki) * w + oj) * cin;
          std::copy(src, src + kw * cin, dst);
          dst += kw * cin;
        }
      }
    }
  }

  Tensor maxpool_forward(int id, const Graph::Node& n) {
    const Tensor& x = values_[n.args[0]];
    const std::size_t batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const std::size_t oh = n.shape[1], ow = n.shape[2];
    Tensor out(n.shape);
    auto& argmax = pool_argmax_[id];
    argmax.resize(out.size());
    std::size_t o = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t oi = 0; oi < oh; ++oi) {
        for (std::size_t oj = 0; oj < ow; ++oj) {
          for (std::size_t ch = 0; ch < c; ++ch, ++o) {
            // Row-major scan; strict > keeps the first element on ties.
            std::size_t best = ((b * h + 2 * oi) * w + 2 * oj) * c + ch;
            real bv = x[best];
            for (int di = 0; di < 2; ++di) {
              for (int dj = 0; dj < 2; ++dj) {
                const std::size_t idx = ((b * h + 2 * oi + di) * w + 2 * oj + dj) * c + ch;
                if (x[idx] > bv) {
                  bv = x[idx];
                  best = idx;
                }
              }
            }
            out[o] = bv;
            argmax[o] = static_cast<std::uint32_t>(best);
          }
        }
      }
    }
    return out;
  }

  template <typename AdjFn>
  void propagate(int id, const Tensor& g, const std::vector<char>& needed, AdjFn&& adj_ref) const {
    const Graph::Node& n = g_.nodes_[id];
    auto want = [&](std::size_t arg_pos) {
      return needed[n.args[arg_pos]] != 0;
    };
    switch (n.op) {
      case Op::kInput:
      case Op::kConstant:
        return;
      case Op::kAdd: {
        if (want(0)) {
          Tensor& da = adj_ref(n.args[0]);
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        }
        if (want(1)) {
          Tensor& db = adj_ref(n.args[1]);
          for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
        }
        return;
      }
      case Op::kSub: {
        if (want(0)) {
          Tensor& da = adj_ref(n.args[0]);
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        }
        if (want(1)) {
          Tensor& db = adj_ref(n.args[1]);
          for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
        }
        return;
      }
      case Op::kMul: {
        const Tensor& a = values_[n.args[0]];
        const Tensor& b = values_[n.args[1]];
        if (want(0)) {
          Tensor& da = adj_ref(n.args[0]);
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * b[i];
        }
        if (want(1)) {
          Tensor& db = adj_ref(n.args[1]);
          for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a[i];
        }
        return;
      }
      case Op::kScale: {
        if (!want(0)) return;
        const real f = std::get<real>(n.meta);
        Tensor& da = adj_ref(n.args[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += f * g[i];
        return;
      }
      case Op::kOffset: {
        if (!want(0)) return;
        Tensor& da = adj_ref(n.args[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        return;
      }
      case Op::kMatMul: {
        const Tensor& a = values_[n.args[0]];
        const Tensor& b = values_[n.args[1]];
        if (want(0)) gemm_nt_acc(a.dim(0), b.dim(1), a.dim(1), g.data(), b.data(),
                                 adj_ref(n.args[0]).data());
        if (want(1)) gemm_tn_acc(a.dim(1), a.dim(0), b.dim(1), a.data(), g.data(),
                                 adj_ref(n.args[1]).data());
        return;
      }
      case Op::kBiasAdd: {
        if (want(0)) {
          Tensor& dx = adj_ref(n.args[0]);
          for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
        }
        if (want(1)) {
          Tensor& db = adj_ref(n.args[1]);
          const std::size_t c = db.size();
          for (std::size_t i = 0; i < g.size(); ++i) db[i % c] += g[i];
        }
        return;
      }
      case Op::kConv2d:
        conv2d_backward(n, g, needed, adj_ref);
        return;
      case Op::kMaxPool2: {
        if (!want(0)) return;
        Tensor& dx = adj_ref(n.args[0]);
        const auto& argmax = pool_argmax_[id];
        for (std::size_t i = 0; i < g.size(); ++i) dx[argmax[i]] += g[i];
        return;
      }
      case Op::kRelu: {
        if (!want(0)) return;
        const Tensor& x = values_[n.args[0]];
        Tensor& dx = adj_ref(n.args[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (x[i] >= 0.0) dx[i] += g[i];
        }
        return;
      }
      case Op::kClamp: {
        if (!want(0)) return;
        const auto& b = std::get<Graph::ScalarPairMeta>(n.meta);
        const Tensor& x = values_[n.args[0]];
        Tensor& dx = adj_ref(n.args[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (x[i] >= b.a && x[i] <= b.b) dx[i] += g[i];
        }
        return;
      }
      case Op::kPower: {
        if (!want(0)) return;
        const real p = std::get<real>(n.meta);
        const Tensor& x = values_[n.args[0]];
        Tensor& dx = adj_ref(n.args[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          real d;
          if (p == 0.0) {
            d = 0.0;
          } else if (x[i] == 0.0 && p < 1.0) {
            d = 0.0;  // documented subgradient for fractional exponents at 0
          } else {
            d = p * std::pow(x[i], p - 1.0);
          }
          dx[i] += g[i] * d;
        }
        return;
      }
      case Op::kLogSoftmax: {
        if (!want(0)) return;
        const Tensor& y = values_[id];
        Tensor& dx = adj_ref(n.args[0]);
        const std::size_t cols = n.shape.back();
        const std::size_t rows = g.size() / cols;
        for (std::size_t r = 0; r < rows; ++r) {
          real s = 0.0;
          for (std::size_t j = 0; j < cols; ++j) s += g[r * cols + j];
          for (std::size_t j = 0; j < cols; ++j) {
            dx[r * cols + j] += g[r * cols + j] - std::exp(y[r * cols + j]) * s;
          }
        }
        return;
      }
      case Op::kGather: {
        if (!want(0)) return;
        const auto& meta = std::get<Graph::GatherMeta>(n.meta);
        Tensor& dx = adj_ref(n.args[0]);
        for (std::size_t i = 0; i < meta.indices.size(); ++i) dx[meta.indices[i]] += g[i];
        return;
      }
      case Op::kSparseMatVec: {
        if (!want(0)) return;
        const SparseMap& map = *std::get<Graph::SparseMeta>(n.meta).map;
        const std::size_t channels = n.shape[2];
        Tensor& dx = adj_ref(n.args[0]);
        for (std::size_t p = 0; p < map.rows(); ++p) {
          const real* grow = g.data() + p * channels;
          for (std::uint32_t k = map.row_offsets[p]; k < map.row_offsets[p + 1]; ++k) {
            const real w = map.weights[k];
            real* drow = dx.data() + static_cast<std::size_t>(map.cols[k]) * channels;
            for (std::size_t c = 0; c < channels; ++c) drow[c] += w * grow[c];
          }
        }
        return;
      }
      case Op::kRgbToLab: {
        if (!want(0)) return;
        const Tensor& x = values_[n.args[0]];
        Tensor& dx = adj_ref(n.args[0]);
        real lab[3], jac[9];
        for (std::size_t i = 0; i < x.size(); i += 3) {
          color::rgb_to_lab_jacobian(x.data() + i, lab, jac);
          for (int cj = 0; cj < 3; ++cj) {
            real acc = 0.0;
            for (int ci = 0; ci < 3; ++ci) acc += jac[ci * 3 + cj] * g[i + ci];
            dx[i + cj] += acc;
          }
        }
        return;
      }
      case Op::kStack: {
        const std::size_t part = numel(g_.nodes_[n.args[0]].shape);
        for (std::size_t k = 0; k < n.args.size(); ++k) {
          if (!needed[n.args[k]]) continue;
          Tensor& dp = adj_ref(n.args[k]);
          const real* src = g.data() + k * part;
          for (std::size_t i = 0; i < part; ++i) dp[i] += src[i];
        }
        return;
      }
      case Op::kReshape: {
        if (!want(0)) return;
        Tensor& dx = adj_ref(n.args[0]);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
        return;
      }
      case Op::kReduceSum: {
        if (!want(0)) return;
        Tensor& dx = adj_ref(n.args[0]);
        const real gv = g[0];
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gv;
        return;
      }
      case Op::kReduceMean: {
        if (!want(0)) return;
        Tensor& dx = adj_ref(n.args[0]);
        const real gv = g[0] / static_cast<real>(dx.size());
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gv;
        return;
      }
    }
    throw Error("gradient: unhandled op at node " + index_string(id));
  }

  template <typename AdjFn>
  void conv2d_backward(const Graph::Node& n, const Tensor& g, const std::vector<char>& needed,
                       AdjFn&& adj_ref) const {
    const Tensor& x = values_[n.args[0]];
    const Tensor& k = values_[n.args[1]];
    const std::size_t batch = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
    const std::size_t kh = k.dim(0), kw = k.dim(1), cout = k.dim(3);
    const std::size_t oh = n.shape[1], ow = n.shape[2];
    const std::size_t patch = kh * kw * cin;
    const bool need_x = needed[n.args[0]] != 0;
    const bool need_k = needed[n.args[1]] != 0;
    const bool need_b = needed[n.args[2]] != 0;

    if (need_b) {
      Tensor& db = adj_ref(n.args[2]);
      for (std::size_t i = 0; i < g.size(); ++i) db[i % cout] += g[i];
    }
    if (!need_x && !need_k) return;

    std::vector<real> cols(need_k ? oh * ow * patch : 0);
    std::vector<real> dcols(need_x ? oh * ow * patch : 0);
    for (std::size_t b = 0; b < batch; ++b) {
      const real* gs = g.data() + b * oh * ow * cout;
      if (need_k) {
        im2col(x.data() + b * h * w * cin, h, w, cin, kh, kw, oh, ow, cols.data());
        gemm_tn_acc(patch, oh * ow, cout, cols.data(), gs, adj_ref(n.args[1]).data());
      }
      if (need_x) {
        std::fill(dcols.begin(), dcols.end(), 0.0);
        gemm_nt_acc(oh * ow, cout, patch, gs, k.data(), dcols.data());
        real* dxs = adj_ref(n.args[0]).data() + b * h * w * cin;
        std::size_t p = 0;
        for (std::size_t oi = 0; oi < oh; ++oi) {
          for (std::size_t oj = 0; oj < ow; ++oj, ++p) {
            const real* src = dcols.data() + p * patch;
            for (std::size_t ki = 0; ki < kh; ++ki) {
              real* dst = dxs + ((oi + ki) * w + oj) * cin;
              for (std::size_t t = 0; t < kw * cin; ++t) dst[t] += src[ki * kw * cin + t];
            }
          }
        }
      }
    }
  }

  const Graph& g_;
  const std::map<std::string, Tensor>* bound_ = nullptr;
  std::vector<Tensor> values_;
  std::vector<std::vector<std::uint32_t>> pool_argmax_;
};

std::map<std::string, Tensor> evaluate(const Graph& graph,
                                       const std::map<std::string, Tensor>& inputs) {
  Executor ex(graph);
  ex.run(inputs);
  return ex.named_outputs();
}

std::map<std::string, Tensor> gradients(const Graph& graph,
                                        const std::map<std::string, Tensor>& inputs,
                                        const std::vector<std::string>& wrts,
                                        const std::string& scalar_output) {
  Executor ex(graph);
  ex.run(inputs);
  return ex.backward(wrts, scalar_output);
}

Tensor gradient(const Graph& graph, const std::map<std::string, Tensor>& inputs,
                const std::string& wrt, const std::string& scalar_output) {
  auto all = gradients(graph, inputs, {wrt}, scalar_output);
  return std::move(all.at(wrt));
}

ValueAndGradient value_and_gradient(const Graph& graph,
                                    const std::map<std::string, Tensor>& inputs,
                                    const std::string& wrt, const std::string& scalar_output) {
  Executor ex(graph);
  ex.run(inputs);
  auto grads = ex.backward({wrt}, scalar_output);
  return ValueAndGradient{ex.named_outputs(), std::move(grads.at(wrt))};
}

ValueAndGradients value_and_gradients(const Graph& graph,
                                      const std::map<std::string, Tensor>& inputs,
                                      const std::vector<std::string>& wrts,
                                      const std::string& scalar_output) {
  Executor ex(graph);
  ex.run(inputs);
  auto grads = ex.backward(wrts, scalar_output);
  return ValueAndGradients{ex.named_outputs(), std::move(grads)};
}

real finite_diff_check(const Graph& graph, const std::map<std::string, Tensor>& inputs,
                       const std::string& wrt, const std::string& scalar_output, real step) {
  if (step <= 0.0) throw Error("finite_diff_check: step must be positive");
  const Tensor analytic = gradient(graph, inputs, wrt, scalar_output);
  const auto it = inputs.find(wrt);
  if (it == inputs.end()) throw Error("finite_diff_check: input '" + wrt + "' not bound");
  real max_rel = 0.0;
  for (std::size_t i = 0; i < it->second.size(); ++i) {
    std::map<std::string, Tensor> pert = inputs;
    pert.at(wrt)[i] += step;
    const real fp = evaluate(graph, pert).at(scalar_output).item();
    pert.at(wrt)[i] -= 2.0 * step;
    const real fm = evaluate(graph, pert).at(scalar_output).item();
    const real fd = (fp - fm) / (2.0 * step);
    const real a = analytic[i];
    const real rel = std::abs(fd - a) / std::max({std::abs(fd), std::abs(a), 1e-8});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

// ---------------------------------------------------------------------------
// Primitive gradient checks
// ---------------------------------------------------------------------------

namespace {

Tensor random_tensor(RngStream& rng, Shape shape, real lo, real hi) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Wraps node y = P(args) as sum(y * C) with random C bounded away from zero,
// so the finite-difference check exercises the primitive's VJP with a
// non-trivial adjoint.
struct CheckBuilder {
  Graph graph;
  std::map<std::string, Tensor> inputs;
  std::vector<std::string> wrts;

  NodeRef in(RngStream& rng, const std::string& name, Shape shape, real lo, real hi) {
    NodeRef ref = graph.input(name, shape);
    inputs.emplace(name, random_tensor(rng, std::move(shape), lo, hi));
    wrts.push_back(name);
    return ref;
  }

  void finish(RngStream& rng, NodeRef result) {
    Tensor c = random_tensor(rng, graph.shape_of(result), 0.5, 1.5);
    NodeRef weighted = graph.mul(result, graph.constant(std::move(c), "probe"));
    graph.set_output("y", graph.reduce_sum(weighted));
  }

  real max_rel(real step) const {
    real worst = 0.0;
    for (const std::string& w : wrts) {
      worst = std::max(worst, finite_diff_check(graph, inputs, w, "y", step));
    }
    return worst;
  }

  std::size_t points() const {
    std::size_t n = 0;
    for (const std::string& w : wrts) n += inputs.at(w).size();
    return n;
  }
};

struct CheckResult {
  real max_rel = 0.0;
  std::size_t points = 0;
};

CheckResult check_primitive(const std::string& name, RngStream& rng) {
  constexpr real kStep = 1e-5;
  CheckBuilder b;
  if (name == "add") {
    b.finish(rng, b.graph.add(b.in(rng, "a", {2, 3}, -1, 1), b.in(rng, "b", {2, 3}, -1, 1)));
  } else if (name == "sub") {
    b.finish(rng, b.graph.sub(b.in(rng, "a", {2, 3}, -1, 1), b.in(rng, "b", {2, 3}, -1, 1)));
  } else if (name == "mul") {
    b.finish(rng, b.graph.mul(b.in(rng, "a", {2, 3}, -1, 1), b.in(rng, "b", {2, 3}, -1, 1)));
  } else if (name == "scale") {
    b.finish(rng, b.graph.scale(b.in(rng, "a", {2, 3}, -1, 1), 1.7));
  } else if (name == "offset") {
    b.finish(rng, b.graph.offset(b.in(rng, "a", {2, 3}, -1, 1), 0.6));
  } else if (name == "matmul") {
    b.finish(rng, b.graph.matmul(b.in(rng, "a", {3, 4}, -1, 1), b.in(rng, "b", {4, 2}, -1, 1)));
  } else if (name == "bias_add") {
    b.finish(rng,
             b.graph.bias_add(b.in(rng, "x", {2, 3, 4}, -1, 1), b.in(rng, "b", {4}, -1, 1)));
  } else if (name == "conv2d") {
    NodeRef x = b.in(rng, "x", {1, 5, 5, 2}, -1, 1);
    NodeRef k = b.in(rng, "k", {3, 3, 2, 3}, -0.5, 0.5);
    NodeRef bias = b.in(rng, "bias", {3}, -0.5, 0.5);
    b.finish(rng, b.graph.conv2d(x, k, bias));
  } else if (name == "maxpool2") {
    // Resample until every pooling window has a clear (>= 1e-3) winner so the
    // finite-difference probe stays on one side of the tie kink.
    for (;;) {
      Tensor x = random_tensor(rng, {1, 4, 4, 2}, -1, 1);
      bool clear = true;
      for (std::size_t oi = 0; oi < 2 && clear; ++oi) {
        for (std::size_t oj = 0; oj < 2 && clear; ++oj) {
          for (std::size_t c = 0; c < 2 && clear; ++c) {
            real best = -2.0, second = -2.0;
            for (int di = 0; di < 2; ++di) {
              for (int dj = 0; dj < 2; ++dj) {
                const real v = x[((2 * oi + di) * 4 + 2 * oj + dj) * 2 + c];
                if (v > best) {
                  second = best;
                  best = v;
                } else if (v > second) {
                  second = v;
                }
              }
            }
            if (best - second < 1e-3) clear = false;
          }
        }
      }
      if (!clear) continue;
      NodeRef xin = b.graph.input("x", {1, 4, 4, 2});
      b.inputs.emplace("x", std::move(x));
      b.wrts.push_back("x");
      b.finish(rng, b.graph.maxpool2(xin));
      break;
    }
  } else if (name == "relu") {
    NodeRef xin = b.graph.input("x", {2, 3});
    Tensor x({2, 3});
    for (std::size_t i = 0; i < x.size(); ++i) {
      const real mag = rng.uniform(0.1, 1.0);
      x[i] = rng.uniform() < 0.5 ? -mag : mag;
    }
    b.inputs.emplace("x", std::move(x));
    b.wrts.push_back("x");
    b.finish(rng, b.graph.relu(xin));
  } else if (name == "clamp") {
    NodeRef xin = b.graph.input("x", {2, 3});
    Tensor x({2, 3});
    for (std::size_t i = 0; i < x.size(); ++i) {
      real v;
      do {
        v = rng.uniform(-0.5, 1.5);
      } while (std::abs(v) < 0.05 || std::abs(v - 1.0) < 0.05);
      x[i] = v;
    }
    b.inputs.emplace("x", std::move(x));
    b.wrts.push_back("x");
    b.finish(rng, b.graph.clamp(xin, 0.0, 1.0));
  } else if (name == "power_square") {
    b.finish(rng, b.graph.power(b.in(rng, "x", {2, 3}, -1, 1), 2.0));
  } else if (name == "power_sqrt") {
    b.finish(rng, b.graph.power(b.in(rng, "x", {2, 3}, 0.3, 1.2), 0.5));
  } else if (name == "log_softmax") {
    b.finish(rng, b.graph.log_softmax(b.in(rng, "x", {2, 5}, -2, 2)));
  } else if (name == "gather") {
    b.finish(rng, b.graph.gather(b.in(rng, "x", {3, 4}, -1, 1), {0, 5, 11, 5}));
  } else if (name == "sparse_matvec") {
    auto map = std::make_shared<SparseMap>();
    map->out_h = 2;
    map->out_w = 2;
    map->in_h = 3;
    map->in_w = 3;
    map->row_offsets.push_back(0);
    for (int r = 0; r < 4; ++r) {
      for (int k = 0; k < 4; ++k) {
        map->cols.push_back(static_cast<std::uint32_t>(rng.uniform_int(0, 8)));
        map->weights.push_back(rng.uniform(-1.0, 1.0));
      }
      map->row_offsets.push_back(static_cast<std::uint32_t>(map->cols.size()));
    }
    b.finish(rng, b.graph.sparse_matvec(std::move(map), b.in(rng, "x", {3, 3, 2}, -1, 1)));
  } else if (name == "rgb_to_lab") {
    b.finish(rng, b.graph.rgb_to_lab(b.in(rng, "x", {2, 2, 3}, 0.1, 0.9)));
  } else if (name == "stack") {
    NodeRef a = b.in(rng, "a", {2, 2}, -1, 1);
    NodeRef c = b.in(rng, "b", {2, 2}, -1, 1);
    b.finish(rng, b.graph.stack({a, c}));
  } else if (name == "reshape") {
    b.finish(rng, b.graph.reshape(b.in(rng, "x", {2, 6}, -1, 1), {3, 4}));
  } else if (name == "reduce_sum") {
    NodeRef x = b.in(rng, "x", {2, 3}, -1, 1);
    b.graph.set_output("y", b.graph.reduce_sum(b.graph.mul(x, x)));
  } else if (name == "reduce_mean") {
    NodeRef x = b.in(rng, "x", {2, 3}, -1, 1);
    b.graph.set_output("y", b.graph.reduce_mean(b.graph.mul(x, x)));
  } else {
    throw Error("gradcheck: unknown primitive '" + name + "'");
  }
  return CheckResult{b.max_rel(kStep), b.points()};
}

}  // namespace

std::vector<GradCheckRow> gradcheck_primitives(std::uint64_t seed) {
  static const std::vector<std::string> kPrimitives = {
      "add",        "sub",        "mul",           "scale",      "offset",
      "matmul",     "bias_add",   "conv2d",        "maxpool2",   "relu",
      "clamp",      "power_square", "power_sqrt",  "log_softmax", "gather",
      "sparse_matvec", "rgb_to_lab", "stack",      "reshape",    "reduce_sum",
      "reduce_mean",
  };
  // Each primitive is probed at random non-kink points until at least 100
  // input elements have been compared against finite differences.
  constexpr std::size_t kMinPoints = 100;
  constexpr real kThreshold = 1e-4;
  RngStream root(seed);
  std::vector<GradCheckRow> rows;
  rows.reserve(kPrimitives.size());
  for (const std::string& name : kPrimitives) {
    RngStream rng = root.fork(name);
    real worst = 0.0;
    std::size_t points = 0;
    while (points < kMinPoints) {
      const CheckResult r = check_primitive(name, rng);
      worst = std::max(worst, r.max_rel);
      points += r.points;
    }
    rows.push_back(GradCheckRow{name, worst, worst < kThreshold});
  }
  return rows;
}

}  // namespace eot::diffmath
