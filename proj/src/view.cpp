#include "eot/view.hpp"

#include <algorithm>

#include "eot/errors.hpp"

namespace eot::view {

namespace {

bool all_ones(const std::vector<real>& v) {
  return std::all_of(v.begin(), v.end(), [](real x) { return x == 1.0; });
}

bool all_zero(const Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] != 0.0) return false;
  }
  return true;
}

}  // namespace

std::size_t ViewTransform::channels() const {
  if (add.rank() != 3) throw Error("view: add field must be [H,W,C], got " + shape_to_string(add.shape()));
  return add.dim(2);
}

Shape ViewTransform::out_shape() const {
  validate();
  return Shape{map->out_h, map->out_w, channels()};
}

void ViewTransform::validate() const {
  if (!map) throw Error("view: transform has no coordinate map");
  map->validate();
  if (add.rank() != 3 || add.dim(0) != map->out_h || add.dim(1) != map->out_w) {
    throw Error("view: add field shape " + shape_to_string(add.shape()) +
                " does not match map output " + std::to_string(map->out_h) + "x" +
                std::to_string(map->out_w));
  }
  if (!channel_mul.empty() && channel_mul.size() != add.dim(2)) {
    throw Error("view: channel_mul has " + std::to_string(channel_mul.size()) +
                " entries for " + std::to_string(add.dim(2)) + " channels");
  }
}

Tensor ViewTransform::apply(const Tensor& x) const {
  validate();
  const std::size_t c = channels();
  if (x.rank() != 3 || x.dim(0) != map->in_h || x.dim(1) != map->in_w || x.dim(2) != c) {
    throw Error("view: input shape " + shape_to_string(x.shape()) + " does not match transform (" +
                std::to_string(map->in_h) + "x" + std::to_string(map->in_w) + "x" +
                std::to_string(c) + ")");
  }
  Tensor out = Tensor::full({map->out_h, map->out_w, c}, 0.0);
  for (std::size_t p = 0; p < map->rows(); ++p) {
    real* orow = out.data() + p * c;
    for (std::uint32_t k = map->row_offsets[p]; k < map->row_offsets[p + 1]; ++k) {
      const real w = map->weights[k];
      const real* xrow = x.data() + static_cast<std::size_t>(map->cols[k]) * c;
      for (std::size_t ch = 0; ch < c; ++ch) orow[ch] += w * xrow[ch];
    }
  }
  const bool use_mul = !channel_mul.empty() && !all_ones(channel_mul);
  if (use_mul) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= channel_mul[i % c];
  }
  if (!all_zero(add)) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += add[i];
  }
  if (clamp_output) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(out[i], 0.0), 1.0);
  }
  return out;
}

diffmath::NodeRef ViewTransform::append(diffmath::Graph& graph, diffmath::NodeRef x) const {
  validate();
  const std::size_t c = channels();
  diffmath::NodeRef y = graph.sparse_matvec(map, x);
  if (!channel_mul.empty() && !all_ones(channel_mul)) {
    Tensor field({map->out_h, map->out_w, c});
    for (std::size_t i = 0; i < field.size(); ++i) field[i] = channel_mul[i % c];
    y = graph.mul(y, graph.constant(std::move(field), "channel_mul"));
  }
  if (!all_zero(add)) {
    y = graph.add(y, graph.constant(add, "photometric_add"));
  }
  if (clamp_output) y = graph.clamp(y, 0.0, 1.0);
  return y;
}

}  // namespace eot::view
