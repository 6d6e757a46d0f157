#include "eot/classifier.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

#include "eot/errors.hpp"
#include "eot/rng.hpp"

#include "binio.hpp"

namespace eot::classifier {

namespace dm = eot::diffmath;

namespace {

[[noreturn]] void fail(const std::string& message) { throw Error("classifier: " + message); }

std::string layer_context(std::size_t index) { return "layer " + std::to_string(index) + ": "; }

/// Per-sample activation shape while walking the layer list. `flat` flips to
/// true at the first dense layer; spatial layers are rejected afterwards.
struct ShapeCursor {
  Shape shape;  // [H,W,C] while spatial, [K] once flat
  bool flat = false;
};

void advance(ShapeCursor& cur, const LayerSpec& layer, std::size_t index,
             std::vector<Shape>* param_shapes) {
  switch (layer.kind) {
    case LayerKind::kConv: {
      if (cur.flat) fail(layer_context(index) + "conv after a dense layer is not supported");
      if (layer.kernel == 0 || layer.units == 0)
        fail(layer_context(index) + "conv needs a positive kernel size and channel count");
      const std::size_t h = cur.shape[0], w = cur.shape[1], c = cur.shape[2];
      if (layer.kernel > h || layer.kernel > w)
        fail(layer_context(index) + "conv kernel " + std::to_string(layer.kernel) +
             " exceeds activation " + shape_to_string(cur.shape));
      if (param_shapes) {
        param_shapes->push_back({layer.kernel, layer.kernel, c, layer.units});
        param_shapes->push_back({layer.units});
      }
      cur.shape = {h - layer.kernel + 1, w - layer.kernel + 1, layer.units};
      break;
    }
    case LayerKind::kRelu:
      break;
    case LayerKind::kMaxPool: {
      if (cur.flat) fail(layer_context(index) + "maxpool after a dense layer is not supported");
      const std::size_t h = cur.shape[0], w = cur.shape[1];
      if (h < 2 || w < 2)
        fail(layer_context(index) + "maxpool needs height and width >= 2, got " +
             shape_to_string(cur.shape));
      cur.shape = {h / 2, w / 2, cur.shape[2]};
      break;
    }
    case LayerKind::kDense: {
      if (layer.units == 0) fail(layer_context(index) + "dense needs a positive unit count");
      const std::size_t in = numel(cur.shape);
      if (param_shapes) {
        param_shapes->push_back({in, layer.units});
        param_shapes->push_back({layer.units});
      }
      cur.shape = {layer.units};
      cur.flat = true;
      break;
    }
    case LayerKind::kLogSoftmax:
      if (!cur.flat) fail(layer_context(index) + "logsoftmax requires a dense layer before it");
      break;
  }
}

std::size_t parse_size(const std::string& text, const std::string& token) {
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || value == 0)
    fail("bad layer token '" + token + "'");
  return value;
}

void shuffle_indices(std::vector<std::size_t>& v, RngStream& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(v[i - 1], v[j]);
  }
}

std::size_t argmax_row(const Tensor& t, std::size_t row, std::size_t cols) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < cols; ++j)
    if (t[row * cols + j] > t[row * cols + best]) best = j;  // ties keep the lowest index
  return best;
}

}  // namespace

Architecture Architecture::default_cnn(Shape input_shape, std::size_t class_count) {
  Architecture arch;
  arch.input_shape = std::move(input_shape);
  arch.class_count = class_count;
  arch.layers = {{LayerKind::kConv, 5, 8},      {LayerKind::kRelu, 0, 0},
                 {LayerKind::kMaxPool, 0, 0},   {LayerKind::kConv, 5, 16},
                 {LayerKind::kRelu, 0, 0},      {LayerKind::kMaxPool, 0, 0},
                 {LayerKind::kDense, 0, 64},    {LayerKind::kRelu, 0, 0},
                 {LayerKind::kDense, 0, class_count}, {LayerKind::kLogSoftmax, 0, 0}};
  return arch;
}

Architecture Architecture::dense_net(Shape input_shape, const std::vector<std::size_t>& hidden,
                                     std::size_t class_count) {
  Architecture arch;
  arch.input_shape = std::move(input_shape);
  arch.class_count = class_count;
  for (const std::size_t units : hidden) {
    arch.layers.push_back({LayerKind::kDense, 0, units});
    arch.layers.push_back({LayerKind::kRelu, 0, 0});
  }
  arch.layers.push_back({LayerKind::kDense, 0, class_count});
  arch.layers.push_back({LayerKind::kLogSoftmax, 0, 0});
  return arch;
}

void Architecture::validate() const {
  if (input_shape.size() != 3)
    fail("input shape must be [H,W,C], got " + shape_to_string(input_shape));
  for (const std::size_t d : input_shape)
    if (d == 0) fail("input shape has a zero dimension: " + shape_to_string(input_shape));
  if (class_count < 2) fail("need at least 2 classes");
  if (layers.empty()) fail("layer list is empty");
  if (layers.back().kind != LayerKind::kLogSoftmax) fail("network must end with logsoftmax");
  if (layers.size() < 2 || layers[layers.size() - 2].kind != LayerKind::kDense ||
      layers[layers.size() - 2].units != class_count)
    fail("network must end with dense(" + std::to_string(class_count) + ") before logsoftmax");
  for (std::size_t i = 0; i + 1 < layers.size(); ++i)
    if (layers[i].kind == LayerKind::kLogSoftmax)
      fail(layer_context(i) + "logsoftmax is only allowed as the final layer");
  ShapeCursor cur{input_shape, false};
  for (std::size_t i = 0; i < layers.size(); ++i) advance(cur, layers[i], i, nullptr);
}

std::vector<Shape> Architecture::parameter_shapes() const {
  validate();
  std::vector<Shape> shapes;
  ShapeCursor cur{input_shape, false};
  for (std::size_t i = 0; i < layers.size(); ++i) advance(cur, layers[i], i, &shapes);
  return shapes;
}

std::string Architecture::layers_string() const {
  std::string out;
  for (const LayerSpec& layer : layers) {
    if (!out.empty()) out += ',';
    switch (layer.kind) {
      case LayerKind::kConv:
        out += "conv" + std::to_string(layer.kernel) + "x" + std::to_string(layer.units);
        break;
      case LayerKind::kRelu:
        out += "relu";
        break;
      case LayerKind::kMaxPool:
        out += "maxpool";
        break;
      case LayerKind::kDense:
        out += "dense" + std::to_string(layer.units);
        break;
      case LayerKind::kLogSoftmax:
        out += "logsoftmax";
        break;
    }
  }
  return out;
}

std::vector<LayerSpec> Architecture::parse_layers(const std::string& text) {
  std::vector<LayerSpec> layers;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find(',', pos);
    if (end == std::string::npos) end = text.size();
    std::string token = text.substr(pos, end - pos);
    pos = end + 1;
    const auto first = token.find_first_not_of(" \t");
    if (first == std::string::npos) fail("empty layer token in '" + text + "'");
    token = token.substr(first, token.find_last_not_of(" \t") - first + 1);
    if (token == "relu") {
      layers.push_back({LayerKind::kRelu, 0, 0});
    } else if (token == "maxpool") {
      layers.push_back({LayerKind::kMaxPool, 0, 0});
    } else if (token == "logsoftmax") {
      layers.push_back({LayerKind::kLogSoftmax, 0, 0});
    } else if (token.rfind("conv", 0) == 0) {
      const std::string rest = token.substr(4);
      const auto x = rest.find('x');
      if (x == std::string::npos || x == 0 || x + 1 >= rest.size())
        fail("bad layer token '" + token + "' (expected convKxC)");
      layers.push_back({LayerKind::kConv, parse_size(rest.substr(0, x), token),
                        parse_size(rest.substr(x + 1), token)});
    } else if (token.rfind("dense", 0) == 0) {
      layers.push_back({LayerKind::kDense, 0, parse_size(token.substr(5), token)});
    } else {
      fail("unknown layer token '" + token + "'");
    }
    if (end == text.size()) break;
  }
  return layers;
}

dm::NodeRef append_forward(dm::Graph& graph, const Architecture& arch,
                           const std::vector<dm::NodeRef>& params, dm::NodeRef x) {
  arch.validate();
  const std::vector<Shape> expected = arch.parameter_shapes();
  if (params.size() != expected.size())
    fail("expected " + std::to_string(expected.size()) + " parameter tensors, got " +
         std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i)
    if (graph.shape_of(params[i]) != expected[i])
      fail("parameter " + std::to_string(i) + " has shape " +
           shape_to_string(graph.shape_of(params[i])) + ", expected " +
           shape_to_string(expected[i]));
  const Shape& xs = graph.shape_of(x);
  if (xs.size() != 4 || Shape(xs.begin() + 1, xs.end()) != arch.input_shape)
    fail("forward input must be [N," + shape_to_string(arch.input_shape) + "], got " +
         shape_to_string(xs));

  const std::size_t batch = xs[0];
  dm::NodeRef h = x;
  std::size_t p = 0;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& layer = arch.layers[i];
    switch (layer.kind) {
      case LayerKind::kConv:
        h = graph.conv2d(h, params[p], params[p + 1], "conv" + std::to_string(i));
        p += 2;
        break;
      case LayerKind::kRelu:
        h = graph.relu(h);
        break;
      case LayerKind::kMaxPool:
        h = graph.maxpool2(h);
        break;
      case LayerKind::kDense: {
        if (graph.shape_of(h).size() != 2)
          h = graph.reshape(h, {batch, numel(graph.shape_of(h)) / batch});
        h = graph.bias_add(graph.matmul(h, params[p]), params[p + 1]);
        p += 2;
        break;
      }
      case LayerKind::kLogSoftmax:
        h = graph.log_softmax(h);
        break;
    }
  }
  return h;
}

dm::NodeRef append_forward_frozen(dm::Graph& graph, const Model& model, dm::NodeRef x) {
  model.validate();
  std::vector<dm::NodeRef> params;
  params.reserve(model.params.size());
  for (std::size_t i = 0; i < model.params.size(); ++i)
    params.push_back(graph.constant(model.params[i], "weights" + std::to_string(i)));
  return append_forward(graph, model.arch, params, x);
}

Model init_model(const Architecture& arch, std::uint64_t seed) {
  Model model;
  model.arch = arch;
  RngStream init = RngStream(seed).fork("init");
  for (const Shape& shape : arch.parameter_shapes()) {
    Tensor t(shape);  // zero-filled; biases stay zero
    if (shape.size() > 1) {
      const std::size_t fan_in =
          shape.size() == 4 ? shape[0] * shape[1] * shape[2] : shape[0];
      const real stdev = std::sqrt(2.0 / static_cast<real>(fan_in));
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = init.normal() * stdev;
    }
    model.params.push_back(std::move(t));
  }
  return model;
}

void Model::validate() const {
  arch.validate();
  const std::vector<Shape> expected = arch.parameter_shapes();
  if (params.size() != expected.size())
    fail("model has " + std::to_string(params.size()) + " parameter tensors, expected " +
         std::to_string(expected.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != expected[i])
      fail("parameter " + std::to_string(i) + " has shape " +
           shape_to_string(params[i].shape()) + ", expected " + shape_to_string(expected[i]));
    if (!params[i].all_finite())
      fail("parameter " + std::to_string(i) + " contains non-finite values");
  }
}

Tensor Model::log_probs(const Tensor& image) const {
  if (image.shape() != arch.input_shape)
    fail("image shape " + shape_to_string(image.shape()) + " does not match model input " +
         shape_to_string(arch.input_shape));
  Shape batched = arch.input_shape;
  batched.insert(batched.begin(), 1);
  Tensor batch(batched);
  std::memcpy(batch.data(), image.data(), image.size() * sizeof(real));
  const Tensor rows = log_probs_batch(batch);
  Tensor out(Shape{arch.class_count});
  std::memcpy(out.data(), rows.data(), out.size() * sizeof(real));
  return out;
}

Tensor Model::log_probs_batch(const Tensor& images) const {
  validate();
  const Shape& s = images.shape();
  if (s.size() != 4 || Shape(s.begin() + 1, s.end()) != arch.input_shape)
    fail("batch shape " + shape_to_string(s) + " does not match model input [N," +
         shape_to_string(arch.input_shape) + "]");
  const std::size_t n = s[0];
  Tensor out(Shape{n, arch.class_count});
  if (n == 0) return out;

  const std::size_t chunk = std::min<std::size_t>(n, 64);
  const std::size_t sample = numel(arch.input_shape);
  dm::Graph graph;
  Shape xshape = arch.input_shape;
  xshape.insert(xshape.begin(), chunk);
  const dm::NodeRef x = graph.input("x", xshape);
  graph.set_output("logp", append_forward_frozen(graph, *this, x));

  Tensor buffer(xshape);
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t count = std::min(chunk, n - start);
    std::memcpy(buffer.data(), images.data() + start * sample, count * sample * sizeof(real));
    if (count < chunk)
      std::fill(buffer.data() + count * sample, buffer.data() + chunk * sample, 0.0);
    const Tensor logp = dm::evaluate(graph, {{"x", buffer}}).at("logp");
    std::memcpy(out.data() + start * arch.class_count, logp.data(),
                count * arch.class_count * sizeof(real));
  }
  return out;
}

Tensor Model::input_gradient(const Tensor& image, std::size_t target) const {
  if (image.shape() != arch.input_shape)
    fail("image shape " + shape_to_string(image.shape()) + " does not match model input " +
         shape_to_string(arch.input_shape));
  if (target >= arch.class_count)
    fail("target class " + std::to_string(target) + " out of range (classes: " +
         std::to_string(arch.class_count) + ")");
  Shape batched = arch.input_shape;
  batched.insert(batched.begin(), 1);
  Tensor batch(batched);
  std::memcpy(batch.data(), image.data(), image.size() * sizeof(real));

  dm::Graph graph;
  const dm::NodeRef x = graph.input("x", batched);
  const dm::NodeRef logp = append_forward_frozen(graph, *this, x);
  graph.set_output("objective", graph.reduce_sum(graph.gather(logp, {target})));
  Tensor grad = dm::gradient(graph, {{"x", batch}}, "x", "objective");
  return Tensor(arch.input_shape, std::vector<real>(grad.data(), grad.data() + grad.size()));
}

Model train(const dataset::LabeledDataset& data, const Architecture& arch,
            const TrainConfig& cfg, TrainReport* report) {
  arch.validate();
  data.validate();
  if (data.size() == 0) fail("training dataset is empty");
  if (data.image_shape() != arch.input_shape)
    fail("dataset images " + shape_to_string(data.image_shape()) +
         " do not match architecture input " + shape_to_string(arch.input_shape));
  if (data.class_count != arch.class_count)
    fail("dataset has " + std::to_string(data.class_count) + " classes, architecture expects " +
         std::to_string(arch.class_count));
  if (cfg.batch_size == 0) fail("batch size must be positive");
  if (!(cfg.learning_rate > 0.0)) fail("learning rate must be positive");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) fail("momentum must be in [0,1)");
  if (cfg.holdout_fraction < 0.0 || cfg.holdout_fraction >= 1.0)
    fail("holdout fraction must be in [0,1)");

  const RngStream root(cfg.seed);
  Model model = init_model(arch, root.fork("params").base_seed());

  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  RngStream split = root.fork("split");
  shuffle_indices(order, split);
  std::size_t holdout =
      static_cast<std::size_t>(std::llround(static_cast<double>(n) * cfg.holdout_fraction));
  holdout = std::min(holdout, n - 1);
  const std::size_t train_count = n - holdout;
  const std::vector<std::size_t> train_idx(order.begin(), order.begin() + train_count);
  const std::vector<std::size_t> hold_idx(order.begin() + train_count, order.end());

  const std::size_t batch = std::min(cfg.batch_size, train_count);
  const std::size_t sample = numel(arch.input_shape);
  const std::size_t classes = arch.class_count;

  dm::Graph graph;
  Shape xshape = arch.input_shape;
  xshape.insert(xshape.begin(), batch);
  const dm::NodeRef x = graph.input("x", xshape);
  const dm::NodeRef onehot = graph.input("onehot", {batch, classes});
  std::vector<dm::NodeRef> pnodes;
  std::vector<std::string> pnames;
  const std::vector<Shape> pshapes = arch.parameter_shapes();
  for (std::size_t i = 0; i < pshapes.size(); ++i) {
    pnames.push_back("p" + std::to_string(i));
    pnodes.push_back(graph.input(pnames.back(), pshapes[i]));
  }
  const dm::NodeRef logp = append_forward(graph, arch, pnodes, x);
  // Cross-entropy: mean over the batch of -log P(label | image).
  graph.set_output("loss", graph.scale(graph.reduce_sum(graph.mul(logp, onehot)),
                                       -1.0 / static_cast<real>(batch)));

  std::vector<Tensor> velocity;
  for (const Tensor& p : model.params) velocity.emplace_back(p.shape());

  if (report) *report = TrainReport{};
  const RngStream epochs_rng = root.fork("epochs");
  Tensor xbuf(xshape);
  Tensor onehot_buf(Shape{batch, classes});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> idx = train_idx;
    RngStream erng = epochs_rng.fork(epoch);
    shuffle_indices(idx, erng);
    real loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + batch <= idx.size(); start += batch) {
      std::fill(onehot_buf.data(), onehot_buf.data() + onehot_buf.size(), 0.0);
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t src = idx[start + b];
        std::memcpy(xbuf.data() + b * sample, data.images.data() + src * sample,
                    sample * sizeof(real));
        onehot_buf[b * classes + static_cast<std::size_t>(data.labels[src])] = 1.0;
      }
      std::map<std::string, Tensor> inputs{{"x", xbuf}, {"onehot", onehot_buf}};
      for (std::size_t i = 0; i < pnames.size(); ++i) inputs.emplace(pnames[i], model.params[i]);
      dm::ValueAndGradients vg;
      try {
        vg = dm::value_and_gradients(graph, inputs, pnames, "loss");
      } catch (const Error& e) {
        if (std::string(e.what()).find("non-finite") != std::string::npos)
          throw Error(std::string("classifier: training diverged (") + e.what() +
                      "); try a lower learning rate");
        throw;
      }
      loss_sum += vg.outputs.at("loss").item();
      ++batches;
      for (std::size_t i = 0; i < model.params.size(); ++i) {
        Tensor& v = velocity[i];
        Tensor& p = model.params[i];
        const Tensor& g = vg.grads.at(pnames[i]);
        for (std::size_t k = 0; k < p.size(); ++k) {
          v[k] = cfg.momentum * v[k] - cfg.learning_rate * g[k];
          p[k] += v[k];
        }
      }
    }
    if (report) report->epoch_mean_loss.push_back(batches ? loss_sum / batches : 0.0);
  }

  if (report) {
    report->holdout_count = hold_idx.size();
    if (!hold_idx.empty()) {
      Shape hshape = arch.input_shape;
      hshape.insert(hshape.begin(), hold_idx.size());
      Tensor himages(hshape);
      for (std::size_t i = 0; i < hold_idx.size(); ++i)
        std::memcpy(himages.data() + i * sample, data.images.data() + hold_idx[i] * sample,
                    sample * sizeof(real));
      const Tensor logp_rows = model.log_probs_batch(himages);
      std::size_t correct = 0;
      for (std::size_t i = 0; i < hold_idx.size(); ++i)
        if (argmax_row(logp_rows, i, classes) ==
            static_cast<std::size_t>(data.labels[hold_idx[i]]))
          ++correct;
      report->holdout_accuracy =
          static_cast<real>(correct) / static_cast<real>(hold_idx.size());
    }
  }
  return model;
}

namespace {

constexpr char kModelMagic[8] = {'E', 'O', 'T', 'M', 'D', 'L', '0', '1'};

using binio::get_f64_le;
using binio::get_u32_le;
using binio::put_f64_le;
using binio::put_u32_le;

std::map<std::string, std::string> parse_header(const std::string& header) {
  std::map<std::string, std::string> fields;
  std::size_t pos = 0;
  while (pos < header.size()) {
    std::size_t end = header.find('\n', pos);
    if (end == std::string::npos) end = header.size();
    const std::string line = header.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) fail("model header line without '=': '" + line + "'");
    fields[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return fields;
}

const std::string& header_field(const std::map<std::string, std::string>& fields,
                                const std::string& key) {
  const auto it = fields.find(key);
  if (it == fields.end()) fail("model header is missing '" + key + "'");
  return it->second;
}

Shape parse_shape_field(const std::string& text) {
  Shape shape;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find(',', pos);
    if (end == std::string::npos) end = text.size();
    const std::string part = text.substr(pos, end - pos);
    std::size_t value = 0;
    const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), value);
    if (ec != std::errc() || ptr != part.data() + part.size())
      fail("bad shape field '" + text + "' in model header");
    shape.push_back(value);
    if (end == text.size()) break;
    pos = end + 1;
  }
  return shape;
}

}  // namespace

void save_model(const Model& model, const std::string& path) {
  model.validate();
  std::string header;
  Shape ishape = model.arch.input_shape;
  std::string ishape_text;
  for (std::size_t i = 0; i < ishape.size(); ++i)
    ishape_text += (i ? "," : "") + std::to_string(ishape[i]);
  std::size_t total_values = 0;
  for (const Tensor& p : model.params) total_values += p.size();
  header += "layers=" + model.arch.layers_string() + "\n";
  header += "input_shape=" + ishape_text + "\n";
  header += "class_count=" + std::to_string(model.arch.class_count) + "\n";
  header += "total_values=" + std::to_string(total_values) + "\n";

  std::string payload;
  payload.reserve(total_values * 8);
  for (const Tensor& p : model.params)
    for (std::size_t i = 0; i < p.size(); ++i) put_f64_le(payload, p[i]);
  const auto crc = static_cast<std::uint32_t>(
      crc32_z(0, reinterpret_cast<const Bytef*>(payload.data()), payload.size()));

  std::string file;
  file.append(kModelMagic, sizeof kModelMagic);
  put_u32_le(file, static_cast<std::uint32_t>(header.size()));
  file += header;
  file += payload;
  put_u32_le(file, crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("cannot write model file '" + path + "'");
  out.write(file.data(), static_cast<std::streamsize>(file.size()));
  out.flush();
  if (!out.good()) fail("failed while writing model file '" + path + "'");
}

Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open model file '" + path + "'");
  const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                       std::istreambuf_iterator<char>());
  if (buf.size() < sizeof kModelMagic + 4) fail("model file '" + path + "' is truncated");
  if (std::memcmp(buf.data(), kModelMagic, 6) != 0)
    fail("'" + path + "' is not a model file (bad magic)");
  if (std::memcmp(buf.data() + 6, kModelMagic + 6, 2) != 0)
    fail("unsupported model file version '" + std::string(buf.begin() + 6, buf.begin() + 8) +
         "' in '" + path + "' (expected 01)");
  const std::size_t header_len = get_u32_le(buf.data() + 8);
  if (12 + header_len > buf.size()) fail("model file '" + path + "' is truncated");
  const std::string header(buf.begin() + 12, buf.begin() + 12 + static_cast<long>(header_len));
  const auto fields = parse_header(header);

  Architecture arch;
  arch.layers = Architecture::parse_layers(header_field(fields, "layers"));
  arch.input_shape = parse_shape_field(header_field(fields, "input_shape"));
  arch.class_count = parse_size(header_field(fields, "class_count"), "class_count");
  arch.validate();

  std::size_t total_values = 0;
  for (const Shape& s : arch.parameter_shapes()) total_values += numel(s);
  const std::size_t declared =
      parse_size(header_field(fields, "total_values"), "total_values");
  if (declared != total_values)
    fail("model header declares " + std::to_string(declared) + " values but the architecture has " +
         std::to_string(total_values));

  const std::size_t payload_off = 12 + header_len;
  const std::size_t payload_len = total_values * 8;
  if (payload_off + payload_len + 4 != buf.size())
    fail("model file '" + path + "' is truncated or has trailing bytes");
  const auto crc = static_cast<std::uint32_t>(
      crc32_z(0, reinterpret_cast<const Bytef*>(buf.data() + payload_off), payload_len));
  if (crc != get_u32_le(buf.data() + payload_off + payload_len))
    fail("model file '" + path + "' failed its checksum (corrupted payload)");

  Model model;
  model.arch = arch;
  std::size_t off = payload_off;
  for (const Shape& s : arch.parameter_shapes()) {
    Tensor t(s);
    for (std::size_t i = 0; i < t.size(); ++i, off += 8) t[i] = get_f64_le(buf.data() + off);
    model.params.push_back(std::move(t));
  }
  model.validate();
  return model;
}

}  // namespace eot::classifier
