#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eot/dataset.hpp"
#include "eot/graph.hpp"
#include "eot/tensor.hpp"

namespace eot::classifier {

enum class LayerKind { kConv, kRelu, kMaxPool, kDense, kLogSoftmax };

struct LayerSpec {
  LayerKind kind;
  std::size_t kernel = 0;  // conv: square kernel size
  std::size_t units = 0;   // conv: output channels; dense: output units
};

/// Layer list plus input geometry. The network must end with
/// dense(class_count) -> log-softmax.
struct Architecture {
  Shape input_shape;  // [H,W,C]
  std::size_t class_count = 0;
  std::vector<LayerSpec> layers;

  /// conv(5,8)-relu-maxpool-conv(5,16)-relu-maxpool-dense(64)-relu-
  /// dense(classes)-logsoftmax.
  static Architecture default_cnn(Shape input_shape, std::size_t class_count);
  /// Dense-only network with the given hidden widths.
  static Architecture dense_net(Shape input_shape, const std::vector<std::size_t>& hidden,
                                std::size_t class_count);

  void validate() const;
  /// Shapes of the trainable tensors in layer order (kernel,bias per conv;
  /// weights,bias per dense).
  std::vector<Shape> parameter_shapes() const;
  std::string layers_string() const;
  static std::vector<LayerSpec> parse_layers(const std::string& text);
};

struct Model {
  Architecture arch;
  std::vector<Tensor> params;

  /// Log-probabilities for one [H,W,C] image; exp sums to 1 within 1e-9.
  Tensor log_probs(const Tensor& image) const;
  /// [N,H,W,C] -> [N,class_count].
  Tensor log_probs_batch(const Tensor& images) const;
  /// Gradient of log P(target | image) with respect to the image.
  Tensor input_gradient(const Tensor& image, std::size_t target) const;

  void validate() const;
};

/// Appends the network to a graph over a batched input [N,H,W,C]; `params`
/// supplies one node per parameter tensor (inputs when training, constants
/// when frozen). Returns the [N,class_count] log-probability node.
diffmath::NodeRef append_forward(diffmath::Graph& graph, const Architecture& arch,
                                 const std::vector<diffmath::NodeRef>& params,
                                 diffmath::NodeRef x);

/// Same, with the model's parameters embedded as constants (for attacks and
/// evaluation: gradients never flow into the weights).
diffmath::NodeRef append_forward_frozen(diffmath::Graph& graph, const Model& model,
                                        diffmath::NodeRef x);

/// He-initialized parameters; biases zero.
Model init_model(const Architecture& arch, std::uint64_t seed);

struct TrainConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 32;
  real learning_rate = 0.05;
  real momentum = 0.9;
  real holdout_fraction = 0.1;
  std::uint64_t seed = 1;
};

struct TrainReport {
  real holdout_accuracy = 0.0;
  std::size_t holdout_count = 0;
  std::vector<real> epoch_mean_loss;
};

/// SGD with momentum on the cross-entropy loss; deterministic given the
/// seed. Throws (advising a lower learning rate) if the loss diverges.
Model train(const dataset::LabeledDataset& data, const Architecture& arch,
            const TrainConfig& cfg, TrainReport* report = nullptr);

/// Binary model file: magic "EOTMDL01", length-prefixed key=value UTF-8
/// header, little-endian f64 parameter payload, CRC32 of the payload.
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

}  // namespace eot::classifier
