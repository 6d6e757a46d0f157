#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eot/tensor.hpp"
#include "eot/transforms2d.hpp"

namespace eot::dataset {

/// Images in [0,1] with integer labels in [0, class_count).
struct LabeledDataset {
  Tensor images = Tensor(Shape{0, 1, 1, 1});  // [N,H,W,C]
  std::vector<int> labels;
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  Shape image_shape() const;
  Tensor image(std::size_t index) const;
  void validate() const;
};

/// Reads an IDX image/label file pair (big-endian, magic 0x00000803 for
/// images and 0x00000801 for labels); pixels are scaled to [0,1] by /255.
LabeledDataset ingest_idx(const std::string& images_path, const std::string& labels_path);

/// Writes a grayscale [N,H,W,1] dataset as an IDX pair; pixels are rounded
/// to bytes. ingest_idx(write_idx(d)) reproduces the rounded dataset exactly.
void write_idx(const LabeledDataset& data, const std::string& images_path,
               const std::string& labels_path);

/// Procedural 10-class stroke-font digit images, 28x28x1, white on black,
/// with per-sample affine jitter, stroke-width/ink variation, and mild noise.
LabeledDataset make_digit_dataset(std::size_t per_class, std::uint64_t seed);

/// Two linearly separable 6x6x1 blob classes (left-bright vs right-bright).
LabeledDataset make_blob_dataset(std::size_t per_class, std::uint64_t seed);

/// Procedural 3-class color-shape images, 32x32x3: a filled disk (class 0,
/// red-dominant), square (class 1, green-dominant), or triangle (class 2,
/// blue-dominant) with jittered center, size, and color over a random
/// background. Gives color inputs so perceptual-distance paths are
/// meaningful, and class signals a painted texture can reach.
LabeledDataset make_color_shape_dataset(std::size_t per_class, std::uint64_t seed);

/// Expands a dataset onto canvases: each source image is placed `copies`
/// times through independent draws from the 2D transformation distribution.
/// This is how the canvas-input classifier's training set is produced.
LabeledDataset transform_to_canvas(const LabeledDataset& source,
                                   const transforms2d::Dist2DConfig& cfg, std::size_t canvas_h,
                                   std::size_t canvas_w, std::size_t copies, std::uint64_t seed);

}  // namespace eot::dataset
