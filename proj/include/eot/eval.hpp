#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "eot/classifier.hpp"
#include "eot/renderer3d.hpp"
#include "eot/rng.hpp"
#include "eot/tensor.hpp"
#include "eot/transforms2d.hpp"
#include "eot/view.hpp"

namespace eot::eval {

/// A source of concrete transformations: each call draws the next view from
/// an underlying distribution using the given stream. Samplers are pure in
/// the stream, so any measurement is reproducible from the stream's seed.
using TransformSampler = std::function<view::ViewTransform(RngStream&)>;

/// Sampler over the 2D distribution for images of the given shape placed on
/// a canvas_h x canvas_w canvas.
TransformSampler make_sampler_2d(const transforms2d::Dist2DConfig& dist, Shape image_shape,
                                 std::size_t canvas_h, std::size_t canvas_w);

/// Sampler over rendered poses of a mesh (plus photometric effects when a
/// physical distribution is given), from tex_h x tex_w textures to
/// img_h x img_w renders. Draw order per view matches the texture attack:
/// pose first, then physical parameters.
TransformSampler make_sampler_3d(renderer3d::Mesh mesh, renderer3d::Pose3DConfig pose_dist,
                                 std::optional<renderer3d::PhysicalConfig> physical_dist,
                                 std::size_t tex_h, std::size_t tex_w, std::size_t img_h,
                                 std::size_t img_w);

/// The indicator C(x, y): 1 iff the model's argmax class equals y, with
/// exact ties resolved to the lowest class index.
int classify_indicator(const classifier::Model& model, const Tensor& image, std::size_t y);

/// Fraction of n freshly sampled transformations under which x' is
/// classified as y_adv. The stream is taken by value: measurements with the
/// same stream state and sampler are reproducible bit for bit.
real adversariality(const classifier::Model& model, const Tensor& x_prime, std::size_t y_adv,
                    const TransformSampler& sampler, std::size_t n, RngStream stream);

/// Fraction of n freshly sampled transformations whose argmax lies in
/// true_classes (set-valued to support families of acceptable labels).
real classification_accuracy(const classifier::Model& model, const Tensor& x,
                             const std::set<std::size_t>& true_classes,
                             const TransformSampler& sampler, std::size_t n, RngStream stream);

/// One attacked example to evaluate: the original, its adversarial
/// counterpart, the set of acceptable true classes, and the attack target.
struct EvalExample {
  std::string id;  // must not contain commas, quotes, or line breaks
  Tensor original;
  Tensor adversarial;
  std::set<std::size_t> true_classes;
  std::size_t target = 0;
  real lambda = 0.0;  // annotation copied into the report rows
};

/// One report row; every example yields an "-original" and an "-adversarial"
/// row evaluated under the same n sampled views.
struct ExampleRow {
  std::string example_id;
  real lambda = 0.0;
  real accuracy = 0.0;        // views classified in true_classes
  real adversariality = 0.0;  // views classified as the target
  real l2_per_pixel = 0.0;    // perceptual distance to the original, per pixel
  /// The most frequent predicted classes over the sampled views (at most 5),
  /// as (class, fraction) pairs, most frequent first.
  std::vector<std::pair<std::size_t, real>> top_classes;
};

struct EvalReport {
  std::size_t n_samples = 0;  // views per row
  // Aggregates over the adversarial rows (the original rows keep the
  // baseline visible per example, l2 identically 0).
  real accuracy_mean = 0.0, accuracy_stdev = 0.0;
  real adversariality_mean = 0.0, adversariality_stdev = 0.0;
  real mean_l2_per_pixel = 0.0;
  std::vector<ExampleRow> rows;
  /// Adversarial-row adversariality histogram: 10 equal bins over [0,1],
  /// the last bin closed.
  std::array<std::size_t, 10> histogram{};

  void validate() const;
};

/// Evaluates every example over n views drawn per example from
/// stream.fork(example index); the original and adversarial rows of one
/// example share the same views (paired comparison).
EvalReport build_report(const std::vector<EvalExample>& examples, const classifier::Model& model,
                        const TransformSampler& sampler, std::size_t n, RngStream stream);

/// Single-example report whose views are drawn directly from `stream` (no
/// per-example fork). Passing an attack's holdout stream and holdout count
/// reproduces the attack's stored held-out adversariality in the adversarial
/// row, bit for bit.
EvalReport report_for_example(const EvalExample& example, const classifier::Model& model,
                              const TransformSampler& sampler, std::size_t n, RngStream stream);

/// CSV serialization with the documented columns
/// example_id,lambda,accuracy,adversariality,l2_per_pixel. Numbers use
/// shortest round-trip formatting; the bytes are a pure function of the
/// report.
std::string report_csv(const EvalReport& report);
void write_report_csv(const EvalReport& report, const std::string& path);

/// Renders a rows x cols grid of sampled views of the image, each tile
/// captioned "<class>:<confidence>%" for its predicted class. Returns the
/// montage tensor (same channel count as the image).
Tensor render_montage(const classifier::Model& model, const Tensor& image,
                      const TransformSampler& sampler, std::size_t rows, std::size_t cols,
                      RngStream stream);

/// render_montage written as a PNG.
void write_montage_png(const classifier::Model& model, const Tensor& image,
                       const TransformSampler& sampler, std::size_t rows, std::size_t cols,
                       RngStream stream, const std::string& path);

}  // namespace eot::eval
