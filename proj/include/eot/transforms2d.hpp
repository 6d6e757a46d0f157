#pragma once

#include <cstdint>
#include <vector>

#include "eot/rng.hpp"
#include "eot/tensor.hpp"
#include "eot/view.hpp"

namespace eot::transforms2d {

/// Background intensity for canvas pixels not covered by the warped image.
inline constexpr real kBackground = 0.5;

/// Sampling ranges for the 2D transformation distribution. Defaults are the
/// standard 2D robustness distribution: scale in [0.9,1.4], rotation within
/// +-22.5 degrees, additive brightness within +-0.05, Gaussian noise stdev in
/// [0,0.1], translation anywhere that keeps the scaled image in bounds.
struct Dist2DConfig {
  real scale_min = 0.9, scale_max = 1.4;
  real rotation_min_deg = -22.5, rotation_max_deg = 22.5;
  real brightness_min = -0.05, brightness_max = 0.05;
  real noise_stdev_min = 0.0, noise_stdev_max = 0.1;
  /// When true, translation is drawn uniformly over all offsets keeping the
  /// scaled/rotated image inside the canvas (empty feasible range degrades to
  /// zero translation). When false, dx and dy are each drawn uniformly from
  /// [translation_min_px, translation_max_px].
  bool translation_any_in_bounds = true;
  real translation_min_px = 0.0, translation_max_px = 0.0;

  void validate() const;
};

/// One concrete draw t from the distribution. `rotation` is radians;
/// `dx`/`dy` move the image center relative to the canvas center, in pixels.
/// The noise field is fully determined by (noise_seed, noise_stdev), so a
/// params value denotes one fixed function t.
struct TransformParams2D {
  real scale = 1.0;
  real rotation = 0.0;
  real brightness = 0.0;
  real noise_stdev = 0.0;
  std::uint64_t noise_seed = 0;
  real dx = 0.0, dy = 0.0;
};

/// Draws each parameter uniformly from its configured range (in declaration
/// order: scale, rotation, brightness, noise stdev, dx, dy, noise seed).
/// Image and canvas geometry are needed to bound in-bounds translations.
TransformParams2D sample_params_2d(const Dist2DConfig& cfg, RngStream& rng,
                                   const Shape& image_shape, std::size_t canvas_h,
                                   std::size_t canvas_w);

/// Lowers one draw to the affine-plus-clamp form over a canvas of the given
/// size: inverse-mapped bilinear warp (scale, then rotation about the image
/// center, then translation), background fill for uncovered weight,
/// brightness, frozen Gaussian noise, final clamp to [0,1].
view::ViewTransform compile_transform_2d(const TransformParams2D& p, const Shape& image_shape,
                                         std::size_t canvas_h, std::size_t canvas_w);

/// compile + apply in one call; errors if the canvas cannot hold the scaled
/// (unrotated) image.
Tensor apply_transform_2d(const Tensor& image, const TransformParams2D& p, std::size_t canvas_h,
                          std::size_t canvas_w);

/// Elementwise sRGB -> CIELAB over an [H,W,3] image.
Tensor rgb_to_lab_image(const Tensor& image);

/// Euclidean norm of LAB(a) - LAB(b) over all entries; a and b are RGB
/// images of identical [H,W,3] shape.
real lab_distance(const Tensor& a, const Tensor& b);

/// lab_distance divided by the pixel count H*W.
real lab_distance_per_pixel(const Tensor& a, const Tensor& b);

/// Perceptual distance dispatcher used by the attack objective and reports:
/// LAB l2 for 3-channel images, plain intensity l2 otherwise.
real image_distance(const Tensor& a, const Tensor& b);

/// Mean of image_distance(t(x_adv), t(x)) over the given draws; noise seeds
/// are shared between the two applications, so noise cancels.
real expected_lab_distance(const Tensor& x_adv, const Tensor& x,
                           const std::vector<TransformParams2D>& params, std::size_t canvas_h,
                           std::size_t canvas_w);

}  // namespace eot::transforms2d
