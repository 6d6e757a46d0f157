#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "eot/graph.hpp"
#include "eot/rng.hpp"
#include "eot/tensor.hpp"
#include "eot/view.hpp"

namespace eot::renderer3d {

/// Triangle mesh with one texture coordinate per vertex (OBJ v/vt pairs are
/// unified at load). Positions are normalized to fit the unit sphere.
struct Mesh {
  std::vector<std::array<real, 3>> vertices;
  std::vector<std::array<real, 2>> uvs;  // one per vertex, in [0,1]
  std::vector<std::array<std::size_t, 3>> faces;

  void validate() const;
};

/// Wavefront OBJ subset: v, vt, and f with v/vt indices; polygons are
/// fan-triangulated; anything else is ignored. Positions are recentered on
/// the bounding-box midpoint and scaled onto the unit sphere.
Mesh load_obj(const std::string& path);

/// Axis-aligned cube scaled to the unit sphere; each face carries the full
/// [0,1]^2 texture.
Mesh unit_cube_mesh();

/// Single quad at z=0 sized to exactly fill the view frustum cross-section
/// for an identity pose at `camera_distance`, with identity UV mapping.
Mesh fullscreen_quad_mesh(real camera_distance, real aspect);

/// One sampled view of the object (the simulation distribution).
struct Pose {
  real camera_distance = 2.75;
  real tx = 0.0, ty = 0.0;
  std::array<real, 4> rotation = {1.0, 0.0, 0.0, 0.0};  // unit quaternion w,x,y,z
  std::array<real, 3> background = {0.5, 0.5, 0.5};

  void validate() const;  // unit norm within 1e-9, background in [0,1]
};

/// Uniform ranges for Pose sampling (the standard simulation distribution).
struct Pose3DConfig {
  real min_distance = 2.5, max_distance = 3.0;
  real min_translation = -0.05, max_translation = 0.05;
  real min_background = 0.1, max_background = 1.0;
  /// When false the rotation is pinned to the identity quaternion (and no
  /// rotation values are drawn), collapsing the orientation part of the
  /// distribution to a point for degenerate-distribution tests.
  bool randomize_rotation = true;

  void validate() const;
};

/// Photometric and printing-error effects applied on top of a render (the
/// physical-world distribution adds these to the simulation pose).
struct PhysicalParams {
  real additive_light = 0.0;
  real multiplicative_light = 1.0;
  std::array<real, 3> per_channel_add = {0.0, 0.0, 0.0};
  std::array<real, 3> per_channel_mul = {1.0, 1.0, 1.0};
  real noise_stdev = 0.0;
  std::uint64_t noise_seed = 0;
};

struct PhysicalConfig {
  real min_additive = -0.15, max_additive = 0.15;
  real min_multiplicative = 0.5, max_multiplicative = 2.0;
  real min_channel_add = -0.15, max_channel_add = 0.15;
  real min_channel_mul = 0.7, max_channel_mul = 1.3;
  real min_noise_stdev = 0.0, max_noise_stdev = 0.1;

  void validate() const;
};

/// Draw order is fixed (distance, tx, ty, quaternion, background) so adding
/// consumers never shifts another field's values.
Pose sample_pose(const Pose3DConfig& cfg, RngStream& rng);
PhysicalParams sample_physical(const PhysicalConfig& cfg, RngStream& rng);

/// The affine map of one pose: out = M x + b, with M the per-pixel bilinear
/// texel weights (CSR over image pixels) and b the background color on
/// uncovered pixels (zero on covered ones).
struct CoordinateMap {
  std::shared_ptr<const diffmath::SparseMap> map;  // texture grid -> image grid
  Tensor background;                               // [img_h,img_w,3]

  Shape texture_shape() const;  // [tex_h,tex_w,3]
  Shape image_shape() const;    // [img_h,img_w,3]
  void validate() const;
};

/// Rasterizes the mesh under a pose: perspective projection with a fixed
/// 45-degree vertical field of view, camera on +z looking at the origin,
/// z-buffered edge-function rasterization, perspective-correct UV
/// interpolation, bilinear texel weights with clamp-to-edge addressing.
CoordinateMap build_coordinate_map(const Mesh& mesh, const Pose& pose, std::size_t tex_h,
                                   std::size_t tex_w, std::size_t img_h, std::size_t img_w);

/// out = M x + b for a [tex_h,tex_w,3] texture (no clamp; weights are a
/// convex combination, so [0,1] inputs stay in [0,1]).
Tensor render_texture(const CoordinateMap& map, const Tensor& texture);

/// clamp(image * multiplicative_light * per_channel_mul + additive_light +
/// per_channel_add + seeded gaussian noise, 0, 1), elementwise over [H,W,3].
Tensor apply_physical_effects(const Tensor& image, const PhysicalParams& params);

/// Render plus physical effects folded into a single affine-plus-clamp view
/// over the texture, for use in attack objectives. Applying the result to a
/// texture matches apply_physical_effects(render_texture(...)) within
/// floating-point regrouping error.
view::ViewTransform compile_view_3d(const CoordinateMap& map, const PhysicalParams& params);

/// Rotates a vector by a unit quaternion (w,x,y,z).
std::array<real, 3> rotate_vector(const std::array<real, 4>& q, const std::array<real, 3>& v);

}  // namespace eot::renderer3d
