#include <doctest.h>

#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "eot/errors.hpp"
#include "eot/graph.hpp"
#include "eot/renderer3d.hpp"
#include "eot/rng.hpp"
#include "eot/view.hpp"

using eot::Error;
using eot::real;
using eot::RngStream;
using eot::Shape;
using eot::Tensor;
namespace r3 = eot::renderer3d;
namespace dm = eot::diffmath;
namespace fs = std::filesystem;

namespace {

bool throws_with_substring(const std::function<void()>& fn, const std::string& needle) {
  try {
    fn();
  } catch (const Error& e) {
    return std::string(e.what()).find(needle) != std::string::npos;
  }
  return false;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("eot_renderer_test_" + name)) {
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  REQUIRE(bool(out));
  out << text;
}

Tensor random_texture(RngStream& rng, std::size_t h, std::size_t w) {
  Tensor t(Shape{h, w, 3});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform();
  return t;
}

// Cube OBJ: 8 vertices, 4 texture coordinates, 6 quad faces (fan-triangulated
// into 12 triangles on load).
const char* kCubeObj =
    "# unit-ish cube\n"
    "v -1 -1 -1\nv 1 -1 -1\nv 1 1 -1\nv -1 1 -1\n"
    "v -1 -1 1\nv 1 -1 1\nv 1 1 1\nv -1 1 1\n"
    "vt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\n"
    "f 1/1 2/2 3/3 4/4\n"
    "f 5/1 6/2 7/3 8/4\n"
    "f 1/1 2/2 6/3 5/4\n"
    "f 2/1 3/2 7/3 6/4\n"
    "f 3/1 4/2 8/3 7/4\n"
    "f 4/1 1/2 5/3 8/4\n";

r3::Pose identity_pose(real distance) {
  r3::Pose pose;
  pose.camera_distance = distance;
  pose.rotation = {1.0, 0.0, 0.0, 0.0};
  pose.background = {0.25, 0.5, 0.75};
  return pose;
}

// Applies only the linear part M of a coordinate map (no background).
Tensor apply_map_only(const r3::CoordinateMap& map, const Tensor& x) {
  eot::view::ViewTransform view;
  view.map = map.map;
  view.add = Tensor(map.background.shape());  // zeros
  view.clamp_output = false;
  return view.apply(x);
}

}  // namespace

TEST_CASE("obj loading fan-triangulates quads and normalizes to the unit sphere") {
  const TempDir dir("obj");
  write_text(dir.file("cube.obj"), kCubeObj);
  const r3::Mesh mesh = r3::load_obj(dir.file("cube.obj"));
  CHECK(mesh.faces.size() == 12);
  CHECK(mesh.vertices.size() == mesh.uvs.size());

  real max_norm = 0.0;
  std::array<real, 3> lo = {1e9, 1e9, 1e9}, hi = {-1e9, -1e9, -1e9};
  for (const auto& v : mesh.vertices) {
    max_norm = std::max(max_norm, std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]));
    for (std::size_t k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], v[k]);
      hi[k] = std::max(hi[k], v[k]);
    }
  }
  CHECK(std::fabs(max_norm - 1.0) <= 1e-12);
  for (std::size_t k = 0; k < 3; ++k) CHECK(std::fabs(lo[k] + hi[k]) <= 1e-12);  // centered
}

TEST_CASE("obj loading rejects the documented malformed inputs") {
  const TempDir dir("badobj");
  CHECK(throws_with_substring([&] { r3::load_obj(dir.file("missing.obj")); }, "cannot open"));

  write_text(dir.file("zero_index.obj"), "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 0/1 2/1 3/1\n");
  CHECK(throws_with_substring([&] { r3::load_obj(dir.file("zero_index.obj")); },
                              "out of range"));

  write_text(dir.file("no_vt.obj"), "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1 2 3\n");
  CHECK(throws_with_substring([&] { r3::load_obj(dir.file("no_vt.obj")); },
                              "missing a texture coordinate"));

  write_text(dir.file("short_face.obj"), "v 0 0 0\nv 1 0 0\nvt 0 0\nf 1/1 2/1\n");
  CHECK(throws_with_substring([&] { r3::load_obj(dir.file("short_face.obj")); },
                              "fewer than 3"));

  write_text(dir.file("bad_vertex.obj"), "v 0 zero 0\n");
  CHECK(throws_with_substring([&] { r3::load_obj(dir.file("bad_vertex.obj")); },
                              "malformed vertex"));

  write_text(dir.file("no_faces.obj"), "v 0 0 0\nvt 0 0\n");
  CHECK(throws_with_substring([&] { r3::load_obj(dir.file("no_faces.obj")); }, "no faces"));

  write_text(dir.file("bad_uv.obj"),
             "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 2\nvt 0 0\nf 1/1 2/2 3/2\n");
  CHECK(throws_with_substring([&] { r3::load_obj(dir.file("bad_uv.obj")); }, "outside [0,1]"));
}

TEST_CASE("pose sampling respects the configured ranges") {
  const r3::Pose3DConfig cfg;
  RngStream rng(31);
  for (int i = 0; i < 200; ++i) {
    const r3::Pose pose = r3::sample_pose(cfg, rng);
    CHECK(pose.camera_distance >= 2.5);
    CHECK(pose.camera_distance <= 3.0);
    CHECK(pose.tx >= -0.05);
    CHECK(pose.tx <= 0.05);
    CHECK(pose.ty >= -0.05);
    CHECK(pose.ty <= 0.05);
    for (const real c : pose.background) {
      CHECK(c >= 0.1);
      CHECK(c <= 1.0);
    }
    CHECK_NOTHROW(pose.validate());
  }

  r3::Pose3DConfig fixed = cfg;
  fixed.min_distance = fixed.max_distance = 2.75;
  fixed.min_translation = fixed.max_translation = 0.0;
  fixed.min_background = fixed.max_background = 0.5;
  const r3::Pose pose = r3::sample_pose(fixed, rng);
  CHECK(pose.camera_distance == 2.75);
  CHECK(pose.tx == 0.0);
  CHECK(pose.ty == 0.0);
  for (const real c : pose.background) CHECK(c == 0.5);
}

TEST_CASE("rotation sampling is uniform over the sphere of directions") {
  const r3::Pose3DConfig cfg;
  RngStream rng(77);
  std::array<real, 3> mean = {0.0, 0.0, 0.0};
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const r3::Pose pose = r3::sample_pose(cfg, rng);
    const std::array<real, 3> dir = r3::rotate_vector(pose.rotation, {1.0, 0.0, 0.0});
    // Rotations preserve length.
    const real norm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
    if (i < 100) CHECK(std::fabs(norm - 1.0) <= 1e-9);
    for (std::size_t k = 0; k < 3; ++k) mean[k] += dir[k];
  }
  for (real& c : mean) c /= static_cast<real>(n);
  const real mean_norm =
      std::sqrt(mean[0] * mean[0] + mean[1] * mean[1] + mean[2] * mean[2]);
  CHECK(mean_norm < 0.02);
}

TEST_CASE("a fullscreen quad with matching dims renders as the identity") {
  const std::size_t n = 16;
  const r3::Mesh quad = r3::fullscreen_quad_mesh(2.75, 1.0);
  const r3::CoordinateMap map = r3::build_coordinate_map(quad, identity_pose(2.75), n, n, n, n);
  CHECK_NOTHROW(map.validate());

  for (std::size_t pix = 0; pix < n * n; ++pix) {
    REQUIRE(map.map->row_offsets[pix + 1] - map.map->row_offsets[pix] == 1);
    const std::uint32_t k = map.map->row_offsets[pix];
    CHECK(map.map->cols[k] == pix);  // each pixel reads exactly its own texel
    CHECK(map.map->weights[k] == 1.0);
  }

  RngStream rng(3);
  const Tensor texture = random_texture(rng, n, n);
  const Tensor out = r3::render_texture(map, texture);
  CHECK(std::memcmp(out.data(), texture.data(), texture.size() * sizeof(real)) == 0);
}

TEST_CASE("coordinate maps are convex, deterministic, and affine") {
  const r3::Mesh cube = r3::unit_cube_mesh();
  const r3::Pose3DConfig cfg;
  RngStream rng(5);
  std::size_t covered_total = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const r3::Pose pose = r3::sample_pose(cfg, rng);
    const r3::CoordinateMap map = r3::build_coordinate_map(cube, pose, 12, 12, 24, 24);
    CHECK_NOTHROW(map.validate());  // weights nonnegative, rows sum to 1 +- 1e-9

    for (std::size_t pix = 0; pix < 24 * 24; ++pix)
      if (map.map->row_offsets[pix + 1] > map.map->row_offsets[pix]) ++covered_total;

    if (trial < 5) {
      // Same pose twice: identical sparsity and weights.
      const r3::CoordinateMap again = r3::build_coordinate_map(cube, pose, 12, 12, 24, 24);
      REQUIRE(again.map->cols.size() == map.map->cols.size());
      CHECK(std::memcmp(again.map->row_offsets.data(), map.map->row_offsets.data(),
                        map.map->row_offsets.size() * sizeof(std::uint32_t)) == 0);
      CHECK(std::memcmp(again.map->cols.data(), map.map->cols.data(),
                        map.map->cols.size() * sizeof(std::uint32_t)) == 0);
      CHECK(std::memcmp(again.map->weights.data(), map.map->weights.data(),
                        map.map->weights.size() * sizeof(real)) == 0);

      // Affinity: render(x1) - render(x2) == M (x1 - x2).
      const Tensor x1 = random_texture(rng, 12, 12);
      const Tensor x2 = random_texture(rng, 12, 12);
      const Tensor r1 = r3::render_texture(map, x1);
      const Tensor r2 = r3::render_texture(map, x2);
      Tensor diff(x1.shape());
      for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = x1[i] - x2[i];
      const Tensor mdiff = apply_map_only(map, diff);
      real max_err = 0.0;
      for (std::size_t i = 0; i < mdiff.size(); ++i)
        max_err = std::max(max_err, std::fabs((r1[i] - r2[i]) - mdiff[i]));
      CHECK(max_err <= 1e-10);
    }
  }
  // The cube (diameter 2 at distance <= 3, FOV 45 deg) covers a healthy share
  // of the frame on average.
  CHECK(covered_total > 100 * 24 * 24 / 10);
}

TEST_CASE("constant textures expose the partition of unity and background") {
  const r3::Mesh cube = r3::unit_cube_mesh();
  const r3::Pose pose = identity_pose(2.75);
  const r3::CoordinateMap map = r3::build_coordinate_map(cube, pose, 8, 8, 20, 20);

  const Tensor ones = Tensor::full({8, 8, 3}, 1.0);
  const Tensor rendered = r3::render_texture(map, ones);
  const Tensor zeros_tex(Shape{8, 8, 3});
  const Tensor bg_only = r3::render_texture(map, zeros_tex);
  bool saw_covered = false, saw_background = false;
  for (std::size_t pix = 0; pix < 400; ++pix) {
    const bool covered = map.map->row_offsets[pix + 1] > map.map->row_offsets[pix];
    for (std::size_t c = 0; c < 3; ++c) {
      if (covered) {
        CHECK(std::fabs(rendered[pix * 3 + c] - 1.0) <= 1e-9);
        CHECK(bg_only[pix * 3 + c] == 0.0);
        saw_covered = true;
      } else {
        CHECK(rendered[pix * 3 + c] == pose.background[c]);
        CHECK(bg_only[pix * 3 + c] == pose.background[c]);
        saw_background = true;
      }
    }
  }
  CHECK(saw_covered);
  CHECK(saw_background);
}

TEST_CASE("rendering differentiates with respect to the texture") {
  const r3::Mesh cube = r3::unit_cube_mesh();
  const r3::Pose3DConfig cfg;
  RngStream rng(9);
  const r3::Pose pose = r3::sample_pose(cfg, rng);
  const r3::CoordinateMap map = r3::build_coordinate_map(cube, pose, 6, 6, 12, 12);

  eot::view::ViewTransform view;
  view.map = map.map;
  view.add = map.background;
  view.clamp_output = false;
  dm::Graph graph;
  const dm::NodeRef x = graph.input("texture", {6, 6, 3});
  graph.set_output("mean", graph.reduce_mean(view.append(graph, x)));
  const Tensor texture = random_texture(rng, 6, 6);
  CHECK(dm::finite_diff_check(graph, {{"texture", texture}}, "texture", "mean", 1e-6) < 1e-6);
}

TEST_CASE("the z-buffer keeps the front triangle") {
  // Two triangles straddling the origin: the front one (closer to the +z
  // camera) reads the left texture half, the occluded one the right half.
  r3::Mesh mesh;
  mesh.vertices = {{-0.5, -0.5, 0.3}, {0.5, -0.5, 0.3}, {0.0, 0.5, 0.3},
                   {-0.9, -0.9, -0.3}, {0.9, -0.9, -0.3}, {0.0, 0.9, -0.3}};
  mesh.uvs = {{0.0, 0.0}, {0.4, 0.0}, {0.2, 0.8}, {0.6, 0.0}, {1.0, 0.0}, {0.8, 1.0}};
  mesh.faces = {{3, 4, 5}, {0, 1, 2}};  // back listed first; depth must win
  mesh.validate();

  const std::size_t tex = 16, img = 32;
  const r3::CoordinateMap map =
      r3::build_coordinate_map(mesh, identity_pose(2.75), tex, tex, img, img);
  CHECK_NOTHROW(map.validate());

  const auto tap_side = [&](std::size_t row, std::size_t col) {
    const std::size_t pix = row * img + col;
    REQUIRE(map.map->row_offsets[pix + 1] > map.map->row_offsets[pix]);
    int side = 0;  // -1 left half, +1 right half, 0 mixed
    bool left = false, right = false;
    for (std::uint32_t k = map.map->row_offsets[pix]; k < map.map->row_offsets[pix + 1]; ++k) {
      (map.map->cols[k] % tex < tex / 2 ? left : right) = true;
    }
    if (left && !right) side = -1;
    if (right && !left) side = +1;
    return side;
  };

  // Image center: both triangles cover it; the front one must win.
  CHECK(tap_side(img / 2, img / 2) == -1);
  // A point covered only by the larger back triangle (near its bottom edge).
  bool found_back_only = false;
  for (std::size_t row = img - 8; row < img && !found_back_only; ++row)
    for (std::size_t col = img / 2 - 2; col <= img / 2 + 2; ++col) {
      const std::size_t pix = row * img + col;
      if (map.map->row_offsets[pix + 1] > map.map->row_offsets[pix]) {
        if (tap_side(row, col) == +1) found_back_only = true;
        break;
      }
    }
  CHECK(found_back_only);
}

TEST_CASE("a mesh behind the camera yields an all-background map") {
  r3::Mesh mesh;
  mesh.vertices = {{-0.2, -0.2, 0.5}, {0.2, -0.2, 0.5}, {0.0, 0.2, 0.5}};
  mesh.uvs = {{0, 0}, {1, 0}, {0, 1}};
  mesh.faces = {{0, 1, 2}};
  r3::Pose pose = identity_pose(0.3);  // depth 0.3 - 0.5 < 0: behind the camera
  const r3::CoordinateMap map = r3::build_coordinate_map(mesh, pose, 4, 4, 8, 8);
  CHECK(map.map->cols.empty());
  for (std::size_t pix = 0; pix < 64; ++pix)
    for (std::size_t c = 0; c < 3; ++c) CHECK(map.background[pix * 3 + c] == pose.background[c]);
}

TEST_CASE("degenerate triangles are skipped without an error") {
  r3::Mesh mesh;
  mesh.vertices = {{-0.5, -0.5, 0.0}, {0.5, -0.5, 0.0}, {0.0, 0.5, 0.0},
                   {-0.4, 0.0, 0.0},  {0.0, 0.0, 0.0},  {0.4, 0.0, 0.0}};
  mesh.uvs = {{0, 0}, {1, 0}, {0, 1}, {0, 0}, {0.5, 0}, {1, 0}};
  mesh.faces = {{3, 4, 5}, {0, 1, 2}};  // first triangle is collinear
  const r3::CoordinateMap map =
      r3::build_coordinate_map(mesh, identity_pose(2.75), 4, 4, 16, 16);
  bool any_covered = false;
  for (std::size_t pix = 0; pix < 256; ++pix)
    if (map.map->row_offsets[pix + 1] > map.map->row_offsets[pix]) any_covered = true;
  CHECK(any_covered);
}

TEST_CASE("physical effects match the documented pointwise formula") {
  RngStream rng(21);
  Tensor image(Shape{4, 4, 3});
  for (std::size_t i = 0; i < image.size(); ++i) image[i] = rng.uniform();

  r3::PhysicalParams identity;
  const Tensor same = r3::apply_physical_effects(image, identity);
  CHECK(std::memcmp(same.data(), image.data(), image.size() * sizeof(real)) == 0);

  // Pure red image through per-channel mul (0.7, 1, 1): red channel becomes 0.7.
  Tensor red(Shape{2, 2, 3});
  for (std::size_t p = 0; p < 4; ++p) red[p * 3 + 0] = 1.0;
  r3::PhysicalParams mulp;
  mulp.per_channel_mul = {0.7, 1.0, 1.0};
  const Tensor dimmed = r3::apply_physical_effects(red, mulp);
  for (std::size_t p = 0; p < 4; ++p) {
    CHECK(dimmed[p * 3 + 0] == 0.7);
    CHECK(dimmed[p * 3 + 1] == 0.0);
    CHECK(dimmed[p * 3 + 2] == 0.0);
  }

  // Output clamps to [0,1].
  r3::PhysicalParams bright;
  bright.additive_light = 0.9;
  const Tensor clamped = r3::apply_physical_effects(image, bright);
  for (std::size_t i = 0; i < clamped.size(); ++i) {
    CHECK(clamped[i] <= 1.0);
    CHECK(clamped[i] >= 0.0);
  }

  // Seeded noise: identical params give a bit-identical result.
  r3::PhysicalParams noisy;
  noisy.noise_stdev = 0.1;
  noisy.noise_seed = 99;
  const Tensor n1 = r3::apply_physical_effects(image, noisy);
  const Tensor n2 = r3::apply_physical_effects(image, noisy);
  CHECK(std::memcmp(n1.data(), n2.data(), n1.size() * sizeof(real)) == 0);
  CHECK(eot::max_abs_diff(n1, image) > 0.0);
}

TEST_CASE("the compiled 3D view matches render plus effects") {
  const r3::Mesh cube = r3::unit_cube_mesh();
  RngStream rng(41);
  const r3::Pose3DConfig pose_cfg;
  const r3::PhysicalConfig phys_cfg;
  for (int trial = 0; trial < 5; ++trial) {
    const r3::Pose pose = r3::sample_pose(pose_cfg, rng);
    const r3::PhysicalParams phys = r3::sample_physical(phys_cfg, rng);
    const r3::CoordinateMap map = r3::build_coordinate_map(cube, pose, 8, 8, 16, 16);
    const Tensor texture = random_texture(rng, 8, 8);

    const Tensor composed = r3::apply_physical_effects(r3::render_texture(map, texture), phys);
    const eot::view::ViewTransform view = r3::compile_view_3d(map, phys);
    const Tensor direct = view.apply(texture);
    CHECK(eot::max_abs_diff(composed, direct) <= 1e-12);

    // Graph path agrees bit-for-bit with the direct path.
    dm::Graph graph;
    const dm::NodeRef x = graph.input("texture", {8, 8, 3});
    graph.set_output("y", view.append(graph, x));
    const Tensor via_graph = dm::evaluate(graph, {{"texture", texture}}).at("y");
    CHECK(std::memcmp(via_graph.data(), direct.data(), direct.size() * sizeof(real)) == 0);
  }
}

TEST_CASE("physical parameter sampling stays inside the configured ranges") {
  const r3::PhysicalConfig cfg;
  RngStream rng(55);
  for (int i = 0; i < 200; ++i) {
    const r3::PhysicalParams p = r3::sample_physical(cfg, rng);
    CHECK(p.additive_light >= -0.15);
    CHECK(p.additive_light <= 0.15);
    CHECK(p.multiplicative_light >= 0.5);
    CHECK(p.multiplicative_light <= 2.0);
    for (const real c : p.per_channel_add) {
      CHECK(c >= -0.15);
      CHECK(c <= 0.15);
    }
    for (const real c : p.per_channel_mul) {
      CHECK(c >= 0.7);
      CHECK(c <= 1.3);
    }
    CHECK(p.noise_stdev >= 0.0);
    CHECK(p.noise_stdev <= 0.1);
  }
}
