#include "eot/renderer3d.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <utility>

#include "eot/errors.hpp"

namespace eot::renderer3d {

namespace {

constexpr real kFovY = 0.78539816339744830961;  // 45 degrees, vertical
constexpr real kNearPlane = 0.05;
// Fractional texel offsets this close to an integer are snapped so that
// exactly aligned geometry (the fullscreen quad) produces single-tap rows
// despite projection roundoff.
constexpr real kTexelSnap = 1e-12;

[[noreturn]] void fail(const std::string& message) { throw Error("renderer3d: " + message); }

struct ProjectedVertex {
  real sx = 0.0, sy = 0.0;  // screen-space position in pixels
  real inv_w = 0.0;         // 1 / camera depth
  real u_over_w = 0.0, v_over_w = 0.0;
};

real edge(real ax, real ay, real bx, real by, real px, real py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

}  // namespace

void Mesh::validate() const {
  if (vertices.size() != uvs.size())
    fail("mesh has " + std::to_string(vertices.size()) + " vertices but " +
         std::to_string(uvs.size()) + " texture coordinates");
  if (faces.empty()) fail("mesh has no faces");
  for (const auto& v : vertices)
    for (const real c : v)
      if (!std::isfinite(c)) fail("mesh vertex has a non-finite coordinate");
  for (const auto& uv : uvs)
    if (uv[0] < 0.0 || uv[0] > 1.0 || uv[1] < 0.0 || uv[1] > 1.0)
      fail("mesh texture coordinate (" + std::to_string(uv[0]) + "," + std::to_string(uv[1]) +
           ") outside [0,1]");
  for (const auto& f : faces)
    for (const std::size_t idx : f)
      if (idx >= vertices.size())
        fail("face index " + std::to_string(idx) + " out of range for " +
             std::to_string(vertices.size()) + " vertices");
}

void Pose::validate() const {
  const real norm = std::sqrt(rotation[0] * rotation[0] + rotation[1] * rotation[1] +
                              rotation[2] * rotation[2] + rotation[3] * rotation[3]);
  if (std::fabs(norm - 1.0) > 1e-9)
    fail("pose rotation quaternion has norm " + std::to_string(norm) + ", expected 1");
  if (!(camera_distance > 0.0)) fail("pose camera distance must be positive");
  for (const real c : background)
    if (c < 0.0 || c > 1.0) fail("pose background channel " + std::to_string(c) + " outside [0,1]");
}

void Pose3DConfig::validate() const {
  if (!(min_distance > 0.0) || min_distance > max_distance)
    fail("camera distance range must be positive with min <= max");
  if (min_translation > max_translation) fail("translation range has min > max");
  if (min_background > max_background || min_background < 0.0 || max_background > 1.0)
    fail("background range must lie inside [0,1] with min <= max");
}

void PhysicalConfig::validate() const {
  if (min_additive > max_additive) fail("additive light range has min > max");
  if (min_multiplicative > max_multiplicative || min_multiplicative < 0.0)
    fail("multiplicative light range must be nonnegative with min <= max");
  if (min_channel_add > max_channel_add) fail("per-channel additive range has min > max");
  if (min_channel_mul > max_channel_mul || min_channel_mul < 0.0)
    fail("per-channel multiplicative range must be nonnegative with min <= max");
  if (min_noise_stdev > max_noise_stdev || min_noise_stdev < 0.0)
    fail("noise stdev range must be nonnegative with min <= max");
}

std::array<real, 3> rotate_vector(const std::array<real, 4>& q, const std::array<real, 3>& v) {
  // v' = v + 2 q_w (q_xyz x v) + 2 q_xyz x (q_xyz x v)
  const real tx = 2.0 * (q[2] * v[2] - q[3] * v[1]);
  const real ty = 2.0 * (q[3] * v[0] - q[1] * v[2]);
  const real tz = 2.0 * (q[1] * v[1] - q[2] * v[0]);
  return {v[0] + q[0] * tx + (q[2] * tz - q[3] * ty),
          v[1] + q[0] * ty + (q[3] * tx - q[1] * tz),
          v[2] + q[0] * tz + (q[1] * ty - q[2] * tx)};
}

Pose sample_pose(const Pose3DConfig& cfg, RngStream& rng) {
  cfg.validate();
  Pose pose;
  pose.camera_distance = rng.uniform(cfg.min_distance, cfg.max_distance);
  pose.tx = rng.uniform(cfg.min_translation, cfg.max_translation);
  pose.ty = rng.uniform(cfg.min_translation, cfg.max_translation);
  if (cfg.randomize_rotation) {
    real norm2 = 0.0;
    std::array<real, 4> q{};
    do {
      for (real& c : q) c = rng.normal();
      norm2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3];
    } while (norm2 < 1e-12);
    const real inv_norm = 1.0 / std::sqrt(norm2);
    for (real& c : q) c *= inv_norm;
    pose.rotation = q;
  }
  for (real& c : pose.background) c = rng.uniform(cfg.min_background, cfg.max_background);
  pose.validate();
  return pose;
}

PhysicalParams sample_physical(const PhysicalConfig& cfg, RngStream& rng) {
  cfg.validate();
  PhysicalParams p;
  p.additive_light = rng.uniform(cfg.min_additive, cfg.max_additive);
  p.multiplicative_light = rng.uniform(cfg.min_multiplicative, cfg.max_multiplicative);
  for (real& c : p.per_channel_add) c = rng.uniform(cfg.min_channel_add, cfg.max_channel_add);
  for (real& c : p.per_channel_mul) c = rng.uniform(cfg.min_channel_mul, cfg.max_channel_mul);
  p.noise_stdev = rng.uniform(cfg.min_noise_stdev, cfg.max_noise_stdev);
  p.noise_seed = rng.next_u64();
  return p;
}

Shape CoordinateMap::texture_shape() const {
  if (!map) fail("coordinate map has no sparse map");
  return Shape{map->in_h, map->in_w, 3};
}

Shape CoordinateMap::image_shape() const {
  if (!map) fail("coordinate map has no sparse map");
  return Shape{map->out_h, map->out_w, 3};
}

void CoordinateMap::validate() const {
  if (!map) fail("coordinate map has no sparse map");
  map->validate();
  if (background.shape() != image_shape())
    fail("coordinate map background shape " + shape_to_string(background.shape()) +
         " does not match image shape " + shape_to_string(image_shape()));
  for (std::size_t row = 0; row < map->rows(); ++row) {
    real sum = 0.0;
    for (std::uint32_t k = map->row_offsets[row]; k < map->row_offsets[row + 1]; ++k) {
      if (map->weights[k] < 0.0) fail("coordinate map has a negative weight");
      sum += map->weights[k];
    }
    const bool covered = map->row_offsets[row + 1] > map->row_offsets[row];
    if (covered && std::fabs(sum - 1.0) > 1e-9)
      fail("covered pixel weights sum to " + std::to_string(sum) + ", expected 1");
    for (std::size_t c = 0; c < 3; ++c) {
      const real b = background[row * 3 + c];
      if (covered ? b != 0.0 : (b < 0.0 || b > 1.0))
        fail("coordinate map background is inconsistent with coverage");
    }
  }
}

CoordinateMap build_coordinate_map(const Mesh& mesh, const Pose& pose, std::size_t tex_h,
                                   std::size_t tex_w, std::size_t img_h, std::size_t img_w) {
  mesh.validate();
  pose.validate();
  if (tex_h == 0 || tex_w == 0 || img_h == 0 || img_w == 0)
    fail("texture and image dimensions must be positive");

  const real aspect = static_cast<real>(img_w) / static_cast<real>(img_h);
  const real focal = 1.0 / std::tan(kFovY / 2.0);

  std::vector<ProjectedVertex> projected(mesh.vertices.size());
  std::vector<bool> in_front(mesh.vertices.size(), false);
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const std::array<real, 3> world = rotate_vector(pose.rotation, mesh.vertices[i]);
    const real wx = world[0] + pose.tx;
    const real wy = world[1] + pose.ty;
    const real depth = pose.camera_distance - world[2];
    if (depth <= kNearPlane) continue;
    in_front[i] = true;
    const real x_ndc = focal / aspect * (wx / depth);
    const real y_ndc = focal * (wy / depth);
    ProjectedVertex& pv = projected[i];
    pv.sx = (x_ndc + 1.0) / 2.0 * static_cast<real>(img_w);
    pv.sy = (1.0 - y_ndc) / 2.0 * static_cast<real>(img_h);
    pv.inv_w = 1.0 / depth;
    pv.u_over_w = mesh.uvs[i][0] * pv.inv_w;
    pv.v_over_w = mesh.uvs[i][1] * pv.inv_w;
  }

  const std::size_t pixel_count = img_h * img_w;
  std::vector<real> zbuf(pixel_count, std::numeric_limits<real>::infinity());
  std::vector<real> best_u(pixel_count, 0.0), best_v(pixel_count, 0.0);
  std::vector<bool> covered(pixel_count, false);

  for (const auto& face : mesh.faces) {
    // Triangles with any vertex at or behind the near plane are skipped
    // whole; standard poses keep the unit-sphere mesh far in front of it.
    if (!in_front[face[0]] || !in_front[face[1]] || !in_front[face[2]]) continue;
    const ProjectedVertex& a = projected[face[0]];
    const ProjectedVertex& b = projected[face[1]];
    const ProjectedVertex& c = projected[face[2]];
    const real area2 = edge(a.sx, a.sy, b.sx, b.sy, c.sx, c.sy);
    if (std::fabs(area2) < 1e-14) continue;  // degenerate triangle

    const real min_x = std::min({a.sx, b.sx, c.sx});
    const real max_x = std::max({a.sx, b.sx, c.sx});
    const real min_y = std::min({a.sy, b.sy, c.sy});
    const real max_y = std::max({a.sy, b.sy, c.sy});
    if (max_x < 0.0 || max_y < 0.0 || min_x >= static_cast<real>(img_w) ||
        min_y >= static_cast<real>(img_h))
      continue;
    const std::size_t col0 =
        static_cast<std::size_t>(std::max(0.0, std::floor(min_x - 0.5)));
    const std::size_t row0 =
        static_cast<std::size_t>(std::max(0.0, std::floor(min_y - 0.5)));
    const std::size_t col1 = std::min(img_w - 1, static_cast<std::size_t>(std::max(
                                                     0.0, std::ceil(max_x - 0.5))));
    const std::size_t row1 = std::min(img_h - 1, static_cast<std::size_t>(std::max(
                                                     0.0, std::ceil(max_y - 0.5))));

    for (std::size_t row = row0; row <= row1; ++row) {
      const real py = static_cast<real>(row) + 0.5;
      for (std::size_t col = col0; col <= col1; ++col) {
        const real px = static_cast<real>(col) + 0.5;
        const real l0 = edge(b.sx, b.sy, c.sx, c.sy, px, py) / area2;
        const real l1 = edge(c.sx, c.sy, a.sx, a.sy, px, py) / area2;
        const real l2 = edge(a.sx, a.sy, b.sx, b.sy, px, py) / area2;
        if (l0 < 0.0 || l1 < 0.0 || l2 < 0.0) continue;
        const real inv_w = l0 * a.inv_w + l1 * b.inv_w + l2 * c.inv_w;
        if (!(inv_w > 0.0)) continue;
        const real depth = 1.0 / inv_w;
        const std::size_t pix = row * img_w + col;
        if (depth >= zbuf[pix]) continue;  // ties keep the earlier triangle
        zbuf[pix] = depth;
        covered[pix] = true;
        best_u[pix] = (l0 * a.u_over_w + l1 * b.u_over_w + l2 * c.u_over_w) / inv_w;
        best_v[pix] = (l0 * a.v_over_w + l1 * b.v_over_w + l2 * c.v_over_w) / inv_w;
      }
    }
  }

  auto sparse = std::make_shared<diffmath::SparseMap>();
  sparse->out_h = img_h;
  sparse->out_w = img_w;
  sparse->in_h = tex_h;
  sparse->in_w = tex_w;
  sparse->row_offsets.resize(pixel_count + 1, 0);

  Tensor background(Shape{img_h, img_w, 3});
  for (std::size_t pix = 0; pix < pixel_count; ++pix) {
    if (!covered[pix]) {
      for (std::size_t ch = 0; ch < 3; ++ch) background[pix * 3 + ch] = pose.background[ch];
      sparse->row_offsets[pix + 1] = static_cast<std::uint32_t>(sparse->cols.size());
      continue;
    }
    real fx = best_u[pix] * static_cast<real>(tex_w) - 0.5;
    real fy = best_v[pix] * static_cast<real>(tex_h) - 0.5;
    real x0 = std::floor(fx), y0 = std::floor(fy);
    real ax = fx - x0, ay = fy - y0;
    if (ax < kTexelSnap) ax = 0.0;
    if (ax > 1.0 - kTexelSnap) {
      x0 += 1.0;
      ax = 0.0;
    }
    if (ay < kTexelSnap) ay = 0.0;
    if (ay > 1.0 - kTexelSnap) {
      y0 += 1.0;
      ay = 0.0;
    }
    const auto clamp_idx = [](real v, std::size_t n) {
      return static_cast<std::size_t>(
          std::min(std::max(v, 0.0), static_cast<real>(n - 1)));
    };
    std::uint32_t tap_cols[4];
    real tap_weights[4];
    std::size_t tap_count = 0;
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const real weight = (dx ? ax : 1.0 - ax) * (dy ? ay : 1.0 - ay);
        if (weight == 0.0) continue;
        const std::size_t tx = clamp_idx(x0 + static_cast<real>(dx), tex_w);
        const std::size_t ty = clamp_idx(y0 + static_cast<real>(dy), tex_h);
        const auto texel = static_cast<std::uint32_t>(ty * tex_w + tx);
        bool merged = false;  // edge clamping can duplicate a texel
        for (std::size_t k = 0; k < tap_count; ++k)
          if (tap_cols[k] == texel) {
            tap_weights[k] += weight;
            merged = true;
            break;
          }
        if (!merged) {
          tap_cols[tap_count] = texel;
          tap_weights[tap_count] = weight;
          ++tap_count;
        }
      }
    for (std::size_t k = 0; k < tap_count; ++k) {
      sparse->cols.push_back(tap_cols[k]);
      sparse->weights.push_back(tap_weights[k]);
    }
    sparse->row_offsets[pix + 1] = static_cast<std::uint32_t>(sparse->cols.size());
  }

  CoordinateMap map;
  map.map = std::move(sparse);
  map.background = std::move(background);
  return map;
}

Tensor render_texture(const CoordinateMap& map, const Tensor& texture) {
  if (texture.shape() != map.texture_shape())
    fail("texture shape " + shape_to_string(texture.shape()) + " does not match map texture " +
         shape_to_string(map.texture_shape()));
  view::ViewTransform view;
  view.map = map.map;
  view.add = map.background;
  view.clamp_output = false;  // weights are convex; [0,1] inputs stay in [0,1]
  return view.apply(texture);
}

Tensor apply_physical_effects(const Tensor& image, const PhysicalParams& params) {
  const Shape& s = image.shape();
  if (s.size() != 3 || s[2] != 3)
    fail("physical effects expect an [H,W,3] image, got " + shape_to_string(s));
  Tensor out(s);
  RngStream noise(params.noise_seed);
  for (std::size_t i = 0; i < image.size(); ++i) {
    const std::size_t ch = i % 3;
    real v = image[i] * params.multiplicative_light * params.per_channel_mul[ch] +
             params.additive_light + params.per_channel_add[ch];
    if (params.noise_stdev > 0.0) v += noise.normal() * params.noise_stdev;
    out[i] = std::min(1.0, std::max(0.0, v));
  }
  return out;
}

view::ViewTransform compile_view_3d(const CoordinateMap& map, const PhysicalParams& params) {
  map.validate();
  view::ViewTransform view;
  view.map = map.map;
  view.channel_mul = {params.multiplicative_light * params.per_channel_mul[0],
                      params.multiplicative_light * params.per_channel_mul[1],
                      params.multiplicative_light * params.per_channel_mul[2]};
  Tensor add(map.background.shape());
  RngStream noise(params.noise_seed);
  for (std::size_t i = 0; i < add.size(); ++i) {
    const std::size_t ch = i % 3;
    add[i] = map.background[i] * view.channel_mul[ch] + params.additive_light +
             params.per_channel_add[ch];
    if (params.noise_stdev > 0.0) add[i] += noise.normal() * params.noise_stdev;
  }
  view.add = std::move(add);
  view.clamp_output = true;
  return view;
}

Mesh unit_cube_mesh() {
  const real s = 1.0 / std::sqrt(3.0);  // corners land on the unit sphere
  // Four corners per face (consistent traversal), full texture on each face.
  const std::array<std::array<std::array<real, 3>, 4>, 6> corners = {{
      {{{-s, -s, s}, {s, -s, s}, {s, s, s}, {-s, s, s}}},      // +z
      {{{s, -s, -s}, {-s, -s, -s}, {-s, s, -s}, {s, s, -s}}},  // -z
      {{{s, -s, s}, {s, -s, -s}, {s, s, -s}, {s, s, s}}},      // +x
      {{{-s, -s, -s}, {-s, -s, s}, {-s, s, s}, {-s, s, -s}}},  // -x
      {{{-s, s, s}, {s, s, s}, {s, s, -s}, {-s, s, -s}}},      // +y
      {{{-s, -s, -s}, {s, -s, -s}, {s, -s, s}, {-s, -s, s}}},  // -y
  }};
  const std::array<std::array<real, 2>, 4> face_uvs = {{{0, 0}, {1, 0}, {1, 1}, {0, 1}}};
  Mesh mesh;
  for (const auto& face : corners) {
    const std::size_t base = mesh.vertices.size();
    for (std::size_t k = 0; k < 4; ++k) {
      mesh.vertices.push_back(face[k]);
      mesh.uvs.push_back(face_uvs[k]);
    }
    mesh.faces.push_back({base, base + 1, base + 2});
    mesh.faces.push_back({base, base + 2, base + 3});
  }
  mesh.validate();
  return mesh;
}

Mesh fullscreen_quad_mesh(real camera_distance, real aspect) {
  if (!(camera_distance > 0.0) || !(aspect > 0.0))
    fail("fullscreen quad needs positive camera distance and aspect");
  const real half_h = camera_distance * std::tan(kFovY / 2.0);
  const real half_w = half_h * aspect;
  Mesh mesh;
  mesh.vertices = {{-half_w, half_h, 0.0},
                   {half_w, half_h, 0.0},
                   {half_w, -half_h, 0.0},
                   {-half_w, -half_h, 0.0}};
  mesh.uvs = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};  // v runs top to bottom
  mesh.faces = {{0, 1, 2}, {0, 2, 3}};
  mesh.validate();
  return mesh;
}

namespace {

std::size_t resolve_obj_index(const std::string& token, const std::string& part,
                              std::size_t count, std::size_t line_no) {
  long value = 0;
  const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), value);
  if (ec != std::errc() || ptr != part.data() + part.size())
    fail("obj: malformed face vertex '" + token + "' at line " + std::to_string(line_no));
  if (value < 1 || static_cast<std::size_t>(value) > count)
    fail("obj: face index " + std::to_string(value) + " out of range at line " +
         std::to_string(line_no) + " (1-based, " + std::to_string(count) + " available)");
  return static_cast<std::size_t>(value) - 1;
}

}  // namespace

Mesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("obj: cannot open '" + path + "'");

  std::vector<std::array<real, 3>> positions;
  std::vector<std::array<real, 2>> texcoords;
  Mesh mesh;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> unified;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    if (tag == "v") {
      std::array<real, 3> p{};
      if (!(ss >> p[0] >> p[1] >> p[2]))
        fail("obj: malformed vertex at line " + std::to_string(line_no));
      positions.push_back(p);
    } else if (tag == "vt") {
      std::array<real, 2> uv{};
      if (!(ss >> uv[0] >> uv[1]))
        fail("obj: malformed texture coordinate at line " + std::to_string(line_no));
      texcoords.push_back(uv);
    } else if (tag == "f") {
      std::vector<std::size_t> corner_ids;
      std::string token;
      while (ss >> token) {
        const std::size_t slash = token.find('/');
        if (slash == std::string::npos || slash + 1 >= token.size() || token[slash + 1] == '/')
          fail("obj: face vertex '" + token + "' at line " + std::to_string(line_no) +
               " is missing a texture coordinate (expected v/vt)");
        const std::size_t second = token.find('/', slash + 1);
        const std::string vt_part =
            second == std::string::npos ? token.substr(slash + 1)
                                        : token.substr(slash + 1, second - slash - 1);
        const std::size_t vi =
            resolve_obj_index(token, token.substr(0, slash), positions.size(), line_no);
        const std::size_t ti = resolve_obj_index(token, vt_part, texcoords.size(), line_no);
        const auto key = std::make_pair(vi, ti);
        const auto it = unified.find(key);
        if (it != unified.end()) {
          corner_ids.push_back(it->second);
        } else {
          const std::size_t id = mesh.vertices.size();
          mesh.vertices.push_back(positions[vi]);
          mesh.uvs.push_back(texcoords[ti]);
          unified.emplace(key, id);
          corner_ids.push_back(id);
        }
      }
      if (corner_ids.size() < 3)
        fail("obj: face with fewer than 3 vertices at line " + std::to_string(line_no));
      for (std::size_t k = 2; k < corner_ids.size(); ++k)
        mesh.faces.push_back({corner_ids[0], corner_ids[k - 1], corner_ids[k]});
    }
    // All other tags (vn, o, g, s, usemtl, mtllib, ...) are ignored.
  }
  if (mesh.faces.empty()) fail("obj: '" + path + "' contains no faces");

  std::array<real, 3> lo = mesh.vertices[0], hi = mesh.vertices[0];
  for (const auto& v : mesh.vertices)
    for (std::size_t k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], v[k]);
      hi[k] = std::max(hi[k], v[k]);
    }
  const std::array<real, 3> center = {(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0,
                                      (lo[2] + hi[2]) / 2.0};
  real radius = 0.0;
  for (const auto& v : mesh.vertices) {
    const real dx = v[0] - center[0], dy = v[1] - center[1], dz = v[2] - center[2];
    radius = std::max(radius, std::sqrt(dx * dx + dy * dy + dz * dz));
  }
  if (!(radius > 0.0)) fail("obj: '" + path + "' has zero spatial extent");
  for (auto& v : mesh.vertices)
    for (std::size_t k = 0; k < 3; ++k) v[k] = (v[k] - center[k]) / radius;

  mesh.validate();
  return mesh;
}

}  // namespace eot::renderer3d
