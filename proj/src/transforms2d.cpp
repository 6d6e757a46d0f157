#include "eot/transforms2d.hpp"

#include <cmath>
#include <memory>

#include "eot/color.hpp"
#include "eot/errors.hpp"

namespace eot::transforms2d {

namespace {

constexpr real kPi = 3.14159265358979323846;

void require_image(const Shape& shape, const char* who) {
  if (shape.size() != 3 || shape[0] == 0 || shape[1] == 0 || shape[2] == 0) {
    throw Error(std::string(who) + ": image must be [H,W,C], got " + shape_to_string(shape));
  }
}

// Half-extent of the scaled, rotated image rectangle along canvas axes.
void rotated_half_extent(const Shape& image_shape, real scale, real rotation, real* bw, real* bh) {
  const real hw = (static_cast<real>(image_shape[1]) - 1.0) / 2.0;
  const real hh = (static_cast<real>(image_shape[0]) - 1.0) / 2.0;
  const real c = std::abs(std::cos(rotation)), s = std::abs(std::sin(rotation));
  *bw = scale * (hw * c + hh * s);
  *bh = scale * (hw * s + hh * c);
}

}  // namespace

void Dist2DConfig::validate() const {
  auto ordered = [](real lo, real hi, const char* what) {
    if (!(lo <= hi)) {
      throw Error(std::string("transform config: ") + what + " range has min " +
                  std::to_string(lo) + " > max " + std::to_string(hi));
    }
  };
  ordered(scale_min, scale_max, "scale");
  ordered(rotation_min_deg, rotation_max_deg, "rotation");
  ordered(brightness_min, brightness_max, "brightness");
  ordered(noise_stdev_min, noise_stdev_max, "noise stdev");
  if (!translation_any_in_bounds) ordered(translation_min_px, translation_max_px, "translation");
  if (noise_stdev_min < 0.0) throw Error("transform config: noise stdev must be >= 0");
  if (scale_min <= 0.0) throw Error("transform config: scale must be positive");
}

TransformParams2D sample_params_2d(const Dist2DConfig& cfg, RngStream& rng,
                                   const Shape& image_shape, std::size_t canvas_h,
                                   std::size_t canvas_w) {
  cfg.validate();
  require_image(image_shape, "sample_params_2d");
  TransformParams2D p;
  p.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  p.rotation = rng.uniform(cfg.rotation_min_deg, cfg.rotation_max_deg) * kPi / 180.0;
  p.brightness = rng.uniform(cfg.brightness_min, cfg.brightness_max);
  p.noise_stdev = rng.uniform(cfg.noise_stdev_min, cfg.noise_stdev_max);
  if (cfg.translation_any_in_bounds) {
    real bw, bh;
    rotated_half_extent(image_shape, p.scale, p.rotation, &bw, &bh);
    // Feasible offsets keep the whole warped rectangle inside the canvas;
    // when the rectangle does not fit at all the range collapses to zero
    // translation (centered) and the overhang is clipped to background.
    const real mx = std::max(0.0, (static_cast<real>(canvas_w) - 1.0) / 2.0 - bw);
    const real my = std::max(0.0, (static_cast<real>(canvas_h) - 1.0) / 2.0 - bh);
    p.dx = rng.uniform(-mx, mx);
    p.dy = rng.uniform(-my, my);
  } else {
    p.dx = rng.uniform(cfg.translation_min_px, cfg.translation_max_px);
    p.dy = rng.uniform(cfg.translation_min_px, cfg.translation_max_px);
  }
  p.noise_seed = rng.next_u64();
  return p;
}

view::ViewTransform compile_transform_2d(const TransformParams2D& p, const Shape& image_shape,
                                         std::size_t canvas_h, std::size_t canvas_w) {
  require_image(image_shape, "compile_transform_2d");
  if (!(p.scale > 0.0)) throw Error("compile_transform_2d: scale must be positive");
  if (p.noise_stdev < 0.0) throw Error("compile_transform_2d: noise stdev must be >= 0");
  const std::size_t in_h = image_shape[0], in_w = image_shape[1], channels = image_shape[2];

  auto map = std::make_shared<diffmath::SparseMap>();
  map->out_h = canvas_h;
  map->out_w = canvas_w;
  map->in_h = in_h;
  map->in_w = in_w;
  map->row_offsets.reserve(canvas_h * canvas_w + 1);
  map->row_offsets.push_back(0);

  Tensor add = Tensor::full({canvas_h, canvas_w, channels}, 0.0);

  const real cx_out = (static_cast<real>(canvas_w) - 1.0) / 2.0;
  const real cy_out = (static_cast<real>(canvas_h) - 1.0) / 2.0;
  const real cx_in = (static_cast<real>(in_w) - 1.0) / 2.0;
  const real cy_in = (static_cast<real>(in_h) - 1.0) / 2.0;
  const real cosr = std::cos(p.rotation), sinr = std::sin(p.rotation);

  for (std::size_t r = 0; r < canvas_h; ++r) {
    for (std::size_t c = 0; c < canvas_w; ++c) {
      // Inverse mapping: canvas pixel -> source image coordinates
      // (undo translation, then rotation, then scale).
      const real u = static_cast<real>(c) - cx_out - p.dx;
      const real v = static_cast<real>(r) - cy_out - p.dy;
      const real sx = (cosr * u + sinr * v) / p.scale;
      const real sy = (-sinr * u + cosr * v) / p.scale;
      const real px = sx + cx_in;
      const real py = sy + cy_in;

      const real fj = std::floor(px), fi = std::floor(py);
      real ax = px - fj, ay = py - fi;
      long j0 = static_cast<long>(fj), i0 = static_cast<long>(fi);
      // Snap sampling positions within 1e-12 of a texel center onto it, so
      // axis-aligned warps (integer shifts, multiples of 90 degrees) are
      // exact single-tap permutations despite trig roundoff.
      if (ax < 1e-12) {
        ax = 0.0;
      } else if (ax > 1.0 - 1e-12) {
        ax = 0.0;
        ++j0;
      }
      if (ay < 1e-12) {
        ay = 0.0;
      } else if (ay > 1.0 - 1e-12) {
        ay = 0.0;
        ++i0;
      }
      const real tap[4] = {(1.0 - ay) * (1.0 - ax), (1.0 - ay) * ax, ay * (1.0 - ax), ay * ax};
      const long ti[4] = {i0, i0, i0 + 1, i0 + 1};
      const long tj[4] = {j0, j0 + 1, j0, j0 + 1};

      real covered = 0.0;
      for (int k = 0; k < 4; ++k) {
        if (tap[k] == 0.0) continue;  // keeps integer-aligned warps exact
        if (ti[k] < 0 || ti[k] >= static_cast<long>(in_h) || tj[k] < 0 ||
            tj[k] >= static_cast<long>(in_w)) {
          continue;
        }
        map->cols.push_back(static_cast<std::uint32_t>(ti[k] * static_cast<long>(in_w) + tj[k]));
        map->weights.push_back(tap[k]);
        covered += tap[k];
      }
      map->row_offsets.push_back(static_cast<std::uint32_t>(map->cols.size()));

      const real bg = kBackground * (1.0 - covered);
      real* arow = add.data() + (r * canvas_w + c) * channels;
      for (std::size_t ch = 0; ch < channels; ++ch) arow[ch] = bg;
    }
  }

  // Photometrics: brightness shift plus a frozen per-element Gaussian noise
  // field; both are constants with respect to the image.
  if (p.brightness != 0.0) {
    for (std::size_t i = 0; i < add.size(); ++i) add[i] += p.brightness;
  }
  if (p.noise_stdev > 0.0) {
    RngStream noise(p.noise_seed);
    for (std::size_t i = 0; i < add.size(); ++i) add[i] += p.noise_stdev * noise.normal();
  }

  view::ViewTransform t;
  t.map = std::move(map);
  t.add = std::move(add);
  t.clamp_output = true;
  return t;
}

Tensor apply_transform_2d(const Tensor& image, const TransformParams2D& p, std::size_t canvas_h,
                          std::size_t canvas_w) {
  require_image(image.shape(), "apply_transform_2d");
  const real need_w = std::ceil(static_cast<real>(image.dim(1)) * p.scale);
  const real need_h = std::ceil(static_cast<real>(image.dim(0)) * p.scale);
  if (static_cast<real>(canvas_w) < need_w || static_cast<real>(canvas_h) < need_h) {
    throw Error("apply_transform_2d: canvas " + std::to_string(canvas_h) + "x" +
                std::to_string(canvas_w) + " is too small for the image scaled by " +
                std::to_string(p.scale));
  }
  return compile_transform_2d(p, image.shape(), canvas_h, canvas_w).apply(image);
}

Tensor rgb_to_lab_image(const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw Error("rgb_to_lab: image must be [H,W,3], got " + shape_to_string(image.shape()));
  }
  Tensor out(image.shape());
  for (std::size_t i = 0; i < image.size(); i += 3) {
    color::rgb_to_lab(image.data() + i, out.data() + i);
  }
  return out;
}

real lab_distance(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error("lab_distance: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                shape_to_string(b.shape()));
  }
  const Tensor la = rgb_to_lab_image(a);
  const Tensor lb = rgb_to_lab_image(b);
  real acc = 0.0;
  for (std::size_t i = 0; i < la.size(); ++i) {
    const real d = la[i] - lb[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

real lab_distance_per_pixel(const Tensor& a, const Tensor& b) {
  return lab_distance(a, b) / static_cast<real>(a.dim(0) * a.dim(1));
}

real image_distance(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error("image_distance: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                shape_to_string(b.shape()));
  }
  if (a.rank() == 3 && a.dim(2) == 3) return lab_distance(a, b);
  real acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const real d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

real expected_lab_distance(const Tensor& x_adv, const Tensor& x,
                           const std::vector<TransformParams2D>& params, std::size_t canvas_h,
                           std::size_t canvas_w) {
  if (params.empty()) throw Error("expected_lab_distance: params list is empty");
  if (x_adv.shape() != x.shape()) {
    throw Error("expected_lab_distance: shape mismatch " + shape_to_string(x_adv.shape()) +
                " vs " + shape_to_string(x.shape()));
  }
  real acc = 0.0;
  for (const TransformParams2D& p : params) {
    const view::ViewTransform t = compile_transform_2d(p, x.shape(), canvas_h, canvas_w);
    acc += image_distance(t.apply(x_adv), t.apply(x));
  }
  return acc / static_cast<real>(params.size());
}

}  // namespace eot::transforms2d
