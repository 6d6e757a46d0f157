#include "eot/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "eot/errors.hpp"
#include "eot/rng.hpp"

namespace eot::dataset {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("idx: cannot open '" + path + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

std::uint32_t get_u32_be(const std::vector<unsigned char>& buf, std::size_t off,
                         const std::string& path) {
  if (off + 4 > buf.size()) throw Error("idx: truncated file '" + path + "'");
  return (static_cast<std::uint32_t>(buf[off]) << 24) |
         (static_cast<std::uint32_t>(buf[off + 1]) << 16) |
         (static_cast<std::uint32_t>(buf[off + 2]) << 8) | static_cast<std::uint32_t>(buf[off + 3]);
}

void put_u32_be(std::ofstream& out, std::uint32_t v) {
  const unsigned char bytes[4] = {static_cast<unsigned char>(v >> 24),
                                  static_cast<unsigned char>(v >> 16),
                                  static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

struct Stroke {
  real x0, y0, x1, y1;
};

// Segment endpoints in a unit design square (x right, y down); six anchor
// points in a two-cell grid, seven-segment style with a few diagonals.
const std::vector<Stroke>& digit_strokes(int digit) {
  constexpr real L = 0.25, R = 0.75, T = 0.18, M = 0.5, B = 0.82;
  static const std::vector<std::vector<Stroke>> table = {
      /*0*/ {{L, T, R, T}, {R, T, R, B}, {R, B, L, B}, {L, B, L, T}},
      /*1*/ {{0.5, T, 0.5, B}, {0.35, 0.32, 0.5, T}},
      /*2*/ {{L, T, R, T}, {R, T, R, M}, {R, M, L, M}, {L, M, L, B}, {L, B, R, B}},
      /*3*/ {{L, T, R, T}, {R, T, R, M}, {0.45, M, R, M}, {R, M, R, B}, {R, B, L, B}},
      /*4*/ {{L, T, L, M}, {L, M, R, M}, {R, T, R, B}},
      /*5*/ {{R, T, L, T}, {L, T, L, M}, {L, M, R, M}, {R, M, R, B}, {R, B, L, B}},
      /*6*/ {{R, T, L, T}, {L, T, L, B}, {L, B, R, B}, {R, B, R, M}, {R, M, L, M}},
      /*7*/ {{L, T, R, T}, {R, T, 0.4, B}},
      /*8*/ {{L, T, R, T}, {R, T, R, B}, {R, B, L, B}, {L, B, L, T}, {L, M, R, M}},
      /*9*/ {{L, M, L, T}, {L, T, R, T}, {R, T, R, M}, {L, M, R, M}, {R, M, R, B}},
  };
  if (digit < 0 || digit > 9) throw Error("digit generator: class out of range");
  return table[static_cast<std::size_t>(digit)];
}

real segment_distance(real px, real py, const Stroke& s) {
  const real vx = s.x1 - s.x0, vy = s.y1 - s.y0;
  const real wx = px - s.x0, wy = py - s.y0;
  const real len2 = vx * vx + vy * vy;
  real t = len2 > 0.0 ? (wx * vx + wy * vy) / len2 : 0.0;
  t = std::min(1.0, std::max(0.0, t));
  const real dx = wx - t * vx, dy = wy - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

Shape LabeledDataset::image_shape() const {
  if (images.rank() != 4) throw Error("dataset: images must be [N,H,W,C]");
  return Shape{images.dim(1), images.dim(2), images.dim(3)};
}

Tensor LabeledDataset::image(std::size_t index) const {
  if (index >= size()) {
    throw Error("dataset: index " + std::to_string(index) + " out of range for " +
                std::to_string(size()) + " samples");
  }
  const Shape shape = image_shape();
  const std::size_t stride = numel(shape);
  return Tensor(shape,
                std::vector<real>(images.data() + index * stride,
                                  images.data() + (index + 1) * stride));
}

void LabeledDataset::validate() const {
  if (images.rank() != 4) throw Error("dataset: images must be [N,H,W,C]");
  if (images.dim(0) != labels.size()) {
    throw Error("dataset: count mismatch: " + std::to_string(images.dim(0)) + " images vs " +
                std::to_string(labels.size()) + " labels");
  }
  if (class_count == 0) throw Error("dataset: class_count must be positive");
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= class_count) {
      throw Error("dataset: label " + std::to_string(label) + " outside [0," +
                  std::to_string(class_count) + ")");
    }
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i] < 0.0 || images[i] > 1.0) {
      throw Error("dataset: pixel value " + std::to_string(images[i]) + " outside [0,1]");
    }
  }
}

LabeledDataset ingest_idx(const std::string& images_path, const std::string& labels_path) {
  const auto ibuf = read_file(images_path);
  const std::uint32_t imagic = get_u32_be(ibuf, 0, images_path);
  if (imagic != kImageMagic) {
    throw Error("idx: bad magic in '" + images_path + "' (expected image magic 0x00000803)");
  }
  const std::uint32_t n = get_u32_be(ibuf, 4, images_path);
  const std::uint32_t h = get_u32_be(ibuf, 8, images_path);
  const std::uint32_t w = get_u32_be(ibuf, 12, images_path);
  const std::size_t expected = 16 + static_cast<std::size_t>(n) * h * w;
  if (ibuf.size() < expected) throw Error("idx: truncated file '" + images_path + "'");

  const auto lbuf = read_file(labels_path);
  const std::uint32_t lmagic = get_u32_be(lbuf, 0, labels_path);
  if (lmagic != kLabelMagic) {
    throw Error("idx: bad magic in '" + labels_path + "' (expected label magic 0x00000801)");
  }
  const std::uint32_t ln = get_u32_be(lbuf, 4, labels_path);
  if (lbuf.size() < 8 + static_cast<std::size_t>(ln)) {
    throw Error("idx: truncated file '" + labels_path + "'");
  }
  if (ln != n) {
    throw Error("idx: count mismatch: " + std::to_string(n) + " images vs " + std::to_string(ln) +
                " labels");
  }

  LabeledDataset out;
  out.images = Tensor(Shape{n, h, w, 1});
  for (std::size_t i = 0; i < static_cast<std::size_t>(n) * h * w; ++i) {
    out.images[i] = static_cast<real>(ibuf[16 + i]) / 255.0;
  }
  out.labels.resize(n);
  int max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    out.labels[i] = static_cast<int>(lbuf[8 + i]);
    max_label = std::max(max_label, out.labels[i]);
  }
  out.class_count = static_cast<std::size_t>(max_label) + 1;
  out.validate();
  return out;
}

void write_idx(const LabeledDataset& data, const std::string& images_path,
               const std::string& labels_path) {
  data.validate();
  if (data.images.dim(3) != 1) {
    throw Error("idx: only single-channel datasets can be written, got " +
                std::to_string(data.images.dim(3)) + " channels");
  }
  std::ofstream imgs(images_path, std::ios::binary);
  if (!imgs) throw Error("idx: cannot write '" + images_path + "'");
  put_u32_be(imgs, kImageMagic);
  put_u32_be(imgs, static_cast<std::uint32_t>(data.images.dim(0)));
  put_u32_be(imgs, static_cast<std::uint32_t>(data.images.dim(1)));
  put_u32_be(imgs, static_cast<std::uint32_t>(data.images.dim(2)));
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    const auto byte = static_cast<unsigned char>(std::lround(data.images[i] * 255.0));
    imgs.write(reinterpret_cast<const char*>(&byte), 1);
  }
  if (!imgs) throw Error("idx: write failed for '" + images_path + "'");

  std::ofstream labels(labels_path, std::ios::binary);
  if (!labels) throw Error("idx: cannot write '" + labels_path + "'");
  put_u32_be(labels, kLabelMagic);
  put_u32_be(labels, static_cast<std::uint32_t>(data.labels.size()));
  for (int label : data.labels) {
    const auto byte = static_cast<unsigned char>(label);
    labels.write(reinterpret_cast<const char*>(&byte), 1);
  }
  if (!labels) throw Error("idx: write failed for '" + labels_path + "'");
}

LabeledDataset make_digit_dataset(std::size_t per_class, std::uint64_t seed) {
  if (per_class == 0) throw Error("digit generator: per_class must be positive");
  constexpr std::size_t kSize = 28;
  const RngStream root(seed);
  LabeledDataset out;
  out.class_count = 10;
  out.images = Tensor(Shape{per_class * 10, kSize, kSize, 1});
  out.labels.resize(per_class * 10);

  std::size_t sample = 0;
  for (int digit = 0; digit < 10; ++digit) {
    for (std::size_t k = 0; k < per_class; ++k, ++sample) {
      RngStream rng = root.fork(static_cast<std::uint64_t>(digit) * 1000003u + k);
      const real rot = rng.uniform(-0.09, 0.09);
      const real scale = rng.uniform(0.85, 1.05);
      const real shear = rng.uniform(-0.12, 0.12);
      const real tx = rng.uniform(-0.05, 0.05);
      const real ty = rng.uniform(-0.05, 0.05);
      const real thickness = rng.uniform(0.045, 0.075);
      const real ink = rng.uniform(0.75, 1.0);
      const real cosr = std::cos(rot), sinr = std::sin(rot);

      // Forward-transform the stroke endpoints once (rotate, shear, scale
      // about the design center, then translate).
      std::vector<Stroke> strokes = digit_strokes(digit);
      for (Stroke& s : strokes) {
        auto warp = [&](real& x, real& y) {
          const real cx = x - 0.5, cy = y - 0.5;
          const real hx = cx + shear * cy, hy = cy;
          const real rx = cosr * hx - sinr * hy, ry = sinr * hx + cosr * hy;
          x = scale * rx + 0.5 + tx;
          y = scale * ry + 0.5 + ty;
        };
        warp(s.x0, s.y0);
        warp(s.x1, s.y1);
      }

      real* img = out.images.data() + sample * kSize * kSize;
      for (std::size_t r = 0; r < kSize; ++r) {
        for (std::size_t c = 0; c < kSize; ++c) {
          const real px = (static_cast<real>(c) + 0.5) / kSize;
          const real py = (static_cast<real>(r) + 0.5) / kSize;
          real dist = 1e9;
          for (const Stroke& s : strokes) dist = std::min(dist, segment_distance(px, py, s));
          const real coverage = std::min(1.0, std::max(0.0, (thickness - dist) / 0.03 + 0.5));
          real v = ink * coverage + 0.02 * rng.normal();
          img[r * kSize + c] = std::min(1.0, std::max(0.0, v));
        }
      }
      out.labels[sample] = digit;
    }
  }
  out.validate();
  return out;
}

LabeledDataset make_blob_dataset(std::size_t per_class, std::uint64_t seed) {
  if (per_class == 0) throw Error("blob generator: per_class must be positive");
  constexpr std::size_t kSize = 6;
  const RngStream root(seed);
  LabeledDataset out;
  out.class_count = 2;
  out.images = Tensor(Shape{per_class * 2, kSize, kSize, 1});
  out.labels.resize(per_class * 2);
  std::size_t sample = 0;
  for (int cls = 0; cls < 2; ++cls) {
    for (std::size_t k = 0; k < per_class; ++k, ++sample) {
      RngStream rng = root.fork(static_cast<std::uint64_t>(cls) * 1000003u + k);
      real* img = out.images.data() + sample * kSize * kSize;
      for (std::size_t r = 0; r < kSize; ++r) {
        for (std::size_t c = 0; c < kSize; ++c) {
          const bool bright = cls == 0 ? c < kSize / 2 : c >= kSize / 2;
          const real base = bright ? 0.75 : 0.25;
          img[r * kSize + c] = std::min(1.0, std::max(0.0, base + 0.08 * rng.normal()));
        }
      }
      out.labels[sample] = cls;
    }
  }
  out.validate();
  return out;
}

LabeledDataset make_color_shape_dataset(std::size_t per_class, std::uint64_t seed) {
  if (per_class == 0) throw Error("color-shape generator: per_class must be positive");
  constexpr std::size_t kSize = 32;
  constexpr real kBase[3][3] = {
      {0.85, 0.18, 0.18}, {0.18, 0.80, 0.22}, {0.20, 0.25, 0.85}};
  const RngStream root(seed);
  LabeledDataset out;
  out.class_count = 3;
  out.images = Tensor(Shape{per_class * 3, kSize, kSize, 3});
  out.labels.resize(per_class * 3);
  std::size_t sample = 0;
  for (int cls = 0; cls < 3; ++cls) {
    for (std::size_t k = 0; k < per_class; ++k, ++sample) {
      RngStream rng = root.fork(static_cast<std::uint64_t>(cls) * 1000003u + k);
      std::array<real, 3> bg{}, fg{};
      for (real& v : bg) v = rng.uniform(0.1, 1.0);
      for (int c = 0; c < 3; ++c) {
        fg[static_cast<std::size_t>(c)] =
            std::min(1.0, std::max(0.0, kBase[cls][c] + rng.uniform(-0.12, 0.12)));
      }
      const real cx = 16.0 + rng.uniform(-2.5, 2.5);
      const real cy = 16.0 + rng.uniform(-2.5, 2.5);
      const real radius = rng.uniform(9.0, 11.0);

      real* img = out.images.data() + sample * kSize * kSize * 3;
      for (std::size_t row = 0; row < kSize; ++row) {
        for (std::size_t col = 0; col < kSize; ++col) {
          const real px = static_cast<real>(col) + 0.5 - cx;
          const real py = static_cast<real>(row) + 0.5 - cy;
          bool inside = false;
          if (cls == 0) {
            inside = px * px + py * py <= radius * radius;
          } else if (cls == 1) {
            // 0.9 shrink keeps the square's area close to the disk's.
            inside = std::abs(px) <= 0.9 * radius && std::abs(py) <= 0.9 * radius;
          } else {
            // Upward triangle: apex at cy - radius, base halfwidth radius.
            inside = py >= -radius && py <= radius && std::abs(px) <= (py + radius) / 2.0;
          }
          for (std::size_t c = 0; c < 3; ++c) {
            const real base = inside ? fg[c] : bg[c];
            img[(row * kSize + col) * 3 + c] =
                std::min(1.0, std::max(0.0, base + 0.02 * rng.normal()));
          }
        }
      }
      out.labels[sample] = cls;
    }
  }
  out.validate();
  return out;
}

LabeledDataset transform_to_canvas(const LabeledDataset& source,
                                   const transforms2d::Dist2DConfig& cfg, std::size_t canvas_h,
                                   std::size_t canvas_w, std::size_t copies, std::uint64_t seed) {
  source.validate();
  if (copies == 0) throw Error("transform_to_canvas: copies must be positive");
  const Shape in_shape = source.image_shape();
  const RngStream root(seed);
  LabeledDataset out;
  out.class_count = source.class_count;
  out.images = Tensor(Shape{source.size() * copies, canvas_h, canvas_w, in_shape[2]});
  out.labels.resize(source.size() * copies);
  const std::size_t stride = canvas_h * canvas_w * in_shape[2];
  std::size_t sample = 0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const Tensor img = source.image(i);
    for (std::size_t k = 0; k < copies; ++k, ++sample) {
      RngStream rng = root.fork(i * 1000003u + k);
      const auto params = transforms2d::sample_params_2d(cfg, rng, in_shape, canvas_h, canvas_w);
      const Tensor canvas = transforms2d::apply_transform_2d(img, params, canvas_h, canvas_w);
      std::copy(canvas.data(), canvas.data() + stride, out.images.data() + sample * stride);
      out.labels[sample] = source.labels[i];
    }
  }
  out.validate();
  return out;
}

}  // namespace eot::dataset
