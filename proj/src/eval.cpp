#include "eot/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "eot/errors.hpp"
#include "eot/image_io.hpp"
#include "eot/textfmt.hpp"

namespace eot::eval {

namespace {

std::size_t argmax_lowest(const real* row, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

void check_sample_count(std::size_t n) {
  if (n == 0) throw Error("eval: sample count must be at least 1");
}

void check_class(const classifier::Model& model, std::size_t y, const char* what) {
  if (y >= model.arch.class_count) {
    throw Error(std::string("eval: ") + what + " " + std::to_string(y) +
                " is out of range for a " + std::to_string(model.arch.class_count) +
                "-class model");
  }
}

std::vector<view::ViewTransform> draw_views(const TransformSampler& sampler, std::size_t n,
                                            RngStream& stream, const Shape& model_input) {
  if (!sampler) throw Error("eval: transform sampler must be callable");
  std::vector<view::ViewTransform> views;
  views.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    view::ViewTransform view = sampler(stream);
    if (view.out_shape() != model_input) {
      throw Error("eval: sampled view produces shape " + shape_to_string(view.out_shape()) +
                  " but the model takes " + shape_to_string(model_input));
    }
    views.push_back(std::move(view));
  }
  return views;
}

// Classifies the image under every view with a single batched forward pass
// (the same evaluation path the attack's held-out statistic uses, so the two
// agree bit for bit on identical views).
std::vector<std::size_t> predict_under_views(const classifier::Model& model, const Tensor& image,
                                             const std::vector<view::ViewTransform>& views) {
  const Shape& in = model.arch.input_shape;
  const std::size_t n = views.size();
  Shape batch_shape{n};
  batch_shape.insert(batch_shape.end(), in.begin(), in.end());
  Tensor batch(batch_shape);
  const std::size_t stride = numel(in);
  for (std::size_t k = 0; k < n; ++k) {
    const Tensor warped = views[k].apply(image);
    std::memcpy(batch.data() + k * stride, warped.data(), stride * sizeof(real));
  }
  const Tensor logp = model.log_probs_batch(batch);
  const std::size_t classes = model.arch.class_count;
  std::vector<std::size_t> preds(n);
  for (std::size_t k = 0; k < n; ++k) {
    preds[k] = argmax_lowest(logp.data() + k * classes, classes);
  }
  return preds;
}

void check_true_classes(const classifier::Model& model, const std::set<std::size_t>& classes) {
  if (classes.empty()) throw Error("eval: the set of true classes must be nonempty");
  for (const std::size_t c : classes) check_class(model, c, "true class");
}

void check_csv_id(const std::string& id) {
  if (id.empty()) throw Error("eval: example ids must be nonempty");
  if (id.find_first_of(",\"\n\r") != std::string::npos) {
    throw Error("eval: example id '" + id + "' must not contain commas, quotes, or line breaks");
  }
}

using textfmt::format_real;

void check_rate(real v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw Error(std::string("eval report: ") + what + " must lie in [0,1], got " +
                format_real(v));
  }
}

// Aggregate rates over the n sampled views of one image.
ExampleRow make_row(std::string id, real lambda, const std::vector<std::size_t>& preds,
                    const std::set<std::size_t>& true_classes, std::size_t target,
                    std::size_t class_count, real l2_per_pixel) {
  const auto n = static_cast<real>(preds.size());
  ExampleRow row;
  row.example_id = std::move(id);
  row.lambda = lambda;
  row.l2_per_pixel = l2_per_pixel;
  std::vector<std::size_t> counts(class_count, 0);
  std::size_t accurate = 0;
  std::size_t adversarial = 0;
  for (const std::size_t p : preds) {
    ++counts[p];
    if (true_classes.count(p) != 0) ++accurate;
    if (p == target) ++adversarial;
  }
  row.accuracy = static_cast<real>(accurate) / n;
  row.adversariality = static_cast<real>(adversarial) / n;
  std::vector<std::size_t> order;
  for (std::size_t c = 0; c < class_count; ++c) {
    if (counts[c] != 0) order.push_back(c);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return counts[a] > counts[b];  // ties keep ascending class order
  });
  if (order.size() > 5) order.resize(5);
  for (const std::size_t c : order) {
    row.top_classes.emplace_back(c, static_cast<real>(counts[c]) / n);
  }
  return row;
}

// --- montage -----------------------------------------------------------

constexpr std::size_t kGlyphW = 5, kGlyphH = 7, kGlyphAdvance = 6;
constexpr std::size_t kPad = 2, kLabelH = kGlyphH + 2;
constexpr real kBorderGray = 0.25;

// 5x7 bitmap glyphs, one byte per row, bit 4 leftmost. Labels only ever use
// digits, ':' and '%'.
const unsigned char* glyph_rows(char c) {
  static const unsigned char kDigits[10][7] = {
      {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},  // 0
      {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},  // 1
      {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},  // 2
      {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},  // 3
      {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},  // 4
      {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},  // 5
      {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},  // 6
      {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
      {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},  // 8
      {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},  // 9
  };
  static const unsigned char kColon[7] = {0x00, 0x04, 0x00, 0x00, 0x00, 0x04, 0x00};
  static const unsigned char kPercent[7] = {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03};
  if (c >= '0' && c <= '9') return kDigits[c - '0'];
  if (c == ':') return kColon;
  if (c == '%') return kPercent;
  return nullptr;  // anything else renders as a space
}

void set_pixel(Tensor& canvas, std::size_t y, std::size_t x, real value) {
  const std::size_t w = canvas.shape()[1];
  const std::size_t c = canvas.shape()[2];
  real* px = canvas.data() + (y * w + x) * c;
  for (std::size_t k = 0; k < c; ++k) px[k] = value;
}

// Draws text clipped to the canvas; tiles narrower than the label simply
// truncate it.
void draw_text(Tensor& canvas, const std::string& text, std::size_t x0, std::size_t y0) {
  const std::size_t h = canvas.shape()[0];
  const std::size_t w = canvas.shape()[1];
  std::size_t x = x0;
  for (const char c : text) {
    const unsigned char* rows = glyph_rows(c);
    if (rows != nullptr) {
      for (std::size_t gy = 0; gy < kGlyphH; ++gy) {
        for (std::size_t gx = 0; gx < kGlyphW; ++gx) {
          if ((rows[gy] >> (kGlyphW - 1 - gx)) & 1u) {
            const std::size_t py = y0 + gy;
            const std::size_t px = x + gx;
            if (py < h && px < w) set_pixel(canvas, py, px, 1.0);
          }
        }
      }
    }
    x += kGlyphAdvance;
  }
}

}  // namespace

TransformSampler make_sampler_2d(const transforms2d::Dist2DConfig& dist, Shape image_shape,
                                 std::size_t canvas_h, std::size_t canvas_w) {
  dist.validate();
  if (image_shape.size() != 3) {
    throw Error("eval: 2D sampler needs an [H,W,C] image shape, got " +
                shape_to_string(image_shape));
  }
  return [dist, image_shape = std::move(image_shape), canvas_h, canvas_w](RngStream& rng) {
    const transforms2d::TransformParams2D params =
        transforms2d::sample_params_2d(dist, rng, image_shape, canvas_h, canvas_w);
    return transforms2d::compile_transform_2d(params, image_shape, canvas_h, canvas_w);
  };
}

TransformSampler make_sampler_3d(renderer3d::Mesh mesh, renderer3d::Pose3DConfig pose_dist,
                                 std::optional<renderer3d::PhysicalConfig> physical_dist,
                                 std::size_t tex_h, std::size_t tex_w, std::size_t img_h,
                                 std::size_t img_w) {
  mesh.validate();
  pose_dist.validate();
  if (physical_dist) physical_dist->validate();
  if (tex_h == 0 || tex_w == 0 || img_h == 0 || img_w == 0) {
    throw Error("eval: 3D sampler texture and image dimensions must be nonzero");
  }
  return [mesh = std::move(mesh), pose_dist, physical_dist, tex_h, tex_w, img_h,
          img_w](RngStream& rng) {
    const renderer3d::Pose pose = renderer3d::sample_pose(pose_dist, rng);
    renderer3d::PhysicalParams physical;
    if (physical_dist) physical = renderer3d::sample_physical(*physical_dist, rng);
    const renderer3d::CoordinateMap map =
        renderer3d::build_coordinate_map(mesh, pose, tex_h, tex_w, img_h, img_w);
    return renderer3d::compile_view_3d(map, physical);
  };
}

int classify_indicator(const classifier::Model& model, const Tensor& image, std::size_t y) {
  check_class(model, y, "class");
  const Tensor logp = model.log_probs(image);
  return argmax_lowest(logp.data(), model.arch.class_count) == y ? 1 : 0;
}

real adversariality(const classifier::Model& model, const Tensor& x_prime, std::size_t y_adv,
                    const TransformSampler& sampler, std::size_t n, RngStream stream) {
  check_sample_count(n);
  check_class(model, y_adv, "target class");
  const std::vector<view::ViewTransform> views =
      draw_views(sampler, n, stream, model.arch.input_shape);
  const std::vector<std::size_t> preds = predict_under_views(model, x_prime, views);
  std::size_t hits = 0;
  for (const std::size_t p : preds) {
    if (p == y_adv) ++hits;
  }
  return static_cast<real>(hits) / static_cast<real>(n);
}

real classification_accuracy(const classifier::Model& model, const Tensor& x,
                             const std::set<std::size_t>& true_classes,
                             const TransformSampler& sampler, std::size_t n, RngStream stream) {
  check_sample_count(n);
  check_true_classes(model, true_classes);
  const std::vector<view::ViewTransform> views =
      draw_views(sampler, n, stream, model.arch.input_shape);
  const std::vector<std::size_t> preds = predict_under_views(model, x, views);
  std::size_t hits = 0;
  for (const std::size_t p : preds) {
    if (true_classes.count(p) != 0) ++hits;
  }
  return static_cast<real>(hits) / static_cast<real>(n);
}

void EvalReport::validate() const {
  if (n_samples == 0) throw Error("eval report: n_samples must be at least 1");
  if (rows.empty()) throw Error("eval report: row list must be nonempty");
  if (rows.size() % 2 != 0) {
    throw Error("eval report: rows must come in original/adversarial pairs");
  }
  for (const ExampleRow& row : rows) {
    check_csv_id(row.example_id);
    if (!(std::isfinite(row.lambda) && row.lambda >= 0.0)) {
      throw Error("eval report: lambda must be finite and >= 0");
    }
    check_rate(row.accuracy, "accuracy");
    check_rate(row.adversariality, "adversariality");
    if (!(std::isfinite(row.l2_per_pixel) && row.l2_per_pixel >= 0.0)) {
      throw Error("eval report: l2_per_pixel must be finite and >= 0");
    }
    if (row.top_classes.size() > 5) {
      throw Error("eval report: top_classes holds at most 5 entries");
    }
    for (const auto& [cls, freq] : row.top_classes) {
      (void)cls;
      if (!(freq > 0.0 && freq <= 1.0)) {
        throw Error("eval report: top-class frequencies must lie in (0,1]");
      }
    }
  }
  check_rate(accuracy_mean, "accuracy_mean");
  check_rate(adversariality_mean, "adversariality_mean");
  check_rate(accuracy_stdev, "accuracy_stdev");
  check_rate(adversariality_stdev, "adversariality_stdev");
  if (!(std::isfinite(mean_l2_per_pixel) && mean_l2_per_pixel >= 0.0)) {
    throw Error("eval report: mean_l2_per_pixel must be finite and >= 0");
  }
  std::size_t total = 0;
  for (const std::size_t b : histogram) total += b;
  if (total != rows.size() / 2) {
    throw Error("eval report: histogram counts must cover every adversarial row");
  }
}

namespace {

void check_example(const classifier::Model& model, const EvalExample& e) {
  check_csv_id(e.id);
  if (e.original.shape() != e.adversarial.shape()) {
    throw Error("eval: example '" + e.id + "' original shape " +
                shape_to_string(e.original.shape()) + " does not match adversarial shape " +
                shape_to_string(e.adversarial.shape()));
  }
  check_true_classes(model, e.true_classes);
  check_class(model, e.target, "target class");
  if (!(std::isfinite(e.lambda) && e.lambda >= 0.0)) {
    throw Error("eval: example '" + e.id + "' lambda must be finite and >= 0");
  }
}

// Appends the original/adversarial row pair of one example, both measured
// over the same n views drawn from the stream (paired comparison).
void append_example_rows(EvalReport& report, const EvalExample& e, const classifier::Model& model,
                         const TransformSampler& sampler, std::size_t n, RngStream& stream) {
  const std::vector<view::ViewTransform> views =
      draw_views(sampler, n, stream, model.arch.input_shape);
  const std::vector<std::size_t> preds_orig = predict_under_views(model, e.original, views);
  const std::vector<std::size_t> preds_adv = predict_under_views(model, e.adversarial, views);
  const std::size_t pixels = e.original.shape()[0] * e.original.shape()[1];
  const real l2 =
      transforms2d::image_distance(e.adversarial, e.original) / static_cast<real>(pixels);
  const std::size_t classes = model.arch.class_count;
  report.rows.push_back(make_row(e.id + "-original", e.lambda, preds_orig, e.true_classes,
                                 e.target, classes, 0.0));
  report.rows.push_back(make_row(e.id + "-adversarial", e.lambda, preds_adv, e.true_classes,
                                 e.target, classes, l2));
}

// Aggregates (means, population stdevs, histogram) over the adversarial rows.
void finalize_aggregates(EvalReport& report) {
  real acc_sum = 0.0, adv_sum = 0.0, l2_sum = 0.0;
  for (std::size_t i = 1; i < report.rows.size(); i += 2) {
    const ExampleRow& row = report.rows[i];
    acc_sum += row.accuracy;
    adv_sum += row.adversariality;
    l2_sum += row.l2_per_pixel;
    const auto bin =
        std::min<std::size_t>(9, static_cast<std::size_t>(std::floor(row.adversariality * 10.0)));
    ++report.histogram[bin];
  }
  const auto m = static_cast<real>(report.rows.size() / 2);
  report.accuracy_mean = acc_sum / m;
  report.adversariality_mean = adv_sum / m;
  report.mean_l2_per_pixel = l2_sum / m;
  real acc_var = 0.0, adv_var = 0.0;
  for (std::size_t i = 1; i < report.rows.size(); i += 2) {
    const ExampleRow& row = report.rows[i];
    acc_var += (row.accuracy - report.accuracy_mean) * (row.accuracy - report.accuracy_mean);
    adv_var += (row.adversariality - report.adversariality_mean) *
               (row.adversariality - report.adversariality_mean);
  }
  report.accuracy_stdev = std::sqrt(acc_var / m);
  report.adversariality_stdev = std::sqrt(adv_var / m);
}

}  // namespace

EvalReport build_report(const std::vector<EvalExample>& examples, const classifier::Model& model,
                        const TransformSampler& sampler, std::size_t n, RngStream stream) {
  if (examples.empty()) throw Error("eval: example list must be nonempty");
  check_sample_count(n);
  model.validate();
  for (const EvalExample& e : examples) check_example(model, e);

  EvalReport report;
  report.n_samples = n;
  report.rows.reserve(2 * examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    // Each example owns a forked stream, so the report does not depend on
    // example order for its per-example values.
    RngStream ex_stream = stream.fork(static_cast<std::uint64_t>(i));
    append_example_rows(report, examples[i], model, sampler, n, ex_stream);
  }
  finalize_aggregates(report);
  report.validate();
  return report;
}

EvalReport report_for_example(const EvalExample& example, const classifier::Model& model,
                              const TransformSampler& sampler, std::size_t n, RngStream stream) {
  check_sample_count(n);
  model.validate();
  check_example(model, example);
  EvalReport report;
  report.n_samples = n;
  append_example_rows(report, example, model, sampler, n, stream);
  finalize_aggregates(report);
  report.validate();
  return report;
}

std::string report_csv(const EvalReport& report) {
  report.validate();
  std::string out = "example_id,lambda,accuracy,adversariality,l2_per_pixel\n";
  for (const ExampleRow& row : report.rows) {
    out += row.example_id;
    out += ',';
    out += format_real(row.lambda);
    out += ',';
    out += format_real(row.accuracy);
    out += ',';
    out += format_real(row.adversariality);
    out += ',';
    out += format_real(row.l2_per_pixel);
    out += '\n';
  }
  return out;
}

void write_report_csv(const EvalReport& report, const std::string& path) {
  const std::string csv = report_csv(report);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open report file '" + path + "' for writing");
  out.write(csv.data(), static_cast<std::streamsize>(csv.size()));
  if (!out) throw Error("failed to write report file '" + path + "'");
}

Tensor render_montage(const classifier::Model& model, const Tensor& image,
                      const TransformSampler& sampler, std::size_t rows, std::size_t cols,
                      RngStream stream) {
  if (rows == 0 || cols == 0) throw Error("eval: montage grid must be at least 1x1");
  model.validate();
  const Shape& in = model.arch.input_shape;
  const std::size_t tile_h = in[0], tile_w = in[1], channels = in[2];
  const std::size_t total_h = kPad + rows * (kLabelH + tile_h + kPad);
  const std::size_t total_w = kPad + cols * (tile_w + kPad);
  Tensor canvas(Shape{total_h, total_w, channels});
  std::fill(canvas.data(), canvas.data() + canvas.size(), kBorderGray);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::vector<view::ViewTransform> view = draw_views(sampler, 1, stream, in);
      const Tensor warped = view[0].apply(image);
      const Tensor logp = model.log_probs(warped);
      const std::size_t cls = argmax_lowest(logp.data(), model.arch.class_count);
      const auto pct = static_cast<long long>(std::llround(std::exp(logp[cls]) * 100.0));
      const std::string label = std::to_string(cls) + ":" + std::to_string(pct) + "%";
      const std::size_t y0 = kPad + r * (kLabelH + tile_h + kPad);
      const std::size_t x0 = kPad + c * (tile_w + kPad);
      for (std::size_t y = y0; y < y0 + kLabelH; ++y) {
        for (std::size_t x = x0; x < x0 + tile_w; ++x) set_pixel(canvas, y, x, 0.0);
      }
      draw_text(canvas, label, x0 + 1, y0 + 1);
      for (std::size_t y = 0; y < tile_h; ++y) {
        std::memcpy(canvas.data() + ((y0 + kLabelH + y) * total_w + x0) * channels,
                    warped.data() + y * tile_w * channels, tile_w * channels * sizeof(real));
      }
    }
  }
  return canvas;
}

void write_montage_png(const classifier::Model& model, const Tensor& image,
                       const TransformSampler& sampler, std::size_t rows, std::size_t cols,
                       RngStream stream, const std::string& path) {
  imageio::write_png(render_montage(model, image, sampler, rows, cols, std::move(stream)), path);
}

}  // namespace eot::eval
