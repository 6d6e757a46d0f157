#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <doctest.h>

#include "eot/attack.hpp"
#include "eot/classifier.hpp"
#include "eot/dataset.hpp"
#include "eot/errors.hpp"
#include "eot/eval.hpp"
#include "eot/renderer3d.hpp"
#include "eot/rng.hpp"
#include "eot/tensor.hpp"
#include "eot/transforms2d.hpp"

namespace at = eot::attack;
namespace cls = eot::classifier;
namespace ds = eot::dataset;
namespace ev = eot::eval;
namespace r3 = eot::renderer3d;
namespace t2 = eot::transforms2d;
using eot::RngStream;
using eot::Shape;
using eot::Tensor;

namespace {

std::string temp_path(const char* name) { return std::string("/tmp/eot_eval_") + name; }

bool tensors_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(eot::real)) == 0;
}

// Linearly separable 6x6 blob classifier shared by the eval tests.
const cls::Model& blob_model() {
  static const cls::Model model = [] {
    const ds::LabeledDataset data = ds::make_blob_dataset(40, 3);
    cls::TrainConfig cfg;
    cfg.epochs = 15;
    cfg.batch_size = 16;
    cfg.learning_rate = 0.2;
    cfg.holdout_fraction = 0.25;
    cfg.seed = 4;
    return cls::train(data, cls::Architecture::dense_net(Shape{6, 6, 1}, {}, 2), cfg);
  }();
  return model;
}

Tensor blob_image_of_class(int wanted) {
  const ds::LabeledDataset data = ds::make_blob_dataset(40, 3);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] == wanted) return data.image(i);
  }
  throw eot::Error("test: no blob image of the wanted class");
}

// 4-class model on 2x2 inputs whose prediction is forced through the bias
// alone (all weights zero), so every classification outcome is known exactly.
cls::Model biased_model(const std::vector<eot::real>& bias) {
  cls::Model model = cls::init_model(cls::Architecture::dense_net(Shape{2, 2, 1}, {}, 4), 1);
  for (Tensor& p : model.params) {
    std::fill(p.data(), p.data() + p.size(), 0.0);
    if (p.rank() == 1) {
      REQUIRE(p.size() == bias.size());
      std::copy(bias.begin(), bias.end(), p.data());
    }
  }
  return model;
}

// A small but non-degenerate distribution that fits a canvas equal to the
// image (scaling only shrinks).
t2::Dist2DConfig small_dist() {
  t2::Dist2DConfig d;
  d.scale_min = 0.7;
  d.scale_max = 1.0;
  d.noise_stdev_min = 0.0;
  d.noise_stdev_max = 0.1;
  return d;
}

Tensor flat_image(Shape shape, eot::real value) {
  Tensor t(std::move(shape));
  std::fill(t.data(), t.data() + t.size(), value);
  return t;
}

ev::TransformSampler blob_sampler() {
  return ev::make_sampler_2d(small_dist(), Shape{6, 6, 1}, 6, 6);
}

// An image near the blob model's decision boundary, found by bisecting the
// blend between a class-0 and a class-1 image until the sampled views split
// between the classes. Near p = 0.5 the per-view indicator has variance, which
// the Monte Carlo tests need.
const Tensor& ambiguous_blob_image() {
  static const Tensor image = [] {
    const cls::Model& model = blob_model();
    const ev::TransformSampler sampler = blob_sampler();
    const Tensor img0 = blob_image_of_class(0);
    const Tensor img1 = blob_image_of_class(1);
    const auto blend = [&](eot::real alpha) {
      Tensor x = img0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = (1.0 - alpha) * img0[i] + alpha * img1[i];
      }
      return x;
    };
    eot::real lo = 0.0, hi = 1.0;
    for (int iter = 0; iter < 20; ++iter) {
      const eot::real mid = 0.5 * (lo + hi);
      const eot::real adv =
          ev::adversariality(model, blend(mid), 1, sampler, 120, RngStream(777));
      (adv < 0.5 ? lo : hi) = mid;
    }
    const Tensor x = blend(0.5 * (lo + hi));
    const eot::real p = ev::adversariality(model, x, 1, sampler, 240, RngStream(778));
    REQUIRE(p > 0.1);
    REQUIRE(p < 0.9);
    return x;
  }();
  return image;
}

eot::real population_stdev(const std::vector<eot::real>& values) {
  eot::real mean = 0.0;
  for (const eot::real v : values) mean += v;
  mean /= static_cast<eot::real>(values.size());
  eot::real var = 0.0;
  for (const eot::real v : values) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<eot::real>(values.size()));
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("classify_indicator follows the argmax with lowest-index ties") {
  const Tensor image = flat_image(Shape{2, 2, 1}, 0.5);

  const cls::Model favors2 = biased_model({0.0, 0.0, 5.0, 0.0});
  CHECK(ev::classify_indicator(favors2, image, 2) == 1);
  CHECK(ev::classify_indicator(favors2, image, 0) == 0);
  CHECK(ev::classify_indicator(favors2, image, 3) == 0);

  // Classes 0 and 2 tie exactly; the indicator must resolve to class 0.
  const cls::Model tied = biased_model({3.0, 0.0, 3.0, 0.0});
  CHECK(ev::classify_indicator(tied, image, 0) == 1);
  CHECK(ev::classify_indicator(tied, image, 2) == 0);

  CHECK_THROWS_WITH_AS(ev::classify_indicator(favors2, image, 4),
                       doctest::Contains("out of range"), eot::Error);
}

TEST_CASE("adversariality is the exact fraction of per-view indicators") {
  const cls::Model& model = blob_model();
  const Tensor x = blob_image_of_class(0);
  const ev::TransformSampler sampler = blob_sampler();
  const std::size_t n = 25;

  const eot::real adv = ev::adversariality(model, x, 1, sampler, n, RngStream(5));

  // Oracle: replay the identical stream and count single-view indicators.
  RngStream replay(5);
  std::size_t hits = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const eot::view::ViewTransform view = sampler(replay);
    hits += static_cast<std::size_t>(ev::classify_indicator(model, view.apply(x), 1));
  }
  CHECK(adv == static_cast<eot::real>(hits) / static_cast<eot::real>(n));
  // The value is a count over n views, hence an exact multiple of 1/n.
  CHECK(adv * static_cast<eot::real>(n) == std::round(adv * static_cast<eot::real>(n)));
}

TEST_CASE("forced classifiers pin the trivial adversariality values") {
  const cls::Model favors2 = biased_model({0.0, 0.0, 5.0, 0.0});
  const Tensor image = flat_image(Shape{2, 2, 1}, 0.5);
  const ev::TransformSampler sampler = ev::make_sampler_2d(small_dist(), Shape{2, 2, 1}, 2, 2);

  CHECK(ev::adversariality(favors2, image, 2, sampler, 40, RngStream(3)) == 1.0);
  CHECK(ev::adversariality(favors2, image, 1, sampler, 40, RngStream(3)) == 0.0);

  CHECK_THROWS_WITH_AS(ev::adversariality(favors2, image, 2, sampler, 0, RngStream(3)),
                       doctest::Contains("at least 1"), eot::Error);
  CHECK_THROWS_WITH_AS(ev::adversariality(favors2, image, 9, sampler, 4, RngStream(3)),
                       doctest::Contains("out of range"), eot::Error);
}

TEST_CASE("classification_accuracy accepts any class in the true set") {
  const cls::Model favors2 = biased_model({0.0, 0.0, 5.0, 0.0});
  const Tensor image = flat_image(Shape{2, 2, 1}, 0.5);
  const ev::TransformSampler sampler = ev::make_sampler_2d(small_dist(), Shape{2, 2, 1}, 2, 2);

  CHECK(ev::classification_accuracy(favors2, image, {2}, sampler, 30, RngStream(8)) == 1.0);
  CHECK(ev::classification_accuracy(favors2, image, {0, 1, 3}, sampler, 30, RngStream(8)) == 0.0);
  CHECK(ev::classification_accuracy(favors2, image, {0, 1, 2, 3}, sampler, 30, RngStream(8)) ==
        1.0);

  CHECK_THROWS_WITH_AS(ev::classification_accuracy(favors2, image, {}, sampler, 30, RngStream(8)),
                       doctest::Contains("nonempty"), eot::Error);
  CHECK_THROWS_WITH_AS(
      ev::classification_accuracy(favors2, image, {5}, sampler, 30, RngStream(8)),
      doctest::Contains("out of range"), eot::Error);
}

TEST_CASE("measurements are reproducible from the stream seed") {
  const cls::Model& model = blob_model();
  const Tensor& ambiguous = ambiguous_blob_image();
  const ev::TransformSampler sampler = blob_sampler();

  const eot::real a = ev::adversariality(model, ambiguous, 1, sampler, 50, RngStream(21));
  const eot::real b = ev::adversariality(model, ambiguous, 1, sampler, 50, RngStream(21));
  CHECK(a == b);

  // Near the boundary the sampled views decide the class, so different seeds
  // must see different view sets (and here, different counts).
  std::set<eot::real> distinct;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    distinct.insert(ev::adversariality(model, ambiguous, 1, sampler, 50, RngStream(seed)));
  }
  CHECK(distinct.size() > 1);
}

TEST_CASE("adversariality and disjoint-truth accuracy cannot exceed 1 combined") {
  const cls::Model& model = blob_model();
  const Tensor x = blob_image_of_class(0);
  const ev::TransformSampler sampler = blob_sampler();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const eot::real adv = ev::adversariality(model, x, 1, sampler, 33, RngStream(seed));
    const eot::real acc = ev::classification_accuracy(model, x, {0}, sampler, 33, RngStream(seed));
    // Same stream, same views: each view is counted by at most one of the two.
    CHECK(adv + acc <= 1.0 + 1e-12);
  }
}

TEST_CASE("the Monte Carlo error shrinks like one over sqrt(n)") {
  const cls::Model& model = blob_model();
  const Tensor& ambiguous = ambiguous_blob_image();
  const ev::TransformSampler sampler = blob_sampler();

  std::vector<eot::real> small_n, large_n;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    small_n.push_back(ev::adversariality(model, ambiguous, 1, sampler, 60, RngStream(1000 + seed)));
    large_n.push_back(
        ev::adversariality(model, ambiguous, 1, sampler, 240, RngStream(2000 + seed)));
  }
  const eot::real ratio = population_stdev(small_n) / population_stdev(large_n);
  // Quadrupling n should halve the standard deviation, within fluctuation.
  CHECK(ratio > 2.0 / 1.5);
  CHECK(ratio < 2.0 * 1.5);
}

TEST_CASE("adversariality reproduces the attack's held-out statistic bit for bit") {
  const cls::Model& model = blob_model();
  const Tensor x = blob_image_of_class(0);
  const t2::Dist2DConfig dist = small_dist();

  at::AttackConfig cfg;
  cfg.steps = 25;
  cfg.learning_rate = 0.1;
  cfg.batch_size = 4;
  cfg.min_new_per_batch = 4;
  cfg.holdout_samples = 60;
  cfg.seed = 33;
  const at::AttackResult res = at::eot_attack_2d(x, 1, dist, model, cfg);

  const ev::TransformSampler sampler = ev::make_sampler_2d(dist, x.shape(), 6, 6);
  const eot::real adv =
      ev::adversariality(model, res.adversarial, 1, sampler, 60, RngStream(33).fork("holdout"));
  CHECK(adv == res.holdout_adversariality);

  // report_for_example draws from the given stream directly, so handing it
  // the attack's holdout fork reproduces the stored statistic in the
  // adversarial row.
  ev::EvalExample example;
  example.id = "replay";
  example.original = x;
  example.adversarial = res.adversarial;
  example.true_classes = {0};
  example.target = 1;
  const ev::EvalReport report =
      ev::report_for_example(example, model, sampler, 60, RngStream(33).fork("holdout"));
  REQUIRE(report.rows.size() == 2);
  CHECK(report.rows[1].adversariality == res.holdout_adversariality);
}

TEST_CASE("the 3D sampler reproduces the texture attack's held-out statistic") {
  const cls::Model model = cls::init_model(
      cls::Architecture::dense_net(Shape{12, 12, 3}, {6}, 3), 17);
  const r3::Mesh cube = r3::unit_cube_mesh();
  Tensor texture(Shape{8, 8, 3});
  RngStream fill(2);
  for (std::size_t i = 0; i < texture.size(); ++i) texture[i] = fill.uniform();

  at::AttackConfig cfg;
  cfg.steps = 0;
  cfg.holdout_samples = 20;
  cfg.seed = 11;
  const r3::Pose3DConfig pose_dist;
  const r3::PhysicalConfig physical_dist;
  const at::AttackResult res =
      at::eot_attack_3d(texture, 2, cube, pose_dist, physical_dist, model, cfg);

  const ev::TransformSampler sampler =
      ev::make_sampler_3d(cube, pose_dist, physical_dist, 8, 8, 12, 12);
  const eot::real adv =
      ev::adversariality(model, texture, 2, sampler, 20, RngStream(11).fork("holdout"));
  CHECK(adv == res.holdout_adversariality);
}

TEST_CASE("build_report pairs original and adversarial rows over shared views") {
  const cls::Model& model = blob_model();
  const Tensor x = blob_image_of_class(0);
  const ev::TransformSampler sampler = blob_sampler();

  at::AttackConfig cfg;
  cfg.steps = 40;
  cfg.learning_rate = 0.1;
  cfg.batch_size = 4;
  cfg.min_new_per_batch = 4;
  cfg.holdout_samples = 10;
  cfg.seed = 7;
  cfg.lambda = 0.05;
  const at::AttackResult res = at::eot_attack_2d(x, 1, small_dist(), model, cfg);

  ev::EvalExample example;
  example.id = "e0";
  example.original = x;
  example.adversarial = res.adversarial;
  example.true_classes = {0};
  example.target = 1;
  example.lambda = cfg.lambda;

  const std::size_t n = 50;
  const ev::EvalReport report = ev::build_report({example}, model, sampler, n, RngStream(99));
  REQUIRE(report.rows.size() == 2);
  REQUIRE(report.n_samples == n);
  const ev::ExampleRow& orig = report.rows[0];
  const ev::ExampleRow& adv = report.rows[1];
  CHECK(orig.example_id == "e0-original");
  CHECK(adv.example_id == "e0-adversarial");
  CHECK(orig.lambda == cfg.lambda);

  // The rows must match the standalone measurements over the same forked
  // stream (build_report assigns example 0 the fork with salt 0).
  CHECK(adv.adversariality ==
        ev::adversariality(model, res.adversarial, 1, sampler, n,
                           RngStream(99).fork(std::uint64_t{0})));
  CHECK(adv.accuracy ==
        ev::classification_accuracy(model, res.adversarial, {0}, sampler, n,
                                    RngStream(99).fork(std::uint64_t{0})));
  CHECK(orig.adversariality ==
        ev::adversariality(model, x, 1, sampler, n, RngStream(99).fork(std::uint64_t{0})));

  CHECK(orig.l2_per_pixel == 0.0);
  CHECK(adv.l2_per_pixel == t2::image_distance(res.adversarial, x) / 36.0);

  // Single example: the aggregates collapse onto the adversarial row.
  CHECK(report.accuracy_mean == adv.accuracy);
  CHECK(report.adversariality_mean == adv.adversariality);
  CHECK(report.mean_l2_per_pixel == adv.l2_per_pixel);
  CHECK(report.accuracy_stdev == 0.0);
  CHECK(report.adversariality_stdev == 0.0);

  std::size_t total = 0;
  for (const std::size_t b : report.histogram) total += b;
  CHECK(total == 1);
  const auto bin = std::min<std::size_t>(
      9, static_cast<std::size_t>(std::floor(adv.adversariality * 10.0)));
  CHECK(report.histogram[bin] == 1);

  // Top predicted classes: a 2-class model yields at most 2 entries whose
  // frequencies cover every view, most frequent first.
  REQUIRE(!adv.top_classes.empty());
  CHECK(adv.top_classes.size() <= 2);
  eot::real freq_sum = 0.0;
  for (const auto& [c, f] : adv.top_classes) {
    CHECK(c <= 1);
    freq_sum += f;
  }
  CHECK(freq_sum == doctest::Approx(1.0).epsilon(1e-12));
  if (adv.top_classes.size() == 2) {
    CHECK(adv.top_classes[0].second >= adv.top_classes[1].second);
  }
}

TEST_CASE("build_report aggregates and per-example forks are stable") {
  const cls::Model& model = blob_model();
  const Tensor x = blob_image_of_class(0);
  const ev::TransformSampler sampler = blob_sampler();

  at::AttackConfig cfg;
  cfg.steps = 40;
  cfg.learning_rate = 0.1;
  cfg.batch_size = 4;
  cfg.min_new_per_batch = 4;
  cfg.holdout_samples = 10;
  cfg.seed = 7;
  const at::AttackResult res = at::eot_attack_2d(x, 1, small_dist(), model, cfg);

  ev::EvalExample attacked{"hit", x, res.adversarial, {0}, 1, 0.0};
  ev::EvalExample untouched{"miss", x, x, {0}, 1, 0.0};

  const std::size_t n = 40;
  const ev::EvalReport both =
      ev::build_report({attacked, untouched}, model, sampler, n, RngStream(5));
  REQUIRE(both.rows.size() == 4);
  CHECK(both.rows[2].example_id == "miss-original");
  CHECK(both.rows[3].example_id == "miss-adversarial");

  // An untouched example keeps identical original/adversarial rows.
  CHECK(both.rows[2].adversariality == both.rows[3].adversariality);
  CHECK(both.rows[2].accuracy == both.rows[3].accuracy);
  CHECK(both.rows[3].l2_per_pixel == 0.0);

  // Aggregates recompute from the adversarial rows (population statistics).
  const eot::real mean = (both.rows[1].adversariality + both.rows[3].adversariality) / 2.0;
  CHECK(both.adversariality_mean == mean);
  const eot::real var = ((both.rows[1].adversariality - mean) *
                             (both.rows[1].adversariality - mean) +
                         (both.rows[3].adversariality - mean) *
                             (both.rows[3].adversariality - mean)) /
                        2.0;
  CHECK(both.adversariality_stdev == std::sqrt(var));
  CHECK(both.mean_l2_per_pixel ==
        (both.rows[1].l2_per_pixel + both.rows[3].l2_per_pixel) / 2.0);
  std::size_t total = 0;
  for (const std::size_t b : both.histogram) total += b;
  CHECK(total == 2);

  // Example 0's rows do not depend on what follows it in the list (each
  // example forks its own stream by index).
  const ev::EvalReport solo = ev::build_report({attacked}, model, sampler, n, RngStream(5));
  CHECK(solo.rows[0].adversariality == both.rows[0].adversariality);
  CHECK(solo.rows[1].adversariality == both.rows[1].adversariality);
  CHECK(solo.rows[1].accuracy == both.rows[1].accuracy);
  CHECK(solo.rows[1].top_classes == both.rows[1].top_classes);

  // The report bytes are reproducible.
  const ev::EvalReport again =
      ev::build_report({attacked, untouched}, model, sampler, n, RngStream(5));
  CHECK(ev::report_csv(both) == ev::report_csv(again));
}

TEST_CASE("build_report rejects malformed inputs") {
  const cls::Model& model = blob_model();
  const ev::TransformSampler sampler = blob_sampler();
  const Tensor x = flat_image(Shape{6, 6, 1}, 0.5);
  const ev::EvalExample good{"ok", x, x, {0}, 1, 0.0};

  CHECK_THROWS_WITH_AS(ev::build_report({}, model, sampler, 5, RngStream(1)),
                       doctest::Contains("nonempty"), eot::Error);
  CHECK_THROWS_WITH_AS(ev::build_report({good}, model, sampler, 0, RngStream(1)),
                       doctest::Contains("at least 1"), eot::Error);

  ev::EvalExample bad = good;
  bad.id = "has,comma";
  CHECK_THROWS_WITH_AS(ev::build_report({bad}, model, sampler, 5, RngStream(1)),
                       doctest::Contains("commas"), eot::Error);
  bad = good;
  bad.id = "";
  CHECK_THROWS_WITH_AS(ev::build_report({bad}, model, sampler, 5, RngStream(1)),
                       doctest::Contains("nonempty"), eot::Error);
  bad = good;
  bad.adversarial = flat_image(Shape{5, 5, 1}, 0.5);
  CHECK_THROWS_WITH_AS(ev::build_report({bad}, model, sampler, 5, RngStream(1)),
                       doctest::Contains("does not match"), eot::Error);
  bad = good;
  bad.true_classes = {};
  CHECK_THROWS_WITH_AS(ev::build_report({bad}, model, sampler, 5, RngStream(1)),
                       doctest::Contains("nonempty"), eot::Error);
  bad = good;
  bad.target = 7;
  CHECK_THROWS_WITH_AS(ev::build_report({bad}, model, sampler, 5, RngStream(1)),
                       doctest::Contains("out of range"), eot::Error);
  bad = good;
  bad.lambda = -0.5;
  CHECK_THROWS_WITH_AS(ev::build_report({bad}, model, sampler, 5, RngStream(1)),
                       doctest::Contains("lambda"), eot::Error);
}

TEST_CASE("the CSV bytes are pinned and locale-free") {
  ev::EvalReport report;
  report.n_samples = 4;
  ev::ExampleRow orig;
  orig.example_id = "a-original";
  orig.lambda = 0.25;
  orig.accuracy = 1.0;
  orig.adversariality = 0.0;
  orig.l2_per_pixel = 0.0;
  ev::ExampleRow adv = orig;
  adv.example_id = "a-adversarial";
  adv.accuracy = 0.5;
  adv.adversariality = 0.75;
  adv.l2_per_pixel = 0.125;
  report.rows = {orig, adv};
  report.accuracy_mean = 0.5;
  report.adversariality_mean = 0.75;
  report.mean_l2_per_pixel = 0.125;
  report.histogram[7] = 1;  // floor(0.75 * 10)

  const std::string expected =
      "example_id,lambda,accuracy,adversariality,l2_per_pixel\n"
      "a-original,0.25,1,0,0\n"
      "a-adversarial,0.25,0.5,0.75,0.125\n";
  CHECK(ev::report_csv(report) == expected);

  const std::string path = temp_path("report.csv");
  ev::write_report_csv(report, path);
  CHECK(slurp(path) == expected);

  // Structural validation guards serialization.
  ev::EvalReport broken = report;
  broken.histogram[7] = 0;
  CHECK_THROWS_WITH_AS(ev::report_csv(broken), doctest::Contains("histogram"), eot::Error);
  broken = report;
  broken.rows[0].example_id = "a,b";
  CHECK_THROWS_WITH_AS(ev::report_csv(broken), doctest::Contains("commas"), eot::Error);
  broken = report;
  broken.rows[0].adversariality = 1.5;
  CHECK_THROWS_WITH_AS(ev::report_csv(broken), doctest::Contains("[0,1]"), eot::Error);
}

TEST_CASE("the montage lays out labeled tiles of sampled views") {
  const cls::Model& model = blob_model();
  const Tensor x = blob_image_of_class(1);
  const ev::TransformSampler sampler = blob_sampler();

  const Tensor montage = ev::render_montage(model, x, sampler, 2, 3, RngStream(12));
  // Tiles are 6x6 with a 9-pixel label bar and 2-pixel borders.
  REQUIRE(montage.shape() == Shape{2 + 2 * (9 + 6 + 2), 2 + 3 * (6 + 2), 1});

  // Deterministic in the stream.
  const Tensor again = ev::render_montage(model, x, sampler, 2, 3, RngStream(12));
  CHECK(tensors_equal(montage, again));

  // Border pixels keep the background gray.
  CHECK(montage[0] == 0.25);

  // The first tile's image block is exactly the first sampled view of x.
  RngStream replay(12);
  const Tensor warped = sampler(replay).apply(x);
  const std::size_t total_w = montage.shape()[1];
  bool tile_matches = true;
  for (std::size_t y = 0; y < 6; ++y) {
    for (std::size_t xx = 0; xx < 6; ++xx) {
      if (montage[(2 + 9 + y) * total_w + 2 + xx] != warped[y * 6 + xx]) tile_matches = false;
    }
  }
  CHECK(tile_matches);

  // The label bar above it is black with white glyph pixels.
  bool has_glyph = false;
  bool bar_valid = true;
  for (std::size_t y = 2; y < 2 + 9; ++y) {
    for (std::size_t xx = 2; xx < 2 + 6; ++xx) {
      const eot::real v = montage[y * total_w + xx];
      if (v == 1.0) has_glyph = true;
      else if (v != 0.0) bar_valid = false;
    }
  }
  CHECK(has_glyph);
  CHECK(bar_valid);

  CHECK_THROWS_WITH_AS(ev::render_montage(model, x, sampler, 0, 3, RngStream(1)),
                       doctest::Contains("at least 1x1"), eot::Error);

  const std::string path = temp_path("montage.png");
  ev::write_montage_png(model, x, sampler, 2, 3, RngStream(12), path);
  const std::string bytes = slurp(path);
  REQUIRE(bytes.size() > 8);
  CHECK(bytes.compare(0, 8, "\x89PNG\r\n\x1a\n") == 0);
}

TEST_CASE("samplers validate their construction and use") {
  CHECK_THROWS_WITH_AS(ev::make_sampler_2d(small_dist(), Shape{6, 6}, 6, 6),
                       doctest::Contains("[H,W,C]"), eot::Error);
  CHECK_THROWS_WITH_AS(
      ev::make_sampler_3d(r3::unit_cube_mesh(), r3::Pose3DConfig{}, std::nullopt, 0, 8, 12, 12),
      doctest::Contains("nonzero"), eot::Error);

  // A sampler whose output does not fit the model is rejected at use.
  const cls::Model favors2 = biased_model({0.0, 0.0, 5.0, 0.0});
  const ev::TransformSampler wrong = ev::make_sampler_2d(small_dist(), Shape{3, 3, 1}, 3, 3);
  const Tensor image = flat_image(Shape{3, 3, 1}, 0.5);
  CHECK_THROWS_WITH_AS(ev::adversariality(favors2, image, 2, wrong, 4, RngStream(1)),
                       doctest::Contains("sampled view produces shape"), eot::Error);
}
