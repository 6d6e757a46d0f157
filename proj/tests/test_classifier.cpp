#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "eot/classifier.hpp"
#include "eot/dataset.hpp"
#include "eot/errors.hpp"
#include "eot/graph.hpp"
#include "eot/rng.hpp"

using eot::Error;
using eot::real;
using eot::RngStream;
using eot::Shape;
using eot::Tensor;
namespace cl = eot::classifier;
namespace ds = eot::dataset;
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
      : path(fs::temp_directory_path() / ("eot_classifier_test_" + name)) {
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

Tensor random_image(RngStream& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform();
  return t;
}

bool params_equal(const cl::Model& a, const cl::Model& b) {
  if (a.params.size() != b.params.size()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    if (a.params[i].shape() != b.params[i].shape()) return false;
    if (std::memcmp(a.params[i].data(), b.params[i].data(),
                    a.params[i].size() * sizeof(real)) != 0)
      return false;
  }
  return true;
}

std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  REQUIRE(bool(out));
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("default CNN reports the documented parameter shapes") {
  const cl::Architecture arch = cl::Architecture::default_cnn({28, 28, 1}, 10);
  CHECK_NOTHROW(arch.validate());
  const std::vector<Shape> shapes = arch.parameter_shapes();
  REQUIRE(shapes.size() == 8);
  CHECK(shapes[0] == Shape{5, 5, 1, 8});
  CHECK(shapes[1] == Shape{8});
  CHECK(shapes[2] == Shape{5, 5, 8, 16});
  CHECK(shapes[3] == Shape{16});
  CHECK(shapes[4] == Shape{256, 64});  // 28 -> 24 -> 12 -> 8 -> 4; 4*4*16
  CHECK(shapes[5] == Shape{64});
  CHECK(shapes[6] == Shape{64, 10});
  CHECK(shapes[7] == Shape{10});
  CHECK(arch.layers_string() ==
        "conv5x8,relu,maxpool,conv5x16,relu,maxpool,dense64,relu,dense10,logsoftmax");
}

TEST_CASE("layer strings round-trip through the parser") {
  const cl::Architecture arch = cl::Architecture::default_cnn({28, 28, 1}, 10);
  const std::vector<cl::LayerSpec> parsed = cl::Architecture::parse_layers(arch.layers_string());
  REQUIRE(parsed.size() == arch.layers.size());
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    CHECK(parsed[i].kind == arch.layers[i].kind);
    CHECK(parsed[i].kernel == arch.layers[i].kernel);
    CHECK(parsed[i].units == arch.layers[i].units);
  }
  CHECK(throws_with_substring([] { cl::Architecture::parse_layers("conv5"); }, "convKxC"));
  CHECK(throws_with_substring([] { cl::Architecture::parse_layers("densex"); }, "bad layer"));
  CHECK(throws_with_substring([] { cl::Architecture::parse_layers("pool"); }, "unknown layer"));
  CHECK(throws_with_substring([] { cl::Architecture::parse_layers("dense0"); }, "bad layer"));
  CHECK(throws_with_substring([] { cl::Architecture::parse_layers("relu,,relu"); }, "empty"));
}

TEST_CASE("architecture validation rejects malformed networks") {
  cl::Architecture arch = cl::Architecture::default_cnn({28, 28, 1}, 10);
  arch.layers.pop_back();  // drop the final logsoftmax
  CHECK(throws_with_substring([&] { arch.validate(); }, "must end with logsoftmax"));

  arch = cl::Architecture::default_cnn({28, 28, 1}, 10);
  arch.layers[8].units = 9;  // final dense no longer matches class_count
  CHECK(throws_with_substring([&] { arch.validate(); }, "dense(10)"));

  arch = cl::Architecture::default_cnn({3, 3, 1}, 10);  // conv5 on a 3x3 input
  CHECK(throws_with_substring([&] { arch.validate(); }, "exceeds"));

  arch = cl::Architecture::dense_net({6, 6, 1}, {4}, 2);
  arch.layers.insert(arch.layers.begin() + 1, {cl::LayerKind::kMaxPool, 0, 0});
  CHECK(throws_with_substring([&] { arch.validate(); }, "after a dense"));

  arch = cl::Architecture::dense_net({6, 6, 1}, {4}, 2);
  arch.layers.insert(arch.layers.begin(), {cl::LayerKind::kLogSoftmax, 0, 0});
  CHECK(throws_with_substring([&] { arch.validate(); }, "final layer"));

  arch = cl::Architecture::dense_net({6, 6, 1}, {}, 1);
  CHECK(throws_with_substring([&] { arch.validate(); }, "at least 2"));
}

TEST_CASE("initialization is deterministic with zero biases") {
  const cl::Architecture arch = cl::Architecture::default_cnn({28, 28, 1}, 10);
  const cl::Model a = cl::init_model(arch, 42);
  const cl::Model b = cl::init_model(arch, 42);
  const cl::Model c = cl::init_model(arch, 43);
  CHECK(params_equal(a, b));
  CHECK_FALSE(params_equal(a, c));
  CHECK_NOTHROW(a.validate());
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    if (a.params[i].shape().size() == 1) {
      for (std::size_t k = 0; k < a.params[i].size(); ++k) CHECK(a.params[i][k] == 0.0);
    } else {
      real max_abs = 0.0;
      for (std::size_t k = 0; k < a.params[i].size(); ++k)
        max_abs = std::max(max_abs, std::fabs(a.params[i][k]));
      CHECK(max_abs > 0.0);
      CHECK(max_abs < 5.0);  // He-scaled draws stay small
    }
  }
}

TEST_CASE("log-probabilities exponentiate to a unit sum") {
  const cl::Architecture arch = cl::Architecture::default_cnn({28, 28, 1}, 10);
  const cl::Model model = cl::init_model(arch, 3);
  RngStream rng(9);
  const Tensor image = random_image(rng, {28, 28, 1});
  const Tensor lp = model.log_probs(image);
  REQUIRE(lp.shape() == Shape{10});
  real sum = 0.0;
  for (std::size_t i = 0; i < 10; ++i) sum += std::exp(lp[i]);
  CHECK(std::fabs(sum - 1.0) < 1e-9);
}

TEST_CASE("batched log-probabilities match per-image calls across chunks") {
  const cl::Architecture arch = cl::Architecture::dense_net({6, 6, 1}, {8}, 3);
  const cl::Model model = cl::init_model(arch, 17);
  RngStream rng(18);
  const std::size_t n = 70;  // crosses the 64-sample chunk boundary
  Tensor batch(Shape{n, 6, 6, 1});
  for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = rng.uniform();
  const Tensor rows = model.log_probs_batch(batch);
  REQUIRE(rows.shape() == Shape{n, 3});
  for (std::size_t i = 0; i < n; ++i) {
    Tensor img(Shape{6, 6, 1},
               std::vector<real>(batch.data() + i * 36, batch.data() + (i + 1) * 36));
    const Tensor lp = model.log_probs(img);
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::fabs(rows[i * 3 + j] - lp[j]) <= 1e-12);
  }
}

TEST_CASE("all-zero parameters give a uniform distribution") {
  const cl::Architecture arch = cl::Architecture::default_cnn({28, 28, 1}, 10);
  cl::Model model = cl::init_model(arch, 1);
  for (Tensor& p : model.params)
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = 0.0;
  RngStream rng(2);
  const Tensor lp = model.log_probs(random_image(rng, {28, 28, 1}));
  for (std::size_t i = 0; i < 10; ++i) CHECK(std::fabs(lp[i] - std::log(0.1)) <= 1e-12);
}

TEST_CASE("linear-softmax input gradient matches the closed form") {
  // One dense layer: grad_x log p_t = W (e_t - p), computable by hand.
  const cl::Architecture arch = cl::Architecture::dense_net({1, 4, 1}, {}, 3);
  cl::Model model;
  model.arch = arch;
  const std::vector<real> w = {0.3,  -0.2, 0.5,  -0.4, 0.1,  0.2,
                               0.05, -0.6, 0.35, 0.25, 0.15, -0.1};
  const std::vector<real> b = {0.1, -0.2, 0.05};
  model.params = {Tensor(Shape{4, 3}, w), Tensor(Shape{3}, b)};
  const std::vector<real> xv = {0.8, 0.1, 0.4, 0.55};
  const Tensor x(Shape{1, 4, 1}, xv);

  real z[3];
  for (std::size_t j = 0; j < 3; ++j) {
    z[j] = b[j];
    for (std::size_t i = 0; i < 4; ++i) z[j] += xv[i] * w[i * 3 + j];
  }
  real denom = 0.0;
  for (const real zj : z) denom += std::exp(zj);
  real p[3];
  for (std::size_t j = 0; j < 3; ++j) p[j] = std::exp(z[j]) / denom;

  const Tensor lp = model.log_probs(x);
  for (std::size_t j = 0; j < 3; ++j) CHECK(std::fabs(lp[j] - std::log(p[j])) <= 1e-12);

  const std::size_t target = 2;
  const Tensor grad = model.input_gradient(x, target);
  REQUIRE(grad.shape() == Shape{1, 4, 1});
  for (std::size_t i = 0; i < 4; ++i) {
    real expected = 0.0;
    for (std::size_t j = 0; j < 3; ++j)
      expected += w[i * 3 + j] * ((j == target ? 1.0 : 0.0) - p[j]);
    CHECK(std::fabs(grad[i] - expected) <= 1e-12);
  }
}

TEST_CASE("input gradient of a small CNN passes a finite-difference check") {
  cl::Architecture arch;
  arch.input_shape = {7, 7, 1};
  arch.class_count = 3;
  arch.layers = {{cl::LayerKind::kConv, 3, 2},   {cl::LayerKind::kRelu, 0, 0},
                 {cl::LayerKind::kMaxPool, 0, 0}, {cl::LayerKind::kDense, 0, 3},
                 {cl::LayerKind::kLogSoftmax, 0, 0}};
  const cl::Model model = cl::init_model(arch, 11);
  RngStream rng(12);
  Tensor x(Shape{1, 7, 7, 1});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform();

  dm::Graph graph;
  const dm::NodeRef xin = graph.input("x", {1, 7, 7, 1});
  const dm::NodeRef logp = cl::append_forward_frozen(graph, model, xin);
  graph.set_output("objective", graph.reduce_sum(graph.gather(logp, {1})));
  CHECK(dm::finite_diff_check(graph, {{"x", x}}, "x", "objective", 1e-5) < 1e-4);
}

TEST_CASE("training separates the blob classes and is reproducible") {
  const ds::LabeledDataset data = ds::make_blob_dataset(40, 3);  // 80 samples
  const cl::Architecture arch = cl::Architecture::dense_net({6, 6, 1}, {}, 2);
  cl::TrainConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.2;
  cfg.holdout_fraction = 0.25;
  cfg.seed = 4;

  cl::TrainReport report;
  const cl::Model model = cl::train(data, arch, cfg, &report);
  CHECK(report.holdout_count == 20);
  CHECK(report.holdout_accuracy >= 0.99);
  REQUIRE(report.epoch_mean_loss.size() == 15);
  CHECK(report.epoch_mean_loss.front() > report.epoch_mean_loss.back());
  CHECK(report.epoch_mean_loss.back() < 0.2);

  const cl::Model again = cl::train(data, arch, cfg, nullptr);
  CHECK(params_equal(model, again));

  cl::TrainConfig untrained = cfg;
  untrained.epochs = 0;
  cl::TrainReport report0;
  cl::train(data, arch, untrained, &report0);
  CHECK(report0.epoch_mean_loss.empty());
}

TEST_CASE("zero training epochs leave the model at chance level") {
  const ds::LabeledDataset data = ds::make_digit_dataset(120, 21);
  const cl::Architecture arch = cl::Architecture::default_cnn({28, 28, 1}, 10);
  cl::TrainConfig cfg;
  cfg.epochs = 0;
  cfg.holdout_fraction = 0.1;
  cfg.seed = 5;
  cl::TrainReport report;
  cl::train(data, arch, cfg, &report);
  CHECK(report.holdout_count == 120);
  CHECK(report.holdout_accuracy >= 0.05);  // 1/class_count within 5 points
  CHECK(report.holdout_accuracy <= 0.15);
}

TEST_CASE("training rejects inconsistent configurations") {
  const ds::LabeledDataset data = ds::make_blob_dataset(4, 3);
  const cl::Architecture arch = cl::Architecture::dense_net({6, 6, 1}, {}, 2);
  cl::TrainConfig cfg;

  cl::TrainConfig bad = cfg;
  bad.batch_size = 0;
  CHECK(throws_with_substring([&] { cl::train(data, arch, bad); }, "batch size"));
  bad = cfg;
  bad.learning_rate = 0.0;
  CHECK(throws_with_substring([&] { cl::train(data, arch, bad); }, "learning rate"));
  bad = cfg;
  bad.holdout_fraction = 1.0;
  CHECK(throws_with_substring([&] { cl::train(data, arch, bad); }, "holdout"));

  const cl::Architecture wrong_input = cl::Architecture::dense_net({5, 5, 1}, {}, 2);
  CHECK(throws_with_substring([&] { cl::train(data, wrong_input, cfg); }, "do not match"));
  const cl::Architecture wrong_classes = cl::Architecture::dense_net({6, 6, 1}, {}, 3);
  CHECK(throws_with_substring([&] { cl::train(data, wrong_classes, cfg); }, "classes"));

  ds::LabeledDataset empty;
  empty.class_count = 2;
  CHECK(throws_with_substring([&] { cl::train(empty, arch, cfg); }, "empty"));
}

TEST_CASE("a diverging run reports a learning-rate problem") {
  const ds::LabeledDataset data = ds::make_blob_dataset(4, 6);  // 8 samples
  const cl::Architecture arch = cl::Architecture::dense_net({6, 6, 1}, {8}, 2);
  cl::TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 8;
  cfg.learning_rate = 1e150;  // forces an overflow within a few steps
  cfg.holdout_fraction = 0.0;
  cfg.seed = 1;
  CHECK(throws_with_substring([&] { cl::train(data, arch, cfg); }, "lower learning rate"));
}

TEST_CASE("a trained CNN classifies held-out digits at 97 percent or better") {
  const ds::LabeledDataset data = ds::make_digit_dataset(150, 21);  // 1500 samples
  const cl::Architecture arch = cl::Architecture::default_cnn({28, 28, 1}, 10);
  cl::TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 32;
  cfg.learning_rate = 0.05;
  cfg.holdout_fraction = 0.1;
  cfg.seed = 5;
  cl::TrainReport report;
  cl::train(data, arch, cfg, &report);
  CHECK(report.holdout_count == 150);
  CHECK(report.holdout_accuracy >= 0.97);
}

TEST_CASE("model files round-trip bit-for-bit and detect corruption") {
  const TempDir dir("io");
  const cl::Architecture arch = cl::Architecture::dense_net({6, 6, 1}, {5}, 3);
  const cl::Model model = cl::init_model(arch, 77);
  const std::string path = dir.file("model.eot");
  cl::save_model(model, path);

  const cl::Model loaded = cl::load_model(path);
  CHECK(params_equal(model, loaded));
  CHECK(loaded.arch.layers_string() == arch.layers_string());
  CHECK(loaded.arch.input_shape == arch.input_shape);
  CHECK(loaded.arch.class_count == arch.class_count);
  RngStream rng(5);
  const Tensor image = random_image(rng, {6, 6, 1});
  CHECK(eot::max_abs_diff(model.log_probs(image), loaded.log_probs(image)) == 0.0);

  const std::vector<unsigned char> original = read_bytes(path);
  const std::size_t header_len = static_cast<std::size_t>(original[8]) |
                                 (static_cast<std::size_t>(original[9]) << 8) |
                                 (static_cast<std::size_t>(original[10]) << 16) |
                                 (static_cast<std::size_t>(original[11]) << 24);

  // Flip one payload byte: the checksum must catch it.
  std::vector<unsigned char> corrupted = original;
  corrupted[12 + header_len + 5] ^= 0x40;
  write_bytes(dir.file("corrupted.eot"), corrupted);
  CHECK(throws_with_substring([&] { cl::load_model(dir.file("corrupted.eot")); }, "checksum"));

  // Future format version.
  std::vector<unsigned char> versioned = original;
  versioned[7] = '2';
  write_bytes(dir.file("versioned.eot"), versioned);
  CHECK(throws_with_substring([&] { cl::load_model(dir.file("versioned.eot")); },
                              "unsupported model file version"));

  // Different file type entirely.
  std::vector<unsigned char> wrong = original;
  wrong[0] = 'X';
  write_bytes(dir.file("wrong.eot"), wrong);
  CHECK(throws_with_substring([&] { cl::load_model(dir.file("wrong.eot")); }, "bad magic"));

  // Truncated payload and trailing garbage.
  std::vector<unsigned char> truncated(original.begin(), original.end() - 10);
  write_bytes(dir.file("truncated.eot"), truncated);
  CHECK(throws_with_substring([&] { cl::load_model(dir.file("truncated.eot")); }, "truncated"));
  std::vector<unsigned char> padded = original;
  padded.push_back(0);
  write_bytes(dir.file("padded.eot"), padded);
  CHECK(throws_with_substring([&] { cl::load_model(dir.file("padded.eot")); }, "trailing"));

  CHECK(throws_with_substring([&] { cl::load_model(dir.file("missing.eot")); }, "cannot open"));
}

TEST_CASE("forward construction rejects mismatched parameters") {
  const cl::Architecture arch = cl::Architecture::dense_net({6, 6, 1}, {}, 2);
  const cl::Model model = cl::init_model(arch, 1);

  dm::Graph graph;
  const dm::NodeRef x = graph.input("x", {2, 6, 6, 1});
  std::vector<dm::NodeRef> params;
  for (const Tensor& p : model.params) params.push_back(graph.constant(p));
  params.pop_back();
  CHECK(throws_with_substring([&] { cl::append_forward(graph, arch, params, x); },
                              "parameter tensors"));

  dm::Graph graph2;
  const dm::NodeRef bad_x = graph2.input("x", {2, 5, 6, 1});
  CHECK(throws_with_substring([&] { cl::append_forward_frozen(graph2, model, bad_x); },
                              "forward input"));
}
