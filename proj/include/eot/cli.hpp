#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "eot/attack.hpp"
#include "eot/renderer3d.hpp"
#include "eot/tensor.hpp"
#include "eot/transforms2d.hpp"

namespace eot::cli {

enum class Mode { kTrain, kAttack2D, kAttack3D, kEval, kRender, kGradcheck };

std::string mode_name(Mode mode);
Mode parse_mode(const std::string& name);

/// Command-line overrides; flags win over config-file values.
struct FlagOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> model;
  std::optional<std::size_t> steps;
  std::optional<real> lambda;
};

struct TrainOptions {
  /// "digits", "blobs", and "colorshapes" build the procedural datasets
  /// (seeded from the run seed); "none" reads the IDX pair from
  /// dataset_images/dataset_labels.
  std::string generator = "digits";
  std::size_t per_class = 150;
  std::string dataset_images, dataset_labels;
  std::string layers;  // architecture string; empty = the default CNN
  std::size_t epochs = 3;
  std::size_t batch_size = 32;
  real learning_rate = 0.05;
  real momentum = 0.9;
  real holdout_fraction = 0.1;
};

struct AttackOptions {
  attack::AttackConfig config;  // config.seed is overwritten by the run seed
  bool lambda_search = false;
  std::vector<real> lambda_candidates = attack::default_lambda_candidates();
};

struct EvalOptions {
  std::size_t samples = 0;  // 0 resolves to the family default (1000 2D, 100 3D)
  std::size_t montage_rows = 4;
  std::size_t montage_cols = 6;
  real lambda = 0.0;  // annotation copied into the report rows
};

struct RenderOptions {
  std::size_t count = 1;
  std::size_t width = 128;
  std::size_t height = 128;
};

/// One fully resolved run. Field relevance depends on the mode; parsing only
/// accepts keys belonging to the active mode.
struct RunConfig {
  Mode mode = Mode::kGradcheck;
  std::uint64_t seed = 1;
  std::string out;

  std::string model;                  // attack2d, attack3d, eval
  std::string input;                  // attack2d
  std::string original, adversarial;  // eval (images, or textures when mesh set)
  std::string mesh, texture;          // attack3d, render (mesh also: 3D eval)
  std::optional<std::size_t> target;  // attack2d, attack3d, eval
  std::set<std::size_t> true_classes;  // eval

  transforms2d::Dist2DConfig dist2d;
  renderer3d::Pose3DConfig pose;
  bool physical_enabled = false;
  renderer3d::PhysicalConfig physical;

  TrainOptions train;
  AttackOptions attack;
  EvalOptions eval;
  RenderOptions render;

  /// Checks mode requirements, value ranges (delegating to the module
  /// validators), and that every referenced input path exists.
  void validate() const;
};

/// Parses `key = value` configuration text ('#' comments, strict unknown-key
/// handling with suggestions, duplicate keys rejected), applies the flag
/// overrides, resolves defaults, and validates. The text's optional `mode`
/// key must agree with the given mode.
RunConfig parse_config_text(Mode mode, const std::string& text, const FlagOverrides& flags = {});

/// parse_config_text over a file; an empty path means flags only.
RunConfig parse_config(Mode mode, const std::string& config_path,
                       const FlagOverrides& flags = {});

/// Canonical echo of a resolved config: parseable by parse_config_text and
/// byte-stable, so every run's output directory documents how to repeat it.
std::string render_config(const RunConfig& config);

/// Dispatches the mode and writes all artifacts under config.out (including
/// the resolved config itself). Returns the process exit code: 0 on success;
/// gradcheck returns 1 when any primitive fails its check.
int run(const RunConfig& config);

}  // namespace eot::cli
