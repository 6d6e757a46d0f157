#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "eot/classifier.hpp"
#include "eot/renderer3d.hpp"
#include "eot/rng.hpp"
#include "eot/tensor.hpp"
#include "eot/transforms2d.hpp"
#include "eot/view.hpp"

namespace eot::attack {

/// Hyperparameters of the expectation-over-transformation attack. The batch
/// constants default to the standard schedule (40 transformations per step;
/// for texture attacks at most 80% of a batch carried over and at least 8
/// fresh poses). `reuse_fraction` and `min_new_per_batch` only affect the 3D
/// attack; the 2D attack samples every batch fresh.
struct AttackConfig {
  real lambda = 0.0;         // perceptual-penalty weight, >= 0
  std::size_t steps = 200;   // gradient-ascent steps
  real learning_rate = 0.01; // constant step size (texture attacks typically use 0.1)
  std::size_t batch_size = 40;
  real reuse_fraction = 0.8;
  std::size_t min_new_per_batch = 8;
  std::uint64_t seed = 1;
  /// Optional perturbation bound carried through to reports. It is NOT
  /// enforced during optimization (the penalty term replaces the hard
  /// constraint); results annotate the measured max |x' - x| against it.
  std::optional<real> epsilon_report;
  /// Held-out transformations used for the final evaluation; 0 selects the
  /// mode default (1000 for the 2D attack, 100 poses for the 3D attack).
  std::size_t holdout_samples = 0;

  void validate() const;
};

struct AttackResult {
  Tensor adversarial;                 // image or texture, in [0,1]
  std::vector<real> objective_trace;  // objective at each step, before the update
  /// Mean perceptual distance (LAB l2 for 3-channel data, intensity l2
  /// otherwise) between t(adversarial) and t(original) over the held-out
  /// transformations.
  real expected_lab_distance = 0.0;
  /// Fraction of held-out transformations classified as the target class.
  real holdout_adversariality = 0.0;
  std::size_t holdout_count = 0;
  real lambda = 0.0;  // penalty weight the attack ran with
  /// Set by lambda_search when no candidate reached the adversariality
  /// threshold and the result is the best-effort fallback.
  bool below_threshold = false;
  real max_abs_perturbation = 0.0;    // max |adversarial - original|
  std::optional<real> epsilon_report; // echoed from the config
};

/// Mean over the given views of log P(target | t(x')) - lambda * d(t(x'),
/// t(x)), together with its gradient with respect to x'. The distance d is
/// LAB l2 for 3-channel images and plain intensity l2 otherwise; when lambda
/// is exactly 0 the penalty branch is not built at all, so the computation
/// reduces to the plain expected log-probability.
std::pair<real, Tensor> eot_objective(const Tensor& x_prime, const Tensor& x,
                                      const std::vector<view::ViewTransform>& transforms,
                                      const classifier::Model& model, std::size_t target,
                                      real lambda);

/// Standard single-viewpoint targeted attack: gradient ascent on
/// log P(target | x') with projection (clamp to [0,1]) after every step. The
/// reference behaviour the EOT attack degenerates to under an identity-only
/// distribution. Holdout fields report the single-image outcome: the
/// indicator argmax == target and the plain perceptual distance to x.
AttackResult targeted_attack(const Tensor& x, std::size_t target, const classifier::Model& model,
                             const AttackConfig& cfg);

/// EOT attack over the 2D transformation distribution. The canvas is the
/// model's input plane; each step samples `batch_size` fresh draws, ascends
/// the objective, and clamps to [0,1]. Deterministic given cfg.seed.
AttackResult eot_attack_2d(const Tensor& x, std::size_t target,
                           const transforms2d::Dist2DConfig& dist, const classifier::Model& model,
                           const AttackConfig& cfg);

/// EOT texture attack: transformations are renders of the mesh under poses
/// drawn from `pose_dist` (plus photometric effects drawn from
/// `physical_dist` when given), batched with the reuse schedule. Rendered
/// image dimensions are the model's input plane.
AttackResult eot_attack_3d(const Tensor& texture, std::size_t target, const renderer3d::Mesh& mesh,
                           const renderer3d::Pose3DConfig& pose_dist,
                           const std::optional<renderer3d::PhysicalConfig>& physical_dist,
                           const classifier::Model& model, const AttackConfig& cfg);

/// Draws the next pose batch: carried-over entries first (chosen uniformly
/// without replacement from prev_batch, at most floor(reuse_fraction *
/// batch_size) and never squeezing out min_new fresh draws), then fresh poses
/// from the distribution. An empty prev_batch (the first step) yields an
/// all-fresh batch.
std::vector<renderer3d::Pose> pose_batch_schedule(const std::vector<renderer3d::Pose>& prev_batch,
                                                  RngStream& rng, std::size_t batch_size,
                                                  real reuse_fraction, std::size_t min_new,
                                                  const renderer3d::Pose3DConfig& dist);

/// Index plan underlying pose_batch_schedule, exposed so the texture attack
/// can carry compiled coordinate maps alongside the poses they belong to.
struct BatchPlan {
  std::vector<std::size_t> reuse;  // indices into the previous batch, in draw order
  std::size_t fresh = 0;           // number of new samples to draw
};
BatchPlan plan_pose_batch(std::size_t prev_size, RngStream& rng, std::size_t batch_size,
                          real reuse_fraction, std::size_t min_new);

/// Runs `run_attack` for ascending candidate values and returns the smallest
/// lambda whose held-out adversariality exceeds 0.90 (later candidates are
/// then skipped, which cannot change the outcome). If no candidate qualifies,
/// returns the highest-adversariality result flagged below_threshold.
std::pair<real, AttackResult> lambda_search(std::vector<real> candidates,
                                            const std::function<AttackResult(real)>& run_attack);

/// lambda_search over eot_attack_2d / eot_attack_3d. cfg.lambda is replaced
/// by each candidate; the held-out evaluation uses 100 samples unless the
/// config sets holdout_samples explicitly.
std::pair<real, AttackResult> lambda_search_2d(const Tensor& x, std::size_t target,
                                               const transforms2d::Dist2DConfig& dist,
                                               const classifier::Model& model,
                                               const AttackConfig& cfg,
                                               const std::vector<real>& candidates);
std::pair<real, AttackResult> lambda_search_3d(const Tensor& texture, std::size_t target,
                                               const renderer3d::Mesh& mesh,
                                               const renderer3d::Pose3DConfig& pose_dist,
                                               const std::optional<renderer3d::PhysicalConfig>& physical_dist,
                                               const classifier::Model& model,
                                               const AttackConfig& cfg,
                                               const std::vector<real>& candidates);

/// The four log-spaced penalty weights tried by default when no ladder is
/// configured.
std::vector<real> default_lambda_candidates();

}  // namespace eot::attack
