#include "eot/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>

#include "eot/errors.hpp"
#include "eot/graph.hpp"

namespace eot::attack {

namespace dm = diffmath;

namespace {

void check_unit_range(const Tensor& t, const char* what) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    const real v = t[i];
    if (!(v >= 0.0 && v <= 1.0)) {
      throw Error(std::string("attack: ") + what + " must lie in [0,1]; entry " +
                  std::to_string(i) + " is " + std::to_string(v));
    }
  }
}

void check_target(const classifier::Model& model, std::size_t target) {
  if (target >= model.arch.class_count) {
    throw Error("attack: target class " + std::to_string(target) +
                " is out of range for a " + std::to_string(model.arch.class_count) +
                "-class model");
  }
}

std::size_t argmax_lowest(const real* row, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

// x' <- clamp(x' + lr * grad, 0, 1): the projected ascent update shared by
// every attack mode.
void ascend_clamped(Tensor& x_prime, const Tensor& grad, real lr) {
  for (std::size_t i = 0; i < x_prime.size(); ++i) {
    x_prime[i] = std::clamp(x_prime[i] + lr * grad[i], 0.0, 1.0);
  }
}

[[noreturn]] void fail_non_finite(const char* mode, std::size_t step, const std::string& detail) {
  throw Error(std::string(mode) + ": non-finite objective at step " + std::to_string(step) +
              (detail.empty() ? "" : " (" + detail + ")") + "; try a lower learning rate");
}

real max_abs_difference(const Tensor& a, const Tensor& b) {
  real m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Final evaluation against fresh, never-trained-on transformations:
// adversariality (fraction of views classified as the target) and the mean
// perceptual distance between the transformed adversarial and original
// inputs. Views share their sampled parameters (including frozen noise)
// across the two applications.
void evaluate_holdout(AttackResult& result, const Tensor& x_prime, const Tensor& x,
                      const classifier::Model& model, std::size_t target, std::size_t n,
                      const std::function<view::ViewTransform(RngStream&)>& sample_view,
                      RngStream& stream) {
  result.holdout_count = n;
  if (n == 0) return;
  const Shape& in = model.arch.input_shape;
  Shape batch_shape{n};
  batch_shape.insert(batch_shape.end(), in.begin(), in.end());
  Tensor batch(batch_shape);
  const std::size_t stride = numel(in);
  real distance_sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const view::ViewTransform view = sample_view(stream);
    const Tensor warped_adv = view.apply(x_prime);
    const Tensor warped_orig = view.apply(x);
    distance_sum += transforms2d::image_distance(warped_adv, warped_orig);
    std::memcpy(batch.data() + k * stride, warped_adv.data(), stride * sizeof(real));
  }
  const Tensor logp = model.log_probs_batch(batch);
  const std::size_t classes = model.arch.class_count;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (argmax_lowest(logp.data() + k * classes, classes) == target) ++hits;
  }
  result.holdout_adversariality = static_cast<real>(hits) / static_cast<real>(n);
  result.expected_lab_distance = distance_sum / static_cast<real>(n);
}

// The shared optimization loop: per step draw a batch of views, evaluate the
// EOT objective and its gradient, ascend, clamp. `mode` names the caller in
// diagnostics.
AttackResult run_eot_ascent(const char* mode, const Tensor& x, std::size_t target,
                            const classifier::Model& model, const AttackConfig& cfg,
                            const std::function<std::vector<view::ViewTransform>(std::size_t)>& next_batch,
                            const std::function<view::ViewTransform(RngStream&)>& sample_holdout_view,
                            RngStream holdout_stream, std::size_t default_holdout) {
  AttackResult result;
  result.lambda = cfg.lambda;
  result.epsilon_report = cfg.epsilon_report;
  result.adversarial = x;
  result.objective_trace.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const std::vector<view::ViewTransform> views = next_batch(step);
    real value = 0.0;
    Tensor grad;
    try {
      std::tie(value, grad) = eot_objective(result.adversarial, x, views, model, target,
                                            cfg.lambda);
    } catch (const Error& err) {
      if (std::string(err.what()).find("non-finite") != std::string::npos) {
        fail_non_finite(mode, step, err.what());
      }
      throw;
    }
    if (!std::isfinite(value)) fail_non_finite(mode, step, "");
    result.objective_trace.push_back(value);
    ascend_clamped(result.adversarial, grad, cfg.learning_rate);
  }
  const std::size_t n = cfg.holdout_samples != 0 ? cfg.holdout_samples : default_holdout;
  evaluate_holdout(result, result.adversarial, x, model, target, n, sample_holdout_view,
                   holdout_stream);
  result.max_abs_perturbation = max_abs_difference(result.adversarial, x);
  return result;
}

}  // namespace

void AttackConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw Error("attack config: lambda must be finite and >= 0");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw Error("attack config: learning_rate must be finite and > 0");
  }
  if (batch_size == 0) throw Error("attack config: batch_size must be at least 1");
  if (batch_size < min_new_per_batch) {
    throw Error("attack config: batch_size (" + std::to_string(batch_size) +
                ") must be at least min_new_per_batch (" + std::to_string(min_new_per_batch) +
                ")");
  }
  if (!(reuse_fraction >= 0.0 && reuse_fraction <= 1.0)) {
    throw Error("attack config: reuse_fraction must lie in [0,1]");
  }
  if (epsilon_report && !(*epsilon_report >= 0.0 && std::isfinite(*epsilon_report))) {
    throw Error("attack config: epsilon_report must be finite and >= 0");
  }
}

std::pair<real, Tensor> eot_objective(const Tensor& x_prime, const Tensor& x,
                                      const std::vector<view::ViewTransform>& transforms,
                                      const classifier::Model& model, std::size_t target,
                                      real lambda) {
  if (transforms.empty()) throw Error("eot_objective: transform list must be nonempty");
  if (x_prime.shape() != x.shape()) {
    throw Error("eot_objective: x' shape " + shape_to_string(x_prime.shape()) +
                " does not match x shape " + shape_to_string(x.shape()));
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw Error("eot_objective: lambda must be finite and >= 0");
  }
  check_target(model, target);
  check_unit_range(x_prime, "x'");
  check_unit_range(x, "x");
  for (const view::ViewTransform& t : transforms) {
    if (t.out_shape() != model.arch.input_shape) {
      throw Error("eot_objective: transform output shape " + shape_to_string(t.out_shape()) +
                  " does not match the model input shape " +
                  shape_to_string(model.arch.input_shape));
    }
  }
  const std::size_t n = transforms.size();
  const std::size_t classes = model.arch.class_count;
  const bool color = model.arch.input_shape.back() == 3;

  dm::Graph graph;
  const dm::NodeRef xp = graph.input("x_prime", x_prime.shape());
  std::vector<dm::NodeRef> warped;
  warped.reserve(n);
  for (const view::ViewTransform& t : transforms) warped.push_back(t.append(graph, xp));
  const dm::NodeRef batch = graph.stack(warped);
  const dm::NodeRef logp = classifier::append_forward_frozen(graph, model, batch);
  std::vector<std::size_t> picked_idx;
  picked_idx.reserve(n);
  for (std::size_t i = 0; i < n; ++i) picked_idx.push_back(i * classes + target);
  const dm::NodeRef picked = graph.gather(logp, picked_idx);
  dm::NodeRef objective_vec = picked;
  // lambda == 0 skips the penalty entirely: the graph (and hence the
  // trajectory) is exactly the plain expected-log-probability ascent.
  if (lambda != 0.0) {
    std::vector<dm::NodeRef> penalties;
    penalties.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor t_x = transforms[i].apply(x);
      dm::NodeRef diff;
      if (color) {
        diff = graph.sub(graph.rgb_to_lab(warped[i]),
                         graph.constant(transforms2d::rgb_to_lab_image(t_x), "lab(t(x))"));
      } else {
        diff = graph.sub(warped[i], graph.constant(t_x, "t(x)"));
      }
      penalties.push_back(graph.power(graph.reduce_sum(graph.mul(diff, diff)), 0.5));
    }
    objective_vec = graph.sub(picked, graph.scale(graph.stack(penalties), lambda));
  }
  graph.set_output("objective", graph.reduce_mean(objective_vec));

  const dm::ValueAndGradient vg =
      dm::value_and_gradient(graph, {{"x_prime", x_prime}}, "x_prime", "objective");
  return {vg.outputs.at("objective").item(), vg.grad};
}

AttackResult targeted_attack(const Tensor& x, std::size_t target, const classifier::Model& model,
                             const AttackConfig& cfg) {
  model.validate();
  cfg.validate();
  check_target(model, target);
  check_unit_range(x, "x");
  if (x.shape() != model.arch.input_shape) {
    throw Error("targeted_attack: image shape " + shape_to_string(x.shape()) +
                " does not match the model input shape " +
                shape_to_string(model.arch.input_shape));
  }

  dm::Graph graph;
  const dm::NodeRef xp = graph.input("x_prime", x.shape());
  Shape batched{1};
  batched.insert(batched.end(), x.shape().begin(), x.shape().end());
  const dm::NodeRef logp =
      classifier::append_forward_frozen(graph, model, graph.reshape(xp, batched));
  graph.set_output("objective", graph.reduce_mean(graph.gather(logp, {target})));

  AttackResult result;
  result.lambda = cfg.lambda;
  result.epsilon_report = cfg.epsilon_report;
  result.adversarial = x;
  result.objective_trace.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    dm::ValueAndGradient vg;
    try {
      vg = dm::value_and_gradient(graph, {{"x_prime", result.adversarial}}, "x_prime",
                                  "objective");
    } catch (const Error& err) {
      if (std::string(err.what()).find("non-finite") != std::string::npos) {
        fail_non_finite("targeted_attack", step, err.what());
      }
      throw;
    }
    const real value = vg.outputs.at("objective").item();
    if (!std::isfinite(value)) fail_non_finite("targeted_attack", step, "");
    result.objective_trace.push_back(value);
    ascend_clamped(result.adversarial, vg.grad, cfg.learning_rate);
  }
  const Tensor final_logp = model.log_probs(result.adversarial);
  result.holdout_count = 1;
  result.holdout_adversariality =
      argmax_lowest(final_logp.data(), model.arch.class_count) == target ? 1.0 : 0.0;
  result.expected_lab_distance = transforms2d::image_distance(result.adversarial, x);
  result.max_abs_perturbation = max_abs_difference(result.adversarial, x);
  return result;
}

AttackResult eot_attack_2d(const Tensor& x, std::size_t target,
                           const transforms2d::Dist2DConfig& dist, const classifier::Model& model,
                           const AttackConfig& cfg) {
  model.validate();
  cfg.validate();
  dist.validate();
  check_target(model, target);
  check_unit_range(x, "x");
  if (x.rank() != 3) {
    throw Error("eot_attack_2d: image must be [H,W,C], got " + shape_to_string(x.shape()));
  }
  if (x.shape().back() != model.arch.input_shape.back()) {
    throw Error("eot_attack_2d: image channels " + std::to_string(x.shape().back()) +
                " do not match the model input channels " +
                std::to_string(model.arch.input_shape.back()));
  }
  const std::size_t canvas_h = model.arch.input_shape[0];
  const std::size_t canvas_w = model.arch.input_shape[1];

  RngStream root(cfg.seed);
  RngStream transform_stream = root.fork("transforms");
  const auto sample_view = [&](RngStream& rng) {
    const transforms2d::TransformParams2D params =
        transforms2d::sample_params_2d(dist, rng, x.shape(), canvas_h, canvas_w);
    return transforms2d::compile_transform_2d(params, x.shape(), canvas_h, canvas_w);
  };
  const auto next_batch = [&](std::size_t) {
    std::vector<view::ViewTransform> views;
    views.reserve(cfg.batch_size);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) views.push_back(sample_view(transform_stream));
    return views;
  };
  return run_eot_ascent("eot_attack_2d", x, target, model, cfg, next_batch, sample_view,
                        root.fork("holdout"), 1000);
}

AttackResult eot_attack_3d(const Tensor& texture, std::size_t target, const renderer3d::Mesh& mesh,
                           const renderer3d::Pose3DConfig& pose_dist,
                           const std::optional<renderer3d::PhysicalConfig>& physical_dist,
                           const classifier::Model& model, const AttackConfig& cfg) {
  model.validate();
  cfg.validate();
  mesh.validate();
  pose_dist.validate();
  if (physical_dist) physical_dist->validate();
  check_target(model, target);
  check_unit_range(texture, "texture");
  if (texture.rank() != 3 || texture.shape().back() != 3) {
    throw Error("eot_attack_3d: texture must be [H,W,3], got " + shape_to_string(texture.shape()));
  }
  if (model.arch.input_shape.size() != 3 || model.arch.input_shape.back() != 3) {
    throw Error("eot_attack_3d: the model must take [H,W,3] renders, got input shape " +
                shape_to_string(model.arch.input_shape));
  }
  const std::size_t tex_h = texture.shape()[0];
  const std::size_t tex_w = texture.shape()[1];
  const std::size_t img_h = model.arch.input_shape[0];
  const std::size_t img_w = model.arch.input_shape[1];

  struct SampledView {
    renderer3d::Pose pose;
    renderer3d::PhysicalParams physical;
    view::ViewTransform view;
  };
  RngStream root(cfg.seed);
  RngStream pose_stream = root.fork("poses");
  const auto sample_entry = [&](RngStream& rng) {
    SampledView entry;
    entry.pose = renderer3d::sample_pose(pose_dist, rng);
    if (physical_dist) entry.physical = renderer3d::sample_physical(*physical_dist, rng);
    const renderer3d::CoordinateMap map =
        renderer3d::build_coordinate_map(mesh, entry.pose, tex_h, tex_w, img_h, img_w);
    entry.view = renderer3d::compile_view_3d(map, entry.physical);
    return entry;
  };
  // Carried-over entries keep their compiled coordinate maps; only fresh
  // poses pay for rasterization.
  std::vector<SampledView> batch;
  const auto next_batch = [&](std::size_t) {
    const BatchPlan plan = plan_pose_batch(batch.size(), pose_stream, cfg.batch_size,
                                           cfg.reuse_fraction, cfg.min_new_per_batch);
    std::vector<SampledView> next;
    next.reserve(plan.reuse.size() + plan.fresh);
    for (const std::size_t idx : plan.reuse) next.push_back(batch[idx]);
    for (std::size_t k = 0; k < plan.fresh; ++k) next.push_back(sample_entry(pose_stream));
    batch = std::move(next);
    std::vector<view::ViewTransform> views;
    views.reserve(batch.size());
    for (const SampledView& entry : batch) views.push_back(entry.view);
    return views;
  };
  const auto sample_holdout_view = [&](RngStream& rng) { return sample_entry(rng).view; };
  return run_eot_ascent("eot_attack_3d", texture, target, model, cfg, next_batch,
                        sample_holdout_view, root.fork("holdout"), 100);
}

BatchPlan plan_pose_batch(std::size_t prev_size, RngStream& rng, std::size_t batch_size,
                          real reuse_fraction, std::size_t min_new) {
  if (batch_size == 0) throw Error("pose_batch_schedule: batch_size must be at least 1");
  if (batch_size < min_new) {
    throw Error("pose_batch_schedule: batch_size (" + std::to_string(batch_size) +
                ") must be at least min_new (" + std::to_string(min_new) + ")");
  }
  if (!(reuse_fraction >= 0.0 && reuse_fraction <= 1.0)) {
    throw Error("pose_batch_schedule: reuse_fraction must lie in [0,1]");
  }
  const auto cap = static_cast<std::size_t>(
      std::floor(reuse_fraction * static_cast<real>(batch_size) + 1e-9));
  const std::size_t reused = std::min({cap, batch_size - min_new, prev_size});
  BatchPlan plan;
  plan.fresh = batch_size - reused;
  plan.reuse.reserve(reused);
  // Uniform selection without replacement (partial Fisher-Yates).
  std::vector<std::size_t> pool(prev_size);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t k = 0; k < reused; ++k) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(static_cast<int>(k), static_cast<int>(prev_size - 1)));
    std::swap(pool[k], pool[j]);
    plan.reuse.push_back(pool[k]);
  }
  return plan;
}

std::vector<renderer3d::Pose> pose_batch_schedule(const std::vector<renderer3d::Pose>& prev_batch,
                                                  RngStream& rng, std::size_t batch_size,
                                                  real reuse_fraction, std::size_t min_new,
                                                  const renderer3d::Pose3DConfig& dist) {
  const BatchPlan plan = plan_pose_batch(prev_batch.size(), rng, batch_size, reuse_fraction,
                                         min_new);
  std::vector<renderer3d::Pose> next;
  next.reserve(plan.reuse.size() + plan.fresh);
  for (const std::size_t idx : plan.reuse) next.push_back(prev_batch[idx]);
  for (std::size_t k = 0; k < plan.fresh; ++k) next.push_back(renderer3d::sample_pose(dist, rng));
  return next;
}

std::pair<real, AttackResult> lambda_search(std::vector<real> candidates,
                                            const std::function<AttackResult(real)>& run_attack) {
  if (candidates.empty()) throw Error("lambda_search: candidate list must be nonempty");
  for (const real c : candidates) {
    if (!(c >= 0.0) || !std::isfinite(c)) {
      throw Error("lambda_search: candidates must be finite and >= 0");
    }
  }
  std::sort(candidates.begin(), candidates.end());
  AttackResult best;
  real best_lambda = 0.0;
  bool have_best = false;
  for (const real lambda : candidates) {
    AttackResult result = run_attack(lambda);
    result.lambda = lambda;
    if (result.holdout_adversariality > 0.90) return {lambda, std::move(result)};
    if (!have_best || result.holdout_adversariality > best.holdout_adversariality) {
      best = std::move(result);
      best_lambda = lambda;
      have_best = true;
    }
  }
  best.below_threshold = true;
  return {best_lambda, std::move(best)};
}

namespace {

AttackConfig holdout_default_100(const AttackConfig& cfg) {
  AttackConfig out = cfg;
  if (out.holdout_samples == 0) out.holdout_samples = 100;
  return out;
}

}  // namespace

std::pair<real, AttackResult> lambda_search_2d(const Tensor& x, std::size_t target,
                                               const transforms2d::Dist2DConfig& dist,
                                               const classifier::Model& model,
                                               const AttackConfig& cfg,
                                               const std::vector<real>& candidates) {
  const AttackConfig base = holdout_default_100(cfg);
  return lambda_search(candidates, [&](real lambda) {
    AttackConfig run = base;
    run.lambda = lambda;
    return eot_attack_2d(x, target, dist, model, run);
  });
}

std::pair<real, AttackResult> lambda_search_3d(const Tensor& texture, std::size_t target,
                                               const renderer3d::Mesh& mesh,
                                               const renderer3d::Pose3DConfig& pose_dist,
                                               const std::optional<renderer3d::PhysicalConfig>& physical_dist,
                                               const classifier::Model& model,
                                               const AttackConfig& cfg,
                                               const std::vector<real>& candidates) {
  const AttackConfig base = holdout_default_100(cfg);
  return lambda_search(candidates, [&](real lambda) {
    AttackConfig run = base;
    run.lambda = lambda;
    return eot_attack_3d(texture, target, mesh, pose_dist, physical_dist, model, run);
  });
}

std::vector<real> default_lambda_candidates() { return {0.01, 0.05, 0.25, 1.25}; }

}  // namespace eot::attack
