// eotlab: synthesize and evaluate adversarial examples that stay adversarial
// over distributions of 2D transformations and 3D renderings.
#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "eot/cli.hpp"
#include "eot/errors.hpp"

namespace {

struct SubcommandFlags {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::string model;
  std::size_t steps = 0;
  double lambda = 0.0;
};

// Attaches the shared flag set to one subcommand; `sub->count()` later tells
// which ones were actually given so unset flags never mask config values.
void attach_flags(CLI::App* sub, SubcommandFlags& flags, bool has_model, bool has_attack_flags,
                  bool has_lambda) {
  sub->add_option("--config", flags.config, "Path to a key = value configuration file");
  sub->add_option("--seed", flags.seed, "Master seed for this run (overrides the config)");
  sub->add_option("--out", flags.out, "Output directory (overrides the config)");
  if (has_model) {
    sub->add_option("--model", flags.model, "Classifier file (overrides the config)");
  }
  if (has_attack_flags) {
    sub->add_option("--steps", flags.steps, "Optimization steps (overrides the config)");
  }
  if (has_lambda) {
    sub->add_option("--lambda", flags.lambda, "Perceptual penalty weight (overrides the config)");
  }
}

eot::cli::FlagOverrides collect_overrides(const CLI::App* sub, const SubcommandFlags& flags) {
  eot::cli::FlagOverrides o;
  if (sub->count("--seed") > 0) o.seed = flags.seed;
  if (sub->count("--out") > 0) o.out = flags.out;
  if (sub->get_option_no_throw("--model") != nullptr && sub->count("--model") > 0) {
    o.model = flags.model;
  }
  if (sub->get_option_no_throw("--steps") != nullptr && sub->count("--steps") > 0) {
    o.steps = flags.steps;
  }
  if (sub->get_option_no_throw("--lambda") != nullptr && sub->count("--lambda") > 0) {
    o.lambda = flags.lambda;
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"eotlab: robust adversarial examples over transformation distributions"};
  app.require_subcommand(1);

  struct ModeSpec {
    const char* name;
    const char* help;
    bool has_model, has_attack_flags, has_lambda;
  };
  const ModeSpec specs[] = {
      {"train", "Train a classifier", false, false, false},
      {"attack2d", "Synthesize a robust adversarial image", true, true, true},
      {"attack3d", "Synthesize a robust adversarial texture", true, true, true},
      {"eval", "Measure robustness of stored examples", true, false, true},
      {"render", "Render sampled views of a textured mesh", false, false, false},
      {"gradcheck", "Finite-difference check of every gradient primitive", false, false, false},
  };

  SubcommandFlags flags[6];
  CLI::App* subs[6];
  for (int i = 0; i < 6; ++i) {
    subs[i] = app.add_subcommand(specs[i].name, specs[i].help);
    attach_flags(subs[i], flags[i], specs[i].has_model, specs[i].has_attack_flags,
                 specs[i].has_lambda);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    for (int i = 0; i < 6; ++i) {
      if (subs[i]->parsed()) {
        const eot::cli::Mode mode = eot::cli::parse_mode(specs[i].name);
        const eot::cli::RunConfig config =
            eot::cli::parse_config(mode, flags[i].config, collect_overrides(subs[i], flags[i]));
        return eot::cli::run(config);
      }
    }
    std::fputs("eotlab: no subcommand given\n", stderr);
    return 1;
  } catch (const eot::Error& e) {
    std::fprintf(stderr, "eotlab: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "eotlab: unexpected error: %s\n", e.what());
    return 1;
  }
}
