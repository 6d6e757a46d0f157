#include "eot/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <utility>

#include <json.hpp>

#include "eot/classifier.hpp"
#include "eot/dataset.hpp"
#include "eot/errors.hpp"
#include "eot/eval.hpp"
#include "eot/graph.hpp"
#include "eot/image_io.hpp"
#include "eot/rng.hpp"
#include "eot/textfmt.hpp"

namespace eot::cli {

namespace fs = std::filesystem;
using textfmt::format_real;

namespace {

// --- low-level text helpers ---------------------------------------------

std::string trim(const std::string& s) {
  const std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// A '#' at the start of a line or preceded by whitespace begins a comment.
std::string strip_comment(const std::string& line) {
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '#' && (i == 0 || line[i - 1] == ' ' || line[i - 1] == '\t')) {
      return line.substr(0, i);
    }
  }
  return line;
}

std::size_t levenshtein(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// --- typed value parsers (all errors carry the offending key) -------------

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
  throw Error("config key '" + key + "': '" + value + "' is not " + expected);
}

real parse_real(const std::string& key, const std::string& value) {
  real out = 0.0;
  const char* begin = value.data();
  const char* end = begin + value.size();
  const std::from_chars_result res = std::from_chars(begin, end, out);
  if (res.ec != std::errc() || res.ptr != end) bad_value(key, value, "a number");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const char* begin = value.data();
  const char* end = begin + value.size();
  const std::from_chars_result res = std::from_chars(begin, end, out);
  if (res.ec != std::errc() || res.ptr != end) bad_value(key, value, "a nonnegative integer");
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  return static_cast<std::size_t>(parse_u64(key, value));
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  bad_value(key, value, "'true' or 'false'");
}

std::vector<std::string> split_list(const std::string& key, const std::string& value) {
  if (value.size() < 2 || value.front() != '[' || value.back() != ']') {
    bad_value(key, value, "a bracketed list like [0.9, 1.4]");
  }
  std::vector<std::string> items;
  std::string inner = value.substr(1, value.size() - 2);
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = inner.find(',', start);
    items.push_back(trim(inner.substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return items;
}

std::pair<real, real> parse_range(const std::string& key, const std::string& value) {
  const std::vector<std::string> items = split_list(key, value);
  if (items.size() != 2) bad_value(key, value, "a two-element range like [0.9, 1.4]");
  const real lo = parse_real(key, items[0]);
  const real hi = parse_real(key, items[1]);
  if (lo > hi) {
    throw Error("range violation for config key '" + key + "': minimum " + format_real(lo) +
                " exceeds maximum " + format_real(hi));
  }
  return {lo, hi};
}

std::vector<real> parse_real_list(const std::string& key, const std::string& value) {
  const std::vector<std::string> items = split_list(key, value);
  std::vector<real> out;
  out.reserve(items.size());
  for (const std::string& item : items) out.push_back(parse_real(key, item));
  return out;
}

std::set<std::size_t> parse_class_set(const std::string& key, const std::string& value) {
  std::set<std::size_t> out;
  if (!value.empty() && value.front() == '[') {
    for (const std::string& item : split_list(key, value)) {
      out.insert(parse_size(key, item));
    }
  } else {
    out.insert(parse_size(key, value));
  }
  return out;
}

// --- per-mode key tables ---------------------------------------------------

using Handler = std::function<void(RunConfig&, const std::string&, const std::string&)>;
using Table = std::map<std::string, Handler>;

void add_common(Table& t) {
  t["seed"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.seed = parse_u64(k, v);
  };
  t["out"] = [](RunConfig& c, const std::string&, const std::string& v) { c.out = v; };
}

void add_dist2d(Table& t) {
  t["scale"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    std::tie(c.dist2d.scale_min, c.dist2d.scale_max) = parse_range(k, v);
  };
  t["rotation"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    std::tie(c.dist2d.rotation_min_deg, c.dist2d.rotation_max_deg) = parse_range(k, v);
  };
  t["brightness"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    std::tie(c.dist2d.brightness_min, c.dist2d.brightness_max) = parse_range(k, v);
  };
  t["noise"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    std::tie(c.dist2d.noise_stdev_min, c.dist2d.noise_stdev_max) = parse_range(k, v);
  };
  t["translation"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    if (v == "any") {
      c.dist2d.translation_any_in_bounds = true;
    } else {
      c.dist2d.translation_any_in_bounds = false;
      std::tie(c.dist2d.translation_min_px, c.dist2d.translation_max_px) = parse_range(k, v);
    }
  };
}

void add_pose(Table& t) {
  t["distance"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    std::tie(c.pose.min_distance, c.pose.max_distance) = parse_range(k, v);
  };
  t["translation"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    std::tie(c.pose.min_translation, c.pose.max_translation) = parse_range(k, v);
  };
  t["background"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    std::tie(c.pose.min_background, c.pose.max_background) = parse_range(k, v);
  };
  t["rotation"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    if (v == "any") {
      c.pose.randomize_rotation = true;
    } else if (v == "none") {
      c.pose.randomize_rotation = false;
    } else {
      bad_value(k, v, "'any' or 'none'");
    }
  };
}

void add_physical(Table& t) {
  t["physical"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.physical_enabled = parse_bool(k, v);
  };
  t["additive"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    std::tie(c.physical.min_additive, c.physical.max_additive) = parse_range(k, v);
  };
  t["multiplicative"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    std::tie(c.physical.min_multiplicative, c.physical.max_multiplicative) = parse_range(k, v);
  };
  t["channel_add"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    std::tie(c.physical.min_channel_add, c.physical.max_channel_add) = parse_range(k, v);
  };
  t["channel_mul"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    std::tie(c.physical.min_channel_mul, c.physical.max_channel_mul) = parse_range(k, v);
  };
  t["noise"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    std::tie(c.physical.min_noise_stdev, c.physical.max_noise_stdev) = parse_range(k, v);
  };
}

void add_attack(Table& t) {
  t["lambda"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.attack.config.lambda = parse_real(k, v);
  };
  t["steps"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.attack.config.steps = parse_size(k, v);
  };
  t["learning_rate"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.attack.config.learning_rate = parse_real(k, v);
  };
  t["batch_size"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.attack.config.batch_size = parse_size(k, v);
  };
  t["reuse_fraction"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.attack.config.reuse_fraction = parse_real(k, v);
  };
  t["min_new_per_batch"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.attack.config.min_new_per_batch = parse_size(k, v);
  };
  t["holdout"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.attack.config.holdout_samples = parse_size(k, v);
  };
  t["epsilon_report"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.attack.config.epsilon_report = parse_real(k, v);
  };
  t["lambda_search"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.attack.lambda_search = parse_bool(k, v);
  };
  t["lambda_candidates"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.attack.lambda_candidates = parse_real_list(k, v);
  };
}

void add_train(Table& t) {
  t["generator"] = [](RunConfig& c, const std::string&, const std::string& v) {
    c.train.generator = v;
  };
  t["per_class"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.train.per_class = parse_size(k, v);
  };
  t["dataset_images"] = [](RunConfig& c, const std::string&, const std::string& v) {
    c.train.dataset_images = v;
  };
  t["dataset_labels"] = [](RunConfig& c, const std::string&, const std::string& v) {
    c.train.dataset_labels = v;
  };
  t["layers"] = [](RunConfig& c, const std::string&, const std::string& v) {
    c.train.layers = v;
  };
  t["epochs"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.train.epochs = parse_size(k, v);
  };
  t["batch_size"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.train.batch_size = parse_size(k, v);
  };
  t["learning_rate"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.train.learning_rate = parse_real(k, v);
  };
  t["momentum"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.train.momentum = parse_real(k, v);
  };
  t["holdout_fraction"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.train.holdout_fraction = parse_real(k, v);
  };
}

void add_path(Table& t, const char* key, std::string RunConfig::*field) {
  t[key] = [field](RunConfig& c, const std::string&, const std::string& v) { c.*field = v; };
}

void add_target(Table& t) {
  t["target"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.target = parse_size(k, v);
  };
}

void add_eval(Table& t) {
  add_path(t, "model", &RunConfig::model);
  add_path(t, "original", &RunConfig::original);
  add_path(t, "adversarial", &RunConfig::adversarial);
  add_path(t, "mesh", &RunConfig::mesh);
  add_target(t);
  t["true_classes"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.true_classes = parse_class_set(k, v);
  };
  t["samples"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.eval.samples = parse_size(k, v);
  };
  t["montage_rows"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.eval.montage_rows = parse_size(k, v);
  };
  t["montage_cols"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.eval.montage_cols = parse_size(k, v);
  };
  t["lambda"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.eval.lambda = parse_real(k, v);
  };
}

void add_render(Table& t) {
  add_path(t, "mesh", &RunConfig::mesh);
  add_path(t, "texture", &RunConfig::texture);
  t["count"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.render.count = parse_size(k, v);
  };
  t["width"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.render.width = parse_size(k, v);
  };
  t["height"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.render.height = parse_size(k, v);
  };
}

// The 2D and 3D families reuse the appendix table names ("rotation",
// "translation", "noise"), so eval builds its table only after the presence
// of a mesh has settled which family the run evaluates.
Table key_table(Mode mode, bool eval_has_mesh) {
  Table t;
  add_common(t);
  switch (mode) {
    case Mode::kTrain:
      add_train(t);
      break;
    case Mode::kAttack2D:
      add_path(t, "model", &RunConfig::model);
      add_path(t, "input", &RunConfig::input);
      add_target(t);
      add_dist2d(t);
      add_attack(t);
      break;
    case Mode::kAttack3D:
      add_path(t, "model", &RunConfig::model);
      add_path(t, "texture", &RunConfig::texture);
      add_path(t, "mesh", &RunConfig::mesh);
      add_target(t);
      add_pose(t);
      add_physical(t);
      add_attack(t);
      break;
    case Mode::kEval:
      add_eval(t);
      if (eval_has_mesh) {
        add_pose(t);
        add_physical(t);
      } else {
        add_dist2d(t);
      }
      break;
    case Mode::kRender:
      add_render(t);
      add_pose(t);
      add_physical(t);
      break;
    case Mode::kGradcheck:
      break;
  }
  return t;
}

const std::vector<Mode>& all_modes() {
  static const std::vector<Mode> modes = {Mode::kTrain,  Mode::kAttack2D, Mode::kAttack3D,
                                          Mode::kEval,   Mode::kRender,   Mode::kGradcheck};
  return modes;
}

// Every key any mode accepts, for "wrong mode" diagnostics.
const std::set<std::string>& all_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> out{"mode"};
    for (const Mode m : all_modes()) {
      for (const bool has_mesh : {false, true}) {
        for (const auto& [key, handler] : key_table(m, has_mesh)) {
          (void)handler;
          out.insert(key);
        }
      }
    }
    return out;
  }();
  return keys;
}

[[noreturn]] void fail_unknown_key(const std::string& key, Mode mode, const Table& table) {
  if (all_keys().count(key) != 0) {
    throw Error("config key '" + key + "' does not apply to mode '" + mode_name(mode) + "'");
  }
  std::string best;
  std::size_t best_dist = std::string::npos;
  for (const auto& [candidate, handler] : table) {
    (void)handler;
    const std::size_t d = levenshtein(key, candidate);
    if (d < best_dist) {
      best_dist = d;
      best = candidate;
    }
  }
  std::string message = "unknown configuration key '" + key + "'";
  if (!best.empty() && best_dist <= 2) message += "; did you mean '" + best + "'?";
  throw Error(message);
}

struct KeyValue {
  std::string key, value;
  std::size_t line = 0;
};

std::vector<KeyValue> collect_pairs(const std::string& text) {
  std::vector<KeyValue> pairs;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = text.find('\n', pos);
    const std::string raw =
        text.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos);
    pos = eol == std::string::npos ? text.size() + 1 : eol + 1;
    ++line_no;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error("config line " + std::to_string(line_no) + ": expected 'key = value', got '" +
                  line + "'");
    }
    KeyValue kv;
    kv.key = trim(line.substr(0, eq));
    kv.value = trim(line.substr(eq + 1));
    kv.line = line_no;
    if (kv.key.empty() || kv.value.empty()) {
      throw Error("config line " + std::to_string(line_no) +
                  ": expected 'key = value', got '" + line + "'");
    }
    for (const KeyValue& seen : pairs) {
      if (seen.key == kv.key) {
        throw Error("duplicate configuration key '" + kv.key + "' (lines " +
                    std::to_string(seen.line) + " and " + std::to_string(kv.line) + ")");
      }
    }
    pairs.push_back(std::move(kv));
  }
  return pairs;
}

void require_key(bool present, const char* key, Mode mode) {
  if (!present) {
    throw Error("missing required key '" + std::string(key) + "' for mode '" + mode_name(mode) +
                "'");
  }
}

void check_path_exists(const std::string& path, const char* key) {
  if (!fs::exists(fs::path(path))) {
    throw Error("referenced path '" + path + "' (key '" + std::string(key) +
                "') does not exist");
  }
}

void check_positive(std::size_t v, const char* key) {
  if (v == 0) throw Error(std::string("config key '") + key + "' must be at least 1");
}

// --- canonical echo --------------------------------------------------------

std::string range_str(real lo, real hi) {
  return "[" + format_real(lo) + ", " + format_real(hi) + "]";
}

void emit(std::string& s, const char* key, const std::string& value) {
  s += key;
  s += " = ";
  s += value;
  s += '\n';
}

void emit_dist2d(std::string& s, const transforms2d::Dist2DConfig& d) {
  emit(s, "scale", range_str(d.scale_min, d.scale_max));
  emit(s, "rotation", range_str(d.rotation_min_deg, d.rotation_max_deg));
  emit(s, "brightness", range_str(d.brightness_min, d.brightness_max));
  emit(s, "noise", range_str(d.noise_stdev_min, d.noise_stdev_max));
  emit(s, "translation",
       d.translation_any_in_bounds ? "any"
                                   : range_str(d.translation_min_px, d.translation_max_px));
}

void emit_pose(std::string& s, const renderer3d::Pose3DConfig& p) {
  emit(s, "distance", range_str(p.min_distance, p.max_distance));
  emit(s, "translation", range_str(p.min_translation, p.max_translation));
  emit(s, "background", range_str(p.min_background, p.max_background));
  emit(s, "rotation", p.randomize_rotation ? "any" : "none");
}

void emit_physical(std::string& s, const RunConfig& c) {
  emit(s, "physical", c.physical_enabled ? "true" : "false");
  if (c.physical_enabled) {
    emit(s, "additive", range_str(c.physical.min_additive, c.physical.max_additive));
    emit(s, "multiplicative",
         range_str(c.physical.min_multiplicative, c.physical.max_multiplicative));
    emit(s, "channel_add", range_str(c.physical.min_channel_add, c.physical.max_channel_add));
    emit(s, "channel_mul", range_str(c.physical.min_channel_mul, c.physical.max_channel_mul));
    emit(s, "noise", range_str(c.physical.min_noise_stdev, c.physical.max_noise_stdev));
  }
}

void emit_attack(std::string& s, const AttackOptions& a) {
  emit(s, "lambda", format_real(a.config.lambda));
  emit(s, "steps", std::to_string(a.config.steps));
  emit(s, "learning_rate", format_real(a.config.learning_rate));
  emit(s, "batch_size", std::to_string(a.config.batch_size));
  emit(s, "reuse_fraction", format_real(a.config.reuse_fraction));
  emit(s, "min_new_per_batch", std::to_string(a.config.min_new_per_batch));
  emit(s, "holdout", std::to_string(a.config.holdout_samples));
  if (a.config.epsilon_report) emit(s, "epsilon_report", format_real(*a.config.epsilon_report));
  emit(s, "lambda_search", a.lambda_search ? "true" : "false");
  std::string list = "[";
  for (std::size_t i = 0; i < a.lambda_candidates.size(); ++i) {
    if (i != 0) list += ", ";
    list += format_real(a.lambda_candidates[i]);
  }
  list += "]";
  emit(s, "lambda_candidates", list);
}

// --- artifact helpers --------------------------------------------------------

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open output file '" + path + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error("failed to write output file '" + path + "'");
}

std::string join(const std::string& dir, const char* name) {
  return (fs::path(dir) / name).string();
}

void write_trace_csv(const std::string& path, const std::vector<real>& trace) {
  std::string s = "step,objective\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    s += std::to_string(i);
    s += ',';
    s += format_real(trace[i]);
    s += '\n';
  }
  write_text(path, s);
}

void write_json(const std::string& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

nlohmann::json attack_result_json(const RunConfig& cfg, const attack::AttackResult& res) {
  nlohmann::json j;
  j["mode"] = mode_name(cfg.mode);
  j["seed"] = cfg.seed;
  j["target"] = *cfg.target;
  j["lambda"] = res.lambda;
  j["steps"] = cfg.attack.config.steps;
  j["lambda_search"] = cfg.attack.lambda_search;
  j["below_threshold"] = res.below_threshold;
  j["holdout_adversariality"] = res.holdout_adversariality;
  j["holdout_count"] = res.holdout_count;
  j["expected_lab_distance"] = res.expected_lab_distance;
  j["max_abs_perturbation"] = res.max_abs_perturbation;
  if (res.epsilon_report) {
    j["epsilon_report"] = *res.epsilon_report;
  } else {
    j["epsilon_report"] = nullptr;
  }
  return j;
}

// --- mode runners ------------------------------------------------------------

int run_train(const RunConfig& cfg) {
  dataset::LabeledDataset data;
  // The dataset generator draws from its own derived seed so training order
  // never shifts the samples.
  const std::uint64_t data_seed = mix_seed(cfg.seed, hash_tag("dataset"));
  if (cfg.train.generator == "digits") {
    data = dataset::make_digit_dataset(cfg.train.per_class, data_seed);
  } else if (cfg.train.generator == "blobs") {
    data = dataset::make_blob_dataset(cfg.train.per_class, data_seed);
  } else if (cfg.train.generator == "colorshapes") {
    data = dataset::make_color_shape_dataset(cfg.train.per_class, data_seed);
  } else {
    data = dataset::ingest_idx(cfg.train.dataset_images, cfg.train.dataset_labels);
  }

  classifier::Architecture arch;
  if (cfg.train.layers.empty()) {
    arch = classifier::Architecture::default_cnn(data.image_shape(), data.class_count);
  } else {
    arch.input_shape = data.image_shape();
    arch.class_count = data.class_count;
    arch.layers = classifier::Architecture::parse_layers(cfg.train.layers);
  }

  classifier::TrainConfig tc;
  tc.epochs = cfg.train.epochs;
  tc.batch_size = cfg.train.batch_size;
  tc.learning_rate = cfg.train.learning_rate;
  tc.momentum = cfg.train.momentum;
  tc.holdout_fraction = cfg.train.holdout_fraction;
  tc.seed = cfg.seed;
  classifier::TrainReport report;
  const classifier::Model model = classifier::train(data, arch, tc, &report);
  classifier::save_model(model, join(cfg.out, "model.eotmdl"));

  nlohmann::json j;
  j["mode"] = "train";
  j["seed"] = cfg.seed;
  j["dataset_size"] = data.size();
  j["class_count"] = data.class_count;
  j["layers"] = model.arch.layers_string();
  j["holdout_accuracy"] = report.holdout_accuracy;
  j["holdout_count"] = report.holdout_count;
  j["epoch_mean_loss"] = report.epoch_mean_loss;
  write_json(join(cfg.out, "result.json"), j);
  std::printf("train: holdout accuracy %s over %zu examples; model written to %s\n",
              format_real(report.holdout_accuracy).c_str(), report.holdout_count,
              join(cfg.out, "model.eotmdl").c_str());
  return 0;
}

int run_attack2d(const RunConfig& cfg) {
  const classifier::Model model = classifier::load_model(cfg.model);
  const Tensor x = imageio::read_image_raw(cfg.input);
  attack::AttackConfig acfg = cfg.attack.config;
  acfg.seed = cfg.seed;
  attack::AttackResult res;
  if (cfg.attack.lambda_search) {
    res = attack::lambda_search_2d(x, *cfg.target, cfg.dist2d, model, acfg,
                                   cfg.attack.lambda_candidates)
              .second;
  } else {
    res = attack::eot_attack_2d(x, *cfg.target, cfg.dist2d, model, acfg);
  }
  imageio::write_image_raw(x, join(cfg.out, "original.eotimg"));
  imageio::write_image_raw(res.adversarial, join(cfg.out, "adversarial.eotimg"));
  imageio::write_png(res.adversarial, join(cfg.out, "adversarial.png"));
  write_trace_csv(join(cfg.out, "trace.csv"), res.objective_trace);
  write_json(join(cfg.out, "result.json"), attack_result_json(cfg, res));
  std::printf("attack2d: lambda %s, adversariality %s over %zu held-out views\n",
              format_real(res.lambda).c_str(), format_real(res.holdout_adversariality).c_str(),
              res.holdout_count);
  return 0;
}

int run_attack3d(const RunConfig& cfg) {
  const classifier::Model model = classifier::load_model(cfg.model);
  const Tensor texture = imageio::read_image_raw(cfg.texture);
  const renderer3d::Mesh mesh = renderer3d::load_obj(cfg.mesh);
  const std::optional<renderer3d::PhysicalConfig> physical =
      cfg.physical_enabled ? std::optional<renderer3d::PhysicalConfig>(cfg.physical)
                           : std::nullopt;
  attack::AttackConfig acfg = cfg.attack.config;
  acfg.seed = cfg.seed;
  attack::AttackResult res;
  if (cfg.attack.lambda_search) {
    res = attack::lambda_search_3d(texture, *cfg.target, mesh, cfg.pose, physical, model, acfg,
                                   cfg.attack.lambda_candidates)
              .second;
  } else {
    res = attack::eot_attack_3d(texture, *cfg.target, mesh, cfg.pose, physical, model, acfg);
  }
  imageio::write_image_raw(texture, join(cfg.out, "original_texture.eotimg"));
  imageio::write_image_raw(res.adversarial, join(cfg.out, "adversarial_texture.eotimg"));
  imageio::write_png(res.adversarial, join(cfg.out, "adversarial_texture.png"));
  write_trace_csv(join(cfg.out, "trace.csv"), res.objective_trace);
  write_json(join(cfg.out, "result.json"), attack_result_json(cfg, res));
  std::printf("attack3d: lambda %s, adversariality %s over %zu held-out poses\n",
              format_real(res.lambda).c_str(), format_real(res.holdout_adversariality).c_str(),
              res.holdout_count);
  return 0;
}

int run_eval(const RunConfig& cfg) {
  const classifier::Model model = classifier::load_model(cfg.model);
  const Tensor original = imageio::read_image_raw(cfg.original);
  const Tensor adversarial = imageio::read_image_raw(cfg.adversarial);
  eval::TransformSampler sampler;
  if (!cfg.mesh.empty()) {
    sampler = eval::make_sampler_3d(
        renderer3d::load_obj(cfg.mesh), cfg.pose,
        cfg.physical_enabled ? std::optional<renderer3d::PhysicalConfig>(cfg.physical)
                             : std::nullopt,
        original.shape()[0], original.shape()[1], model.arch.input_shape[0],
        model.arch.input_shape[1]);
  } else {
    sampler = eval::make_sampler_2d(cfg.dist2d, original.shape(), model.arch.input_shape[0],
                                    model.arch.input_shape[1]);
  }

  eval::EvalExample example;
  example.id = "example";
  example.original = original;
  example.adversarial = adversarial;
  example.true_classes = cfg.true_classes;
  example.target = *cfg.target;
  example.lambda = cfg.eval.lambda;
  // The holdout fork matches the attack modes, so evaluating an attack's
  // artifacts with its seed and holdout count reproduces the stored
  // held-out adversariality exactly.
  const eval::EvalReport report = eval::report_for_example(
      example, model, sampler, cfg.eval.samples, RngStream(cfg.seed).fork("holdout"));
  eval::write_report_csv(report, join(cfg.out, "report.csv"));
  eval::write_montage_png(model, adversarial, sampler, cfg.eval.montage_rows,
                          cfg.eval.montage_cols, RngStream(cfg.seed).fork("montage"),
                          join(cfg.out, "montage.png"));

  const eval::ExampleRow& adv_row = report.rows[1];
  nlohmann::json j;
  j["mode"] = "eval";
  j["seed"] = cfg.seed;
  j["target"] = *cfg.target;
  j["samples"] = report.n_samples;
  j["adversariality"] = adv_row.adversariality;
  j["accuracy"] = adv_row.accuracy;
  j["l2_per_pixel"] = adv_row.l2_per_pixel;
  j["original_accuracy"] = report.rows[0].accuracy;
  j["original_adversariality"] = report.rows[0].adversariality;
  write_json(join(cfg.out, "result.json"), j);
  std::printf("eval: adversariality %s, accuracy %s over %zu views\n",
              format_real(adv_row.adversariality).c_str(), format_real(adv_row.accuracy).c_str(),
              report.n_samples);
  return 0;
}

int run_render(const RunConfig& cfg) {
  const renderer3d::Mesh mesh = renderer3d::load_obj(cfg.mesh);
  const Tensor texture = imageio::read_image_raw(cfg.texture);
  if (texture.rank() != 3 || texture.shape().back() != 3) {
    throw Error("render: texture must be [H,W,3], got " + shape_to_string(texture.shape()));
  }
  RngStream rng = RngStream(cfg.seed).fork("render");
  for (std::size_t k = 0; k < cfg.render.count; ++k) {
    const renderer3d::Pose pose = renderer3d::sample_pose(cfg.pose, rng);
    renderer3d::PhysicalParams physical;
    if (cfg.physical_enabled) physical = renderer3d::sample_physical(cfg.physical, rng);
    const renderer3d::CoordinateMap map = renderer3d::build_coordinate_map(
        mesh, pose, texture.shape()[0], texture.shape()[1], cfg.render.height, cfg.render.width);
    Tensor image = renderer3d::render_texture(map, texture);
    if (cfg.physical_enabled) image = renderer3d::apply_physical_effects(image, physical);
    const std::string stem = "render_" + std::to_string(k);
    imageio::write_image_raw(image, join(cfg.out, (stem + ".eotimg").c_str()));
    imageio::write_png(image, join(cfg.out, (stem + ".png").c_str()));
  }
  nlohmann::json j;
  j["mode"] = "render";
  j["seed"] = cfg.seed;
  j["count"] = cfg.render.count;
  j["width"] = cfg.render.width;
  j["height"] = cfg.render.height;
  write_json(join(cfg.out, "result.json"), j);
  std::printf("render: wrote %zu sampled views to %s\n", cfg.render.count, cfg.out.c_str());
  return 0;
}

int run_gradcheck(const RunConfig& cfg) {
  const std::vector<diffmath::GradCheckRow> rows = diffmath::gradcheck_primitives(cfg.seed);
  std::size_t width = 0;
  for (const diffmath::GradCheckRow& row : rows) width = std::max(width, row.primitive.size());
  std::string table = "primitive";
  table.append(width + 2 > 9 ? width + 2 - 9 : 1, ' ');
  table += "max_rel_error  result\n";
  bool all_pass = true;
  for (const diffmath::GradCheckRow& row : rows) {
    table += row.primitive;
    table.append(width + 2 - row.primitive.size(), ' ');
    char err[32];
    std::snprintf(err, sizeof(err), "%-15.3e", row.max_rel_error);
    table += err;
    table += row.pass ? "pass" : "FAIL";
    table += '\n';
    all_pass = all_pass && row.pass;
  }
  write_text(join(cfg.out, "gradcheck.txt"), table);
  std::fputs(table.c_str(), stdout);
  return all_pass ? 0 : 1;
}

}  // namespace

std::string mode_name(Mode mode) {
  switch (mode) {
    case Mode::kTrain: return "train";
    case Mode::kAttack2D: return "attack2d";
    case Mode::kAttack3D: return "attack3d";
    case Mode::kEval: return "eval";
    case Mode::kRender: return "render";
    case Mode::kGradcheck: return "gradcheck";
  }
  throw Error("cli: unreachable mode");
}

Mode parse_mode(const std::string& name) {
  for (const Mode m : all_modes()) {
    if (mode_name(m) == name) return m;
  }
  throw Error("unknown mode '" + name +
              "' (expected train, attack2d, attack3d, eval, render, or gradcheck)");
}

void RunConfig::validate() const {
  if (out.empty()) throw Error("missing required key 'out'");
  std::vector<std::pair<const char*, const std::string*>> referenced;
  switch (mode) {
    case Mode::kTrain: {
      if (train.generator != "digits" && train.generator != "blobs" &&
          train.generator != "colorshapes" && train.generator != "none") {
        throw Error("config key 'generator': '" + train.generator +
                    "' is not 'digits', 'blobs', 'colorshapes', or 'none'");
      }
      if (train.generator == "none") {
        require_key(!train.dataset_images.empty(), "dataset_images", mode);
        require_key(!train.dataset_labels.empty(), "dataset_labels", mode);
        referenced.emplace_back("dataset_images", &train.dataset_images);
        referenced.emplace_back("dataset_labels", &train.dataset_labels);
      } else {
        check_positive(train.per_class, "per_class");
      }
      check_positive(train.epochs, "epochs");
      check_positive(train.batch_size, "batch_size");
      if (!(train.learning_rate > 0.0) || !std::isfinite(train.learning_rate)) {
        throw Error("config key 'learning_rate' must be finite and > 0");
      }
      if (!(train.momentum >= 0.0 && train.momentum < 1.0)) {
        throw Error("config key 'momentum' must lie in [0,1)");
      }
      if (!(train.holdout_fraction >= 0.0 && train.holdout_fraction < 1.0)) {
        throw Error("config key 'holdout_fraction' must lie in [0,1)");
      }
      if (!train.layers.empty()) classifier::Architecture::parse_layers(train.layers);
      break;
    }
    case Mode::kAttack2D: {
      require_key(!model.empty(), "model", mode);
      require_key(!input.empty(), "input", mode);
      require_key(target.has_value(), "target", mode);
      dist2d.validate();
      attack.config.validate();
      referenced.emplace_back("model", &model);
      referenced.emplace_back("input", &input);
      break;
    }
    case Mode::kAttack3D: {
      require_key(!model.empty(), "model", mode);
      require_key(!texture.empty(), "texture", mode);
      require_key(!mesh.empty(), "mesh", mode);
      require_key(target.has_value(), "target", mode);
      pose.validate();
      if (physical_enabled) physical.validate();
      attack.config.validate();
      referenced.emplace_back("model", &model);
      referenced.emplace_back("texture", &texture);
      referenced.emplace_back("mesh", &mesh);
      break;
    }
    case Mode::kEval: {
      require_key(!model.empty(), "model", mode);
      require_key(!original.empty(), "original", mode);
      require_key(!adversarial.empty(), "adversarial", mode);
      require_key(target.has_value(), "target", mode);
      require_key(!true_classes.empty(), "true_classes", mode);
      check_positive(eval.samples, "samples");
      check_positive(eval.montage_rows, "montage_rows");
      check_positive(eval.montage_cols, "montage_cols");
      if (!(std::isfinite(eval.lambda) && eval.lambda >= 0.0)) {
        throw Error("config key 'lambda' must be finite and >= 0");
      }
      if (mesh.empty()) {
        dist2d.validate();
      } else {
        pose.validate();
        if (physical_enabled) physical.validate();
        referenced.emplace_back("mesh", &mesh);
      }
      referenced.emplace_back("model", &model);
      referenced.emplace_back("original", &original);
      referenced.emplace_back("adversarial", &adversarial);
      break;
    }
    case Mode::kRender: {
      require_key(!mesh.empty(), "mesh", mode);
      require_key(!texture.empty(), "texture", mode);
      check_positive(render.count, "count");
      check_positive(render.width, "width");
      check_positive(render.height, "height");
      pose.validate();
      if (physical_enabled) physical.validate();
      referenced.emplace_back("mesh", &mesh);
      referenced.emplace_back("texture", &texture);
      break;
    }
    case Mode::kGradcheck:
      break;
  }
  if (mode == Mode::kAttack2D || mode == Mode::kAttack3D) {
    if (attack.lambda_search) {
      if (attack.lambda_candidates.empty()) {
        throw Error("config key 'lambda_candidates' must be nonempty when lambda_search is on");
      }
      for (const real c : attack.lambda_candidates) {
        if (!(c >= 0.0) || !std::isfinite(c)) {
          throw Error("config key 'lambda_candidates': entries must be finite and >= 0");
        }
      }
    }
  }
  for (const auto& [key, path] : referenced) check_path_exists(*path, key);
}

RunConfig parse_config_text(Mode mode, const std::string& text, const FlagOverrides& flags) {
  const std::vector<KeyValue> pairs = collect_pairs(text);
  bool eval_has_mesh = false;
  for (const KeyValue& kv : pairs) {
    if (kv.key == "mesh" && !kv.value.empty()) eval_has_mesh = true;
  }
  const Table table = key_table(mode, eval_has_mesh);

  RunConfig cfg;
  cfg.mode = mode;
  for (const KeyValue& kv : pairs) {
    if (kv.key == "mode") {
      const Mode file_mode = parse_mode(kv.value);
      if (file_mode != mode) {
        throw Error("configuration sets mode '" + kv.value + "' but the run was invoked as '" +
                    mode_name(mode) + "'");
      }
      continue;
    }
    const auto it = table.find(kv.key);
    if (it == table.end()) fail_unknown_key(kv.key, mode, table);
    it->second(cfg, kv.key, kv.value);
  }

  // Flags override the file.
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.out) cfg.out = *flags.out;
  if (flags.model) {
    if (mode != Mode::kAttack2D && mode != Mode::kAttack3D && mode != Mode::kEval) {
      throw Error("flag --model does not apply to mode '" + mode_name(mode) + "'");
    }
    cfg.model = *flags.model;
  }
  if (flags.steps) {
    if (mode != Mode::kAttack2D && mode != Mode::kAttack3D) {
      throw Error("flag --steps does not apply to mode '" + mode_name(mode) + "'");
    }
    cfg.attack.config.steps = *flags.steps;
  }
  if (flags.lambda) {
    if (mode == Mode::kAttack2D || mode == Mode::kAttack3D) {
      cfg.attack.config.lambda = *flags.lambda;
    } else if (mode == Mode::kEval) {
      cfg.eval.lambda = *flags.lambda;
    } else {
      throw Error("flag --lambda does not apply to mode '" + mode_name(mode) + "'");
    }
  }

  // Resolve the remaining defaults so the echoed config is fully explicit.
  if (mode == Mode::kAttack2D && cfg.attack.config.holdout_samples == 0) {
    cfg.attack.config.holdout_samples = cfg.attack.lambda_search ? 100 : 1000;
  }
  if (mode == Mode::kAttack3D && cfg.attack.config.holdout_samples == 0) {
    cfg.attack.config.holdout_samples = 100;
  }
  if (mode == Mode::kEval && cfg.eval.samples == 0) {
    cfg.eval.samples = cfg.mesh.empty() ? 1000 : 100;
  }

  cfg.validate();
  return cfg;
}

RunConfig parse_config(Mode mode, const std::string& config_path, const FlagOverrides& flags) {
  std::string text;
  if (!config_path.empty()) {
    std::ifstream in(config_path, std::ios::binary);
    if (!in) throw Error("cannot open config file '" + config_path + "'");
    text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return parse_config_text(mode, text, flags);
}

std::string render_config(const RunConfig& c) {
  std::string s = "# resolved run configuration\n";
  emit(s, "mode", mode_name(c.mode));
  emit(s, "seed", std::to_string(c.seed));
  emit(s, "out", c.out);
  switch (c.mode) {
    case Mode::kTrain:
      emit(s, "generator", c.train.generator);
      emit(s, "per_class", std::to_string(c.train.per_class));
      if (!c.train.dataset_images.empty()) emit(s, "dataset_images", c.train.dataset_images);
      if (!c.train.dataset_labels.empty()) emit(s, "dataset_labels", c.train.dataset_labels);
      if (!c.train.layers.empty()) emit(s, "layers", c.train.layers);
      emit(s, "epochs", std::to_string(c.train.epochs));
      emit(s, "batch_size", std::to_string(c.train.batch_size));
      emit(s, "learning_rate", format_real(c.train.learning_rate));
      emit(s, "momentum", format_real(c.train.momentum));
      emit(s, "holdout_fraction", format_real(c.train.holdout_fraction));
      break;
    case Mode::kAttack2D:
      emit(s, "model", c.model);
      emit(s, "input", c.input);
      emit(s, "target", std::to_string(*c.target));
      emit_dist2d(s, c.dist2d);
      emit_attack(s, c.attack);
      break;
    case Mode::kAttack3D:
      emit(s, "model", c.model);
      emit(s, "texture", c.texture);
      emit(s, "mesh", c.mesh);
      emit(s, "target", std::to_string(*c.target));
      emit_pose(s, c.pose);
      emit_physical(s, c);
      emit_attack(s, c.attack);
      break;
    case Mode::kEval: {
      emit(s, "model", c.model);
      emit(s, "original", c.original);
      emit(s, "adversarial", c.adversarial);
      emit(s, "target", std::to_string(*c.target));
      std::string classes = "[";
      bool first = true;
      for (const std::size_t cl : c.true_classes) {
        if (!first) classes += ", ";
        classes += std::to_string(cl);
        first = false;
      }
      classes += "]";
      emit(s, "true_classes", classes);
      emit(s, "lambda", format_real(c.eval.lambda));
      emit(s, "samples", std::to_string(c.eval.samples));
      emit(s, "montage_rows", std::to_string(c.eval.montage_rows));
      emit(s, "montage_cols", std::to_string(c.eval.montage_cols));
      if (c.mesh.empty()) {
        emit_dist2d(s, c.dist2d);
      } else {
        emit(s, "mesh", c.mesh);
        emit_pose(s, c.pose);
        emit_physical(s, c);
      }
      break;
    }
    case Mode::kRender:
      emit(s, "mesh", c.mesh);
      emit(s, "texture", c.texture);
      emit(s, "count", std::to_string(c.render.count));
      emit(s, "width", std::to_string(c.render.width));
      emit(s, "height", std::to_string(c.render.height));
      emit_pose(s, c.pose);
      emit_physical(s, c);
      break;
    case Mode::kGradcheck:
      break;
  }
  return s;
}

int run(const RunConfig& config) {
  config.validate();
  fs::create_directories(fs::path(config.out));
  write_text(join(config.out, "resolved.cfg"), render_config(config));
  switch (config.mode) {
    case Mode::kTrain: return run_train(config);
    case Mode::kAttack2D: return run_attack2d(config);
    case Mode::kAttack3D: return run_attack3d(config);
    case Mode::kEval: return run_eval(config);
    case Mode::kRender: return run_render(config);
    case Mode::kGradcheck: return run_gradcheck(config);
  }
  throw Error("cli: unreachable mode");
}

}  // namespace eot::cli
