#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "siesta/error.hpp"
#include "siesta/experiment/experiment.hpp"
#include "siesta/io/extractor.hpp"
#include "siesta/io/synthetic.hpp"

namespace siesta::io {

struct DataConfig {
  std::string source = "synthetic";  // synthetic | idx | features
  std::string train_images, train_labels, eval_images, eval_labels;  // idx
  std::string train_features, eval_features;                         // features
  std::size_t num_classes = 0;  // 0: inferred from labels
  std::size_t train_per_class = 300;
  std::size_t eval_per_class = 100;
  double zipf_exponent = 0.0;  // 0: balanced training counts
  std::size_t zipf_min = 20;
  GlyphConfig glyph;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct RunConfig {
  experiment::ExperimentConfig experiment;
  DataConfig data;
  RandomPatchExtractor extractor;
  std::string precision = "float";  // float | double
  std::string output_dir = "out";

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

inline RunConfig default_run_config() {
  RunConfig c;
  c.experiment.sleep.augmentation = sleep::Augmentation::mixup_cutmix;
  return c;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// Shortest text that round-trips.
inline std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename U>
U parse_unsigned(std::string_view key, std::string_view v) {
  if (!v.empty() && v.front() == '-') throw ConfigError(std::string(key) + ": must be non-negative, got '" + std::string(v) + "'");
  U out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

inline double parse_double(std::string_view key, std::string_view v) {
  const std::string s(v);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || !std::isfinite(out)) {
    throw ConfigError(std::string(key) + ": expected a finite number, got '" + s + "'");
  }
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}

inline std::vector<int> parse_int_list(std::string_view key, std::string_view v) {
  std::vector<int> out;
  if (trim(v).empty()) return out;
  std::stringstream ss{std::string(v)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto t = trim(item);
    out.push_back(static_cast<int>(parse_unsigned<unsigned>(key, t)));
  }
  return out;
}

inline std::string format_int_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

// Rethrows component parse errors with the key that produced them.
template <typename F>
auto keyed(std::string_view key, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Access>
Field size_field(std::string key, Access a) {
  return {key, [a, key](RunConfig& c, std::string_view v) { a(c) = parse_unsigned<std::size_t>(key, v); },
          [a](const RunConfig& c) { return std::to_string(a(const_cast<RunConfig&>(c))); }};
}

template <typename Access>
Field u64_field(std::string key, Access a) {
  return {key, [a, key](RunConfig& c, std::string_view v) { a(c) = parse_unsigned<std::uint64_t>(key, v); },
          [a](const RunConfig& c) { return std::to_string(a(const_cast<RunConfig&>(c))); }};
}

template <typename Access>
Field double_field(std::string key, Access a) {
  return {key, [a, key](RunConfig& c, std::string_view v) { a(c) = parse_double(key, v); },
          [a](const RunConfig& c) { return fmt_double(a(const_cast<RunConfig&>(c))); }};
}

template <typename Access>
Field bool_field(std::string key, Access a) {
  return {key, [a, key](RunConfig& c, std::string_view v) { a(c) = parse_bool(key, v); },
          [a](const RunConfig& c) { return std::string(a(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <typename Access>
Field string_field(std::string key, Access a) {
  return {key, [a](RunConfig& c, std::string_view v) { a(c) = std::string(v); },
          [a](const RunConfig& c) { return a(const_cast<RunConfig&>(c)); }};
}

template <typename Access, typename Parse, typename Name>
Field enum_field(std::string key, Access a, Parse parse, Name name) {
  return {key, [a, parse, key](RunConfig& c, std::string_view v) { a(c) = keyed(key, [&] { return parse(v); }); },
          [a, name](const RunConfig& c) { return std::string(name(a(const_cast<RunConfig&>(c)))); }};
}

inline nn::LrSchedule parse_schedule(std::string_view s) {
  if (s == "one_cycle") return nn::LrSchedule::one_cycle;
  if (s == "constant") return nn::LrSchedule::constant;
  throw ConfigError("unknown schedule '" + std::string(s) + "'");
}

inline std::string_view schedule_name(nn::LrSchedule s) { return s == nn::LrSchedule::one_cycle ? "one_cycle" : "constant"; }

#define SIESTA_ACCESS(path) [](RunConfig& c) -> auto& { return c.path; }

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(enum_field("plan.mode", SIESTA_ACCESS(experiment.plan.mode), experiment::parse_mode, experiment::mode_name));
    f.push_back(enum_field("plan.ordering", SIESTA_ACCESS(experiment.plan.ordering), experiment::parse_ordering,
                           experiment::ordering_name));
    f.push_back({"plan.class_order",
                 [](RunConfig& c, std::string_view v) { c.experiment.plan.class_order = parse_int_list("plan.class_order", v); },
                 [](const RunConfig& c) { return format_int_list(c.experiment.plan.class_order); }});
    f.push_back(size_field("plan.base_classes", SIESTA_ACCESS(experiment.plan.base_classes)));
    f.push_back(size_field("plan.sleep_every_samples", SIESTA_ACCESS(experiment.plan.sleep_every_samples)));
    f.push_back(size_field("plan.sleep_every_classes", SIESTA_ACCESS(experiment.plan.sleep_every_classes)));
    f.push_back(bool_field("plan.sleep_at_end", SIESTA_ACCESS(experiment.plan.sleep_at_end)));
    f.push_back(u64_field("plan.buffer_bytes", SIESTA_ACCESS(experiment.plan.buffer_bytes)));
    f.push_back(u64_field("plan.update_cap", SIESTA_ACCESS(experiment.plan.update_cap)));
    f.push_back(size_field("plan.base_epochs", SIESTA_ACCESS(experiment.plan.base_epochs)));
    f.push_back(u64_field("plan.offline_updates", SIESTA_ACCESS(experiment.plan.offline_updates)));
    f.push_back(size_field("plan.remind_rehearsal", SIESTA_ACCESS(experiment.plan.remind_rehearsal)));
    f.push_back(double_field("plan.remind_lr", SIESTA_ACCESS(experiment.plan.remind_lr)));
    f.push_back(u64_field("plan.seed", SIESTA_ACCESS(experiment.plan.seed)));

    f.push_back(size_field("model.pq.n_codebooks", SIESTA_ACCESS(experiment.model.pq.n_codebooks)));
    f.push_back(size_field("model.pq.codebook_size", SIESTA_ACCESS(experiment.model.pq.codebook_size)));
    f.push_back(size_field("model.pq.kmeans_iters", SIESTA_ACCESS(experiment.model.pq.kmeans_iters)));
    f.push_back(size_field("model.pq.restarts", SIESTA_ACCESS(experiment.model.pq.restarts)));
    f.push_back(bool_field("model.pq_rotation", SIESTA_ACCESS(experiment.model.pq_rotation)));
    f.push_back(size_field("model.rotation_iters", SIESTA_ACCESS(experiment.model.rotation_iters)));
    f.push_back(size_field("model.pq_train_max_vectors", SIESTA_ACCESS(experiment.model.pq_train_max_vectors)));
    f.push_back(size_field("model.hidden", SIESTA_ACCESS(experiment.model.hidden)));
    f.push_back(size_field("model.embed", SIESTA_ACCESS(experiment.model.embed)));
    f.push_back(bool_field("model.flatten", SIESTA_ACCESS(experiment.model.flatten)));
    f.push_back(double_field("model.tau", SIESTA_ACCESS(experiment.model.tau)));

    f.push_back(size_field("sleep.updates", SIESTA_ACCESS(experiment.sleep.updates)));
    f.push_back(size_field("sleep.batch", SIESTA_ACCESS(experiment.sleep.batch)));
    f.push_back(enum_field("sleep.augmentation", SIESTA_ACCESS(experiment.sleep.augmentation), sleep::parse_augmentation,
                           sleep::augmentation_name));
    f.push_back(double_field("sleep.p_cutmix", SIESTA_ACCESS(experiment.sleep.p_cutmix)));
    f.push_back(double_field("sleep.p_mixup", SIESTA_ACCESS(experiment.sleep.p_mixup)));
    f.push_back(double_field("sleep.cutmix_beta", SIESTA_ACCESS(experiment.sleep.mix.cutmix_beta)));
    f.push_back(double_field("sleep.mixup_alpha", SIESTA_ACCESS(experiment.sleep.mix.mixup_alpha)));
    f.push_back(enum_field("sleep.policy", SIESTA_ACCESS(experiment.sleep.policy), sleep::parse_policy, sleep::policy_name));
    f.push_back(double_field("sleep.lr", SIESTA_ACCESS(experiment.sleep.optim.lr)));
    f.push_back(double_field("sleep.momentum", SIESTA_ACCESS(experiment.sleep.optim.momentum)));
    f.push_back(double_field("sleep.weight_decay", SIESTA_ACCESS(experiment.sleep.optim.weight_decay)));
    f.push_back(double_field("sleep.layer_decay", SIESTA_ACCESS(experiment.sleep.optim.layer_decay)));
    f.push_back(enum_field("sleep.schedule", SIESTA_ACCESS(experiment.sleep.optim.schedule), parse_schedule, schedule_name));
    f.push_back(double_field("sleep.pct_start", SIESTA_ACCESS(experiment.sleep.optim.one_cycle.pct_start)));
    f.push_back(double_field("sleep.div_start", SIESTA_ACCESS(experiment.sleep.optim.one_cycle.div_start)));
    f.push_back(double_field("sleep.div_final", SIESTA_ACCESS(experiment.sleep.optim.one_cycle.div_final)));
    f.push_back(bool_field("sleep.learn_temperature", SIESTA_ACCESS(experiment.sleep.head.learn_temperature)));
    f.push_back(double_field("sleep.min_temperature", SIESTA_ACCESS(experiment.sleep.head.min_temperature)));

    f.push_back(string_field("data.source", SIESTA_ACCESS(data.source)));
    f.push_back(string_field("data.train_images", SIESTA_ACCESS(data.train_images)));
    f.push_back(string_field("data.train_labels", SIESTA_ACCESS(data.train_labels)));
    f.push_back(string_field("data.eval_images", SIESTA_ACCESS(data.eval_images)));
    f.push_back(string_field("data.eval_labels", SIESTA_ACCESS(data.eval_labels)));
    f.push_back(string_field("data.train_features", SIESTA_ACCESS(data.train_features)));
    f.push_back(string_field("data.eval_features", SIESTA_ACCESS(data.eval_features)));
    f.push_back(size_field("data.num_classes", SIESTA_ACCESS(data.num_classes)));
    f.push_back(size_field("data.train_per_class", SIESTA_ACCESS(data.train_per_class)));
    f.push_back(size_field("data.eval_per_class", SIESTA_ACCESS(data.eval_per_class)));
    f.push_back(double_field("data.zipf_exponent", SIESTA_ACCESS(data.zipf_exponent)));
    f.push_back(size_field("data.zipf_min", SIESTA_ACCESS(data.zipf_min)));
    f.push_back(size_field("data.glyph.classes", SIESTA_ACCESS(data.glyph.classes)));
    f.push_back(size_field("data.glyph.size", SIESTA_ACCESS(data.glyph.size)));
    f.push_back(size_field("data.glyph.strokes", SIESTA_ACCESS(data.glyph.strokes)));
    f.push_back(double_field("data.glyph.jitter", SIESTA_ACCESS(data.glyph.jitter)));
    f.push_back(double_field("data.glyph.shift", SIESTA_ACCESS(data.glyph.shift)));
    f.push_back(double_field("data.glyph.noise", SIESTA_ACCESS(data.glyph.noise)));
    f.push_back(u64_field("data.glyph.seed", SIESTA_ACCESS(data.glyph.seed)));

    f.push_back(size_field("extractor.rows", SIESTA_ACCESS(extractor.rows)));
    f.push_back(size_field("extractor.cols", SIESTA_ACCESS(extractor.cols)));
    f.push_back(size_field("extractor.channels", SIESTA_ACCESS(extractor.channels)));
    f.push_back(u64_field("extractor.seed", SIESTA_ACCESS(extractor.seed)));

    f.push_back(string_field("run.precision", SIESTA_ACCESS(precision)));
    f.push_back(string_field("output.dir", SIESTA_ACCESS(output_dir)));
    return f;
  }();
  return table;
}

#undef SIESTA_ACCESS

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : detail::fields()) out.push_back(f.key);
  return out;
}

inline void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& f : detail::fields()) {
    if (f.key == key) {
      f.set(cfg, detail::trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

inline std::string get_config_value(const RunConfig& cfg, std::string_view key) {
  for (const auto& f : detail::fields()) {
    if (f.key == key) return f.get(cfg);
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

/// Applies a `key=value` override as given on the command line.
inline void apply_override(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  set_config_value(cfg, detail::trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

inline void validate(const RunConfig& c) {
  const auto& plan = c.experiment.plan;
  const auto& sl = c.experiment.sleep;
  const auto& model = c.experiment.model;
  auto fail = [](const std::string& key, const std::string& msg) { throw ConfigError(key + ": " + msg); };
  if (sl.batch == 0) fail("sleep.batch", "must be positive");
  auto prob = [&](const char* key, double p) {
    if (p < 0.0 || p > 1.0) fail(key, "must lie in [0, 1]");
  };
  prob("sleep.p_cutmix", sl.p_cutmix);
  prob("sleep.p_mixup", sl.p_mixup);
  if (sl.p_cutmix + sl.p_mixup > 1.0 + 1e-12) fail("sleep.p_mixup", "p_cutmix + p_mixup must not exceed 1");
  if (sl.mix.cutmix_beta <= 0.0) fail("sleep.cutmix_beta", "must be positive");
  if (sl.mix.mixup_alpha <= 0.0) fail("sleep.mixup_alpha", "must be positive");
  if (sl.optim.lr <= 0.0) fail("sleep.lr", "must be positive");
  if (sl.optim.momentum < 0.0 || sl.optim.momentum >= 1.0) fail("sleep.momentum", "must lie in [0, 1)");
  if (sl.optim.weight_decay < 0.0) fail("sleep.weight_decay", "must be non-negative");
  if (sl.optim.layer_decay <= 0.0 || sl.optim.layer_decay > 1.0) fail("sleep.layer_decay", "must lie in (0, 1]");
  if (sl.optim.one_cycle.pct_start < 0.0 || sl.optim.one_cycle.pct_start > 1.0) fail("sleep.pct_start", "must lie in [0, 1]");
  if (sl.optim.one_cycle.div_start <= 0.0) fail("sleep.div_start", "must be positive");
  if (sl.optim.one_cycle.div_final <= 0.0) fail("sleep.div_final", "must be positive");
  if (sl.head.min_temperature <= 0.0) fail("sleep.min_temperature", "must be positive");
  if (model.tau <= 0.0) fail("model.tau", "must be positive");
  if (model.hidden == 0) fail("model.hidden", "must be positive");
  if (model.embed == 0) fail("model.embed", "must be positive");
  if (model.pq.n_codebooks == 0) fail("model.pq.n_codebooks", "must be positive");
  if (model.pq.codebook_size == 0 || model.pq.codebook_size > 256) fail("model.pq.codebook_size", "must lie in [1, 256]");
  if (model.pq.restarts == 0) fail("model.pq.restarts", "must be positive");
  if (c.extractor.channels % model.pq.n_codebooks != 0 && c.data.source != "features") {
    fail("model.pq.n_codebooks", "must divide extractor.channels (" + std::to_string(c.extractor.channels) + ")");
  }
  if (plan.remind_lr <= 0.0) fail("plan.remind_lr", "must be positive");
  if (plan.base_epochs == 0 && plan.mode != experiment::Mode::offline_oracle) fail("plan.base_epochs", "must be positive");
  if (plan.mode == experiment::Mode::siesta && plan.sleep_every_samples == 0 && plan.sleep_every_classes == 0 &&
      !plan.sleep_at_end) {
    fail("plan.sleep_every_samples", "siesta mode needs a sleep trigger");
  }
  if (c.data.source != "synthetic" && c.data.source != "idx" && c.data.source != "features") {
    fail("data.source", "expected synthetic, idx or features, got '" + c.data.source + "'");
  }
  if (c.data.source == "idx" &&
      (c.data.train_images.empty() || c.data.train_labels.empty() || c.data.eval_images.empty() || c.data.eval_labels.empty())) {
    fail("data.train_images", "idx source needs train/eval image and label paths");
  }
  if (c.data.source == "features" && (c.data.train_features.empty() || c.data.eval_features.empty())) {
    fail("data.train_features", "features source needs train and eval feature paths");
  }
  if (c.data.source == "synthetic") {
    if (c.data.glyph.classes < 2) fail("data.glyph.classes", "must be at least 2");
    if (c.data.train_per_class == 0) fail("data.train_per_class", "must be positive");
    if (c.data.eval_per_class == 0) fail("data.eval_per_class", "must be positive");
    if (c.data.zipf_exponent < 0.0) fail("data.zipf_exponent", "must be non-negative");
    if (plan.base_classes >= c.data.glyph.classes) fail("plan.base_classes", "must be less than the number of classes");
  }
  if (c.extractor.rows == 0 || c.extractor.cols == 0 || c.extractor.channels == 0) fail("extractor.rows", "dims must be positive");
  if (c.precision != "float" && c.precision != "double") fail("run.precision", "expected float or double");
  if (c.output_dir.empty()) fail("output.dir", "must not be empty");
}

/// `key = value` lines; `[section]` prefixes following keys with `section.`;
/// `#` starts a comment. Values are applied to `base` without validation.
inline RunConfig apply_config_text(std::string_view text, RunConfig base) {
  std::istringstream is{std::string(text)};
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    const auto t = detail::trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      section = detail::trim(std::string_view(t).substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    auto key = detail::trim(std::string_view(t).substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    try {
      set_config_value(base, key, std::string_view(t).substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

inline RunConfig parse_config_text(std::string_view text) {
  auto cfg = apply_config_text(text, default_run_config());
  validate(cfg);
  return cfg;
}

inline RunConfig load_config(const std::string& path, std::span<const std::string> overrides = {}) {
  std::string text;
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    text = ss.str();
  }
  RunConfig cfg = apply_config_text(text, default_run_config());
  for (const auto& o : overrides) apply_override(cfg, o);
  validate(cfg);
  return cfg;
}

/// Every key, one per line, in a form parse_config_text reads back exactly.
inline std::string echo_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : detail::fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace siesta::io
