#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "siesta/error.hpp"
#include "siesta/experiment/metrics.hpp"
#include "siesta/io/config.hpp"
#include "siesta/random.hpp"

namespace siesta::io {

using Json = nlohmann::ordered_json;

/// Seeds of every stochastic stage, all derived from the config.
struct SeedManifest {
  std::uint64_t run = 0;
  std::uint64_t ordering = 0;
  std::uint64_t pq_subsample = 0;
  std::uint64_t pq_fit = 0;
  std::uint64_t network_init = 0;
  std::uint64_t extractor = 0;
  std::uint64_t glyph_templates = 0;
  std::uint64_t glyph_train = 0;
  std::uint64_t glyph_eval = 0;
  std::uint64_t zipf = 0;
};

inline SeedManifest seed_manifest(const RunConfig& c) {
  const auto s = c.experiment.plan.seed;
  const auto g = c.data.glyph.seed;
  return {s,
          derive_seed(s, 101),
          derive_seed(s, 201),
          derive_seed(s, 202),
          derive_seed(s, 203),
          c.extractor.seed,
          g,
          derive_seed(g, 1),
          derive_seed(g, 2),
          derive_seed(g, 3)};
}

inline Json seeds_json(const SeedManifest& m) {
  Json j;
  j["run"] = m.run;
  j["ordering"] = m.ordering;
  j["pq_subsample"] = m.pq_subsample;
  j["pq_fit"] = m.pq_fit;
  j["network_init"] = m.network_init;
  j["extractor"] = m.extractor;
  j["glyph_templates"] = m.glyph_templates;
  j["glyph_train"] = m.glyph_train;
  j["glyph_eval"] = m.glyph_eval;
  j["zipf"] = m.zipf;
  return j;
}

inline Json metrics_json(const experiment::MetricsRecord& m) {
  Json j;
  j["mode"] = m.mode;
  j["final_alpha"] = m.final_alpha;
  j["mu"] = m.mu ? Json(*m.mu) : Json(nullptr);
  j["alpha"] = m.alpha;
  j["base_alpha"] = m.base_alpha;
  j["total_updates"] = m.total_updates;
  j["base_updates"] = m.base_updates;
  j["peak_memory_bytes"] = m.peak_memory_bytes;
  j["streamed_samples"] = m.streamed_samples;
  j["sleeps"] = m.sleeps;
  j["stopped_early"] = m.stopped_early;
  Json steps = Json::array();
  for (const auto& s : m.steps) {
    Json r;
    r["step"] = s.step;
    r["seen_classes"] = s.seen_classes;
    r["streamed"] = s.streamed;
    r["pre_sleep_acc"] = s.pre_sleep_acc;
    r["post_sleep_acc"] = s.post_sleep_acc;
    r["updates"] = s.updates;
    r["memory_bytes"] = s.memory_bytes;
    r["slept"] = s.slept;
    steps.push_back(std::move(r));
  }
  j["steps"] = std::move(steps);
  return j;
}

namespace detail {

// Shortest text that round-trips.
inline std::string csv_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + p.string() + " for writing");
  os << content;
  os.flush();
  if (!os) throw IoError("write failed for " + p.string());
}

}  // namespace detail

/// One row per evaluation step, step 0 being the post-base point.
inline std::string curves_csv(const experiment::MetricsRecord& m) {
  std::string s = "step,seen_classes,pre_sleep_acc,post_sleep_acc,U,M\n";
  for (const auto& r : m.steps) {
    s += std::to_string(r.step) + "," + std::to_string(r.seen_classes) + "," + detail::csv_double(r.pre_sleep_acc) + "," +
         detail::csv_double(r.post_sleep_acc) + "," + std::to_string(r.updates) + "," + std::to_string(r.memory_bytes) + "\n";
  }
  return s;
}

inline std::string update_log_csv(const experiment::MetricsRecord& m) {
  std::ostringstream os;
  sleep::write_update_log_csv(os, m.update_log);
  return os.str();
}

inline std::string predictions_csv(const experiment::MetricsRecord& m) {
  std::string s = "index,truth,prediction\n";
  for (std::size_t i = 0; i < m.final_predictions.size(); ++i) {
    s += std::to_string(i) + "," + std::to_string(m.eval_truth.at(i)) + "," + std::to_string(m.final_predictions[i]) + "\n";
  }
  return s;
}

/// Writes metrics.json, curves.csv, update_log.csv, predictions.csv,
/// config.txt and seeds.json into `outdir`. Overwrites, so repeated calls
/// leave identical bytes.
inline void emit_results(const experiment::MetricsRecord& m, const RunConfig& cfg, const std::filesystem::path& outdir) {
  std::error_code ec;
  std::filesystem::create_directories(outdir, ec);
  if (ec) throw IoError("cannot create " + outdir.string() + ": " + ec.message());
  detail::write_file(outdir / "metrics.json", metrics_json(m).dump(2) + "\n");
  detail::write_file(outdir / "curves.csv", curves_csv(m));
  detail::write_file(outdir / "update_log.csv", update_log_csv(m));
  detail::write_file(outdir / "predictions.csv", predictions_csv(m));
  detail::write_file(outdir / "config.txt", echo_config(cfg));
  detail::write_file(outdir / "seeds.json", seeds_json(seed_manifest(cfg)).dump(2) + "\n");
}

struct PredictionFile {
  std::vector<int> truth;
  std::vector<int> predictions;
};

inline PredictionFile read_predictions(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw IoError("cannot open " + p.string());
  PredictionFile out;
  std::string line;
  if (!std::getline(is, line) || line != "index,truth,prediction") throw DataError(p.string() + ": bad predictions header");
  std::size_t expect = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t idx = 0;
    int t = 0, y = 0;
    char c1 = 0, c2 = 0;
    if (!(ls >> idx >> c1 >> t >> c2 >> y) || c1 != ',' || c2 != ',' || idx != expect) {
      throw DataError(p.string() + ": malformed row '" + line + "'");
    }
    ++expect;
    out.truth.push_back(t);
    out.predictions.push_back(y);
  }
  return out;
}

}  // namespace siesta::io
