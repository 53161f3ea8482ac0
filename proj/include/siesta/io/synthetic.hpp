#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "siesta/error.hpp"
#include "siesta/io/idx.hpp"
#include "siesta/random.hpp"

namespace siesta::io {

// Stroke-glyph image generator: each class is a fixed set of line segments;
// samples jitter the endpoints, shift the glyph, vary the stroke width and
// add pixel noise. Output is quantized to 8 bits so it survives IDX.
struct GlyphConfig {
  std::size_t classes = 10;
  std::size_t size = 16;
  std::size_t strokes = 3;
  double jitter = 1.0;  // endpoint std-dev, pixels
  double shift = 1.0;   // max integer translation, pixels
  double noise = 0.15;
  std::uint64_t seed = 7;

  friend bool operator==(const GlyphConfig&, const GlyphConfig&) = default;
};

namespace detail {

struct Segment {
  double y0, x0, y1, x1;
};

inline double segment_distance(double y, double x, const Segment& s) {
  const double dy = s.y1 - s.y0, dx = s.x1 - s.x0;
  const double len2 = dy * dy + dx * dx;
  double t = len2 > 0 ? ((y - s.y0) * dy + (x - s.x0) * dx) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double py = s.y0 + t * dy, px = s.x0 + t * dx;
  return std::hypot(y - py, x - px);
}

inline std::vector<std::vector<Segment>> glyph_templates(const GlyphConfig& cfg) {
  Rng rng(cfg.seed);
  const double lo = 2.0, hi = static_cast<double>(cfg.size) - 3.0;
  std::uniform_real_distribution<double> pos(lo, hi);
  std::vector<std::vector<Segment>> out(cfg.classes);
  for (auto& g : out) {
    for (std::size_t k = 0; k < cfg.strokes; ++k) g.push_back({pos(rng), pos(rng), pos(rng), pos(rng)});
  }
  return out;
}

}  // namespace detail

/// counts[c] samples of class c, in class order.
inline ImageSet make_glyphs(const GlyphConfig& cfg, std::span<const std::size_t> counts, std::uint64_t sample_seed) {
  if (counts.size() != cfg.classes) throw ConfigError("make_glyphs: need one count per class");
  if (cfg.size < 6) throw ConfigError("make_glyphs: image size must be >= 6");
  const auto templates = detail::glyph_templates(cfg);
  Rng rng(sample_seed);
  std::normal_distribution<double> jit(0.0, cfg.jitter);
  std::normal_distribution<double> noise(0.0, cfg.noise);
  std::uniform_real_distribution<double> shift(-cfg.shift, cfg.shift);
  std::uniform_real_distribution<double> width(0.9, 1.3);
  ImageSet set;
  set.rows = set.cols = cfg.size;
  const std::size_t px = cfg.size * cfg.size;
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    for (std::size_t n = 0; n < counts[c]; ++n) {
      const double sy = std::round(shift(rng)), sx = std::round(shift(rng));
      const double w = width(rng);
      std::vector<detail::Segment> segs;
      for (const auto& s : templates[c]) {
        segs.push_back({s.y0 + sy + jit(rng), s.x0 + sx + jit(rng), s.y1 + sy + jit(rng), s.x1 + sx + jit(rng)});
      }
      const std::size_t base = set.pixels.size();
      set.pixels.resize(base + px);
      for (std::size_t i = 0; i < cfg.size; ++i) {
        for (std::size_t j = 0; j < cfg.size; ++j) {
          double v = 0.0;
          for (const auto& s : segs) {
            v = std::max(v, std::clamp(1.0 - detail::segment_distance(double(i), double(j), s) / w + 0.5, 0.0, 1.0));
          }
          v = std::clamp(v + noise(rng), 0.0, 1.0);
          set.pixels[base + i * cfg.size + j] = static_cast<float>(std::lround(v * 255.0)) / 255.0f;
        }
      }
      set.labels.push_back(static_cast<int>(c));
    }
  }
  return set;
}

/// Long-tailed per-class counts: max_count / (rank + 1)^exponent, floored at
/// min_count, with ranks assigned to classes by a seeded shuffle.
inline std::vector<std::size_t> zipf_counts(std::size_t classes, std::size_t max_count, double exponent,
                                            std::size_t min_count, std::uint64_t seed) {
  std::vector<std::size_t> rank(classes);
  for (std::size_t i = 0; i < classes; ++i) rank[i] = i;
  Rng rng(seed);
  shuffle_range(rank.begin(), rank.end(), rng);
  std::vector<std::size_t> counts(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    const double v = static_cast<double>(max_count) / std::pow(static_cast<double>(rank[c] + 1), exponent);
    counts[c] = std::max(min_count, static_cast<std::size_t>(std::lround(v)));
  }
  return counts;
}

}  // namespace siesta::io
