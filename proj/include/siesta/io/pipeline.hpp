#pragma once

#include <algorithm>
#include <concepts>
#include <utility>
#include <vector>

#include "siesta/dataset.hpp"
#include "siesta/io/config.hpp"
#include "siesta/io/extractor.hpp"
#include "siesta/io/features.hpp"
#include "siesta/io/idx.hpp"
#include "siesta/io/results.hpp"
#include "siesta/io/synthetic.hpp"

namespace siesta::io {

template <std::floating_point T>
struct DataSplits {
  FeatureDataset<T> train;
  FeatureDataset<T> eval;
};

inline std::size_t infer_classes(const ImageSet& a, const ImageSet& b) {
  int hi = -1;
  for (int y : a.labels) hi = std::max(hi, y);
  for (int y : b.labels) hi = std::max(hi, y);
  return static_cast<std::size_t>(hi + 1);
}

/// Synthetic glyph images for both splits; the training split follows Zipf
/// counts when data.zipf_exponent > 0.
inline std::pair<ImageSet, ImageSet> synthetic_images(const RunConfig& c) {
  const auto seeds = seed_manifest(c);
  const std::size_t k = c.data.glyph.classes;
  std::vector<std::size_t> train_counts(k, c.data.train_per_class);
  if (c.data.zipf_exponent > 0.0) {
    train_counts = zipf_counts(k, c.data.train_per_class, c.data.zipf_exponent, c.data.zipf_min, seeds.zipf);
  }
  std::vector<std::size_t> eval_counts(k, c.data.eval_per_class);
  return {make_glyphs(c.data.glyph, train_counts, seeds.glyph_train), make_glyphs(c.data.glyph, eval_counts, seeds.glyph_eval)};
}

inline std::pair<ImageSet, ImageSet> load_images(const RunConfig& c) {
  if (c.data.source == "synthetic") return synthetic_images(c);
  if (c.data.source == "idx") {
    return {load_idx(c.data.train_images, c.data.train_labels), load_idx(c.data.eval_images, c.data.eval_labels)};
  }
  throw ConfigError("data.source: '" + c.data.source + "' does not provide images");
}

template <std::floating_point T>
DataSplits<T> load_data(const RunConfig& c) {
  DataSplits<T> d;
  if (c.data.source == "features") {
    d.train = load_feature_file<T>(c.data.train_features, c.data.num_classes);
    d.eval = load_feature_file<T>(c.data.eval_features, c.data.num_classes);
    const auto k = std::max(d.train.num_classes, d.eval.num_classes);
    d.train.num_classes = d.eval.num_classes = k;
  } else {
    const auto [tr, ev] = load_images(c);
    const auto k = c.data.num_classes ? c.data.num_classes : infer_classes(tr, ev);
    d.train = c.extractor.extract<T>(tr, k);
    d.eval = c.extractor.extract<T>(ev, k);
  }
  d.train.validate();
  d.eval.validate();
  if (!d.train.tensors.empty() && d.train.tensors.front().channels() % c.experiment.model.pq.n_codebooks != 0) {
    throw ConfigError("model.pq.n_codebooks: must divide feature channels (" +
                      std::to_string(d.train.tensors.front().channels()) + ")");
  }
  return d;
}

}  // namespace siesta::io
