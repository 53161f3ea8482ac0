#pragma once

#include <algorithm>
#include <concepts>
#include <set>
#include <string>
#include <vector>

#include "siesta/error.hpp"
#include "siesta/tensor.hpp"

namespace siesta {

/// Frozen-extractor output for one split (train or held-out eval).
template <std::floating_point T>
struct FeatureDataset {
  std::vector<LatentTensor<T>> tensors;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return tensors.size(); }

  /// Labels in [0, num_classes), one tensor shape throughout.
  void validate() const {
    if (tensors.size() != labels.size()) throw ConfigError("dataset: tensor and label counts differ");
    for (int y : labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
        throw DataError("dataset: label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
      }
    }
    for (const auto& t : tensors) {
      if (!t.same_shape(tensors.front())) throw DataError("dataset: tensors have mixed shapes");
    }
  }

  std::set<int> classes_present() const { return {labels.begin(), labels.end()}; }

  template <std::floating_point U>
  FeatureDataset<U> cast() const {
    FeatureDataset<U> out;
    out.labels = labels;
    out.num_classes = num_classes;
    out.tensors.reserve(tensors.size());
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
    return out;
  }
};

}  // namespace siesta
