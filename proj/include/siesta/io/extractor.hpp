#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "siesta/dataset.hpp"
#include "siesta/error.hpp"
#include "siesta/io/idx.hpp"
#include "siesta/random.hpp"

namespace siesta::io {

/// Frozen stand-in for the bottom layers H: the image is cut into an r x s
/// grid of non-overlapping patches and every patch goes through the same
/// seeded Gaussian projection to d channels followed by ReLU.
struct RandomPatchExtractor {
  std::size_t rows = 4;
  std::size_t cols = 4;
  std::size_t channels = 16;
  std::uint64_t seed = 11;

  friend bool operator==(const RandomPatchExtractor&, const RandomPatchExtractor&) = default;

  /// d x (patch_h * patch_w) row-major.
  std::vector<double> projection(std::size_t patch_h, std::size_t patch_w) const {
    const std::size_t in = patch_h * patch_w;
    std::vector<double> p(channels * in);
    Rng rng(seed);
    std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    for (auto& v : p) v = g(rng);
    return p;
  }

  template <std::floating_point T>
  FeatureDataset<T> extract(const ImageSet& images, std::size_t num_classes) const {
    if (rows == 0 || cols == 0 || channels == 0) throw ConfigError("extractor dims must be positive");
    if (images.rows % rows != 0 || images.cols % cols != 0) {
      throw ConfigError("extractor grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                        " does not divide image " + std::to_string(images.rows) + "x" + std::to_string(images.cols));
    }
    const std::size_t ph = images.rows / rows, pw = images.cols / cols;
    const auto proj = projection(ph, pw);
    FeatureDataset<T> out;
    out.num_classes = num_classes;
    out.labels = images.labels;
    out.tensors.reserve(images.count());
    std::vector<double> patch(ph * pw);
    for (std::size_t n = 0; n < images.count(); ++n) {
      const float* img = images.image(n);
      LatentTensor<T> t(rows, cols, channels);
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
          for (std::size_t a = 0; a < ph; ++a)
            for (std::size_t b = 0; b < pw; ++b) patch[a * pw + b] = img[(i * ph + a) * images.cols + (j * pw + b)];
          for (std::size_t c = 0; c < channels; ++c) {
            double acc = 0.0;
            const double* w = proj.data() + c * ph * pw;
            for (std::size_t k = 0; k < ph * pw; ++k) acc += w[k] * patch[k];
            t.at(i, j, c) = static_cast<T>(acc > 0.0 ? acc : 0.0);
          }
        }
      }
      out.tensors.push_back(std::move(t));
    }
    return out;
  }
};

}  // namespace siesta::io
