#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <string>

#include "siesta/error.hpp"
#include "siesta/head/cosine_head.hpp"
#include "siesta/random.hpp"
#include "siesta/tensor.hpp"

namespace siesta::sleep {

enum class MixMode { mixup, cutmix };

/// Half-open spatial rectangle [row_begin, row_end) x [col_begin, col_end).
struct CutBox {
  std::size_t row_begin = 0;
  std::size_t row_end = 0;
  std::size_t col_begin = 0;
  std::size_t col_end = 0;

  std::size_t area() const { return (row_end - row_begin) * (col_end - col_begin); }
};

template <std::floating_point T>
struct MixResult {
  LatentTensor<T> tensor;
  SoftTarget<T> target;  // lambda on the first input's label
};

template <std::floating_point T>
void check_mixable(const LatentTensor<T>& a, const LatentTensor<T>& b) {
  if (!a.same_shape(b)) throw ConfigError("mix: tensors differ in shape");
}

/// out = lambda a + (1 - lambda) b
template <std::floating_point T>
MixResult<T> mixup(const LatentTensor<T>& a, int label_a, const LatentTensor<T>& b, int label_b, T lambda) {
  check_mixable(a, b);
  MixResult<T> r{a, {label_a, label_b, lambda}};
  auto out = r.tensor.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = lambda * out[i] + (T(1) - lambda) * bd[i];
  return r;
}

/// Pastes `box` of b into a; lambda = 1 - box area / (r s).
template <std::floating_point T>
MixResult<T> cutmix(const LatentTensor<T>& a, int label_a, const LatentTensor<T>& b, int label_b, const CutBox& box) {
  check_mixable(a, b);
  if (box.row_begin > box.row_end || box.row_end > a.rows() || box.col_begin > box.col_end || box.col_end > a.cols()) {
    throw ConfigError("cutmix: box outside tensor");
  }
  MixResult<T> r{a, {label_a, label_b, T(1)}};
  for (std::size_t i = box.row_begin; i < box.row_end; ++i) {
    for (std::size_t j = box.col_begin; j < box.col_end; ++j) {
      for (std::size_t c = 0; c < a.channels(); ++c) r.tensor.at(i, j, c) = b.at(i, j, c);
    }
  }
  r.target.lambda = T(1) - static_cast<T>(box.area()) / static_cast<T>(a.positions());
  return r;
}

/// Box with side ratio sqrt(1 - lam), lam ~ Beta(beta, beta), random centre,
/// clipped to the grid.
inline CutBox random_cut_box(std::size_t rows, std::size_t cols, double beta, Rng& rng) {
  const double lam = sample_beta(rng, beta, beta);
  const double ratio = std::sqrt(1.0 - lam);
  const auto cut_h = static_cast<std::ptrdiff_t>(static_cast<double>(rows) * ratio);
  const auto cut_w = static_cast<std::ptrdiff_t>(static_cast<double>(cols) * ratio);
  const auto cy = static_cast<std::ptrdiff_t>(uniform_index(rng, rows));
  const auto cx = static_cast<std::ptrdiff_t>(uniform_index(rng, cols));
  auto clip = [](std::ptrdiff_t v, std::size_t hi) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(hi)));
  };
  return {clip(cy - cut_h / 2, rows), clip(cy + cut_h / 2, rows), clip(cx - cut_w / 2, cols), clip(cx + cut_w / 2, cols)};
}

struct MixConfig {
  double cutmix_beta = 1.0;
  double mixup_alpha = 0.1;

  friend bool operator==(const MixConfig&, const MixConfig&) = default;
};

template <std::floating_point T>
MixResult<T> mix_tensors(const LatentTensor<T>& a, int label_a, const LatentTensor<T>& b, int label_b, MixMode mode,
                         const MixConfig& cfg, Rng& rng) {
  if (mode == MixMode::mixup) {
    const T lambda = static_cast<T>(sample_beta(rng, cfg.mixup_alpha, cfg.mixup_alpha));
    return mixup(a, label_a, b, label_b, lambda);
  }
  return cutmix(a, label_a, b, label_b, random_cut_box(a.rows(), a.cols(), cfg.cutmix_beta, rng));
}

}  // namespace siesta::sleep
