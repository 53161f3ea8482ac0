#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <vector>

#include "siesta/error.hpp"

namespace siesta {

/// r x s x d feature tensor produced by the frozen extractor. Stored
/// position-major: element (i, j, c) lives at ((i * s) + j) * d + c, so each
/// spatial position is one contiguous d-dim channel vector.
template <std::floating_point T>
class LatentTensor {
 public:
  LatentTensor() = default;
  LatentTensor(std::size_t rows, std::size_t cols, std::size_t channels)
      : rows_(rows), cols_(cols), channels_(channels), data_(rows * cols * channels, T(0)) {
    if (rows == 0 || cols == 0 || channels == 0) {
      throw ConfigError("LatentTensor dims must be >= 1");
    }
  }
  LatentTensor(std::size_t rows, std::size_t cols, std::size_t channels, std::vector<T> data)
      : rows_(rows), cols_(cols), channels_(channels), data_(std::move(data)) {
    if (rows == 0 || cols == 0 || channels == 0) {
      throw ConfigError("LatentTensor dims must be >= 1");
    }
    if (data_.size() != rows * cols * channels) {
      throw ConfigError("LatentTensor data size does not match dims");
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t channels() const { return channels_; }
  std::size_t positions() const { return rows_ * cols_; }
  std::size_t size() const { return data_.size(); }

  T& at(std::size_t i, std::size_t j, std::size_t c) { return data_[(i * cols_ + j) * channels_ + c]; }
  T at(std::size_t i, std::size_t j, std::size_t c) const { return data_[(i * cols_ + j) * channels_ + c]; }

  std::span<T> vector_at(std::size_t pos) { return {data_.data() + pos * channels_, channels_}; }
  std::span<const T> vector_at(std::size_t pos) const { return {data_.data() + pos * channels_, channels_}; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  bool same_shape(const LatentTensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && channels_ == o.channels_;
  }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <std::floating_point U>
  LatentTensor<U> cast() const {
    return LatentTensor<U>(rows_, cols_, channels_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const LatentTensor&, const LatentTensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t channels_ = 0;
  std::vector<T> data_;
};

template <std::floating_point T>
struct LabeledTensor {
  LatentTensor<T> tensor;
  int label = 0;
};

}  // namespace siesta
