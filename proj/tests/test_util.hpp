#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "siesta/siesta.hpp"

namespace siesta::testing {

template <typename T = double>
LatentTensor<T> random_tensor(std::size_t rows, std::size_t cols, std::size_t ch, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<T> v(rows * cols * ch);
  for (auto& x : v) x = static_cast<T>(g(rng));
  return LatentTensor<T>(rows, cols, ch, std::move(v));
}

inline std::vector<double> random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double rel_err(std::span<const double> a, std::span<const double> b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double s = std::sqrt(std::max(na, nb));
  return s < 1e-300 ? 0.0 : std::sqrt(d) / s;
}

/// Fourth-order central differences of `loss` with respect to every entry of `params`.
inline std::vector<double> fd_gradient(std::span<double> params, const std::function<double()>& loss, double h = 1e-5) {
  std::vector<double> g(params.size());
  auto at = [&](std::size_t i, double x) {
    params[i] = x;
    return loss();
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double old = params[i];
    const double f1 = at(i, old + h) - at(i, old - h);
    const double f2 = at(i, old + 2 * h) - at(i, old - 2 * h);
    params[i] = old;
    g[i] = (8 * f1 - f2) / (12 * h);
  }
  return g;
}

/// Mean mixed-label cross-entropy of head(G(batch)).
inline double full_loss(const nn::Network<double>& net, const CosineHead<double>& head,
                        const std::vector<LatentTensor<double>>& batch, const std::vector<SoftTarget<double>>& targets) {
  const auto f = nn::forward(net, batch);
  return head_backward(head, std::span<const double>(f.embeddings), std::span<const SoftTarget<double>>(targets)).loss;
}

inline pq::EncodedTensor fake_entry(int label, std::size_t bytes_of_codes) {
  pq::EncodedTensor e;
  e.rows = 1;
  e.cols = static_cast<std::uint32_t>(bytes_of_codes);
  e.n_codebooks = 1;
  e.codes.assign(bytes_of_codes, 0);
  e.label = label;
  return e;
}

/// Small learnable latent dataset: class k is a fixed random tensor plus noise.
inline FeatureDataset<double> blob_dataset(std::size_t classes, std::size_t per_class, std::size_t rows, std::size_t cols,
                                           std::size_t ch, double noise, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LatentTensor<double>> protos;
  for (std::size_t k = 0; k < classes; ++k) protos.push_back(random_tensor(rows, cols, ch, rng));
  FeatureDataset<double> ds;
  ds.num_classes = classes;
  for (std::size_t k = 0; k < classes; ++k) {
    for (std::size_t i = 0; i < per_class; ++i) {
      auto t = random_tensor(rows, cols, ch, rng, noise);
      for (std::size_t j = 0; j < t.size(); ++j) t.data()[j] += protos[k].data()[j];
      ds.tensors.push_back(std::move(t));
      ds.labels.push_back(static_cast<int>(k));
    }
  }
  return ds;
}

}  // namespace siesta::testing
