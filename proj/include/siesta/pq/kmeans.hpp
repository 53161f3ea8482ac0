#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "siesta/error.hpp"
#include "siesta/random.hpp"

namespace siesta::pq {

struct KMeansConfig {
  std::size_t k = 256;
  std::size_t max_iters = 25;
  std::size_t restarts = 3;
};

struct KMeansResult {
  std::vector<double> centroids;  // k x dim
  double objective = 0.0;         // sum of squared distances to assigned centroid
  std::vector<double> history;    // objective after each assignment step
};

inline double squared_distance(const double* a, const double* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline std::size_t nearest_centroid(const double* x, const std::vector<double>& centroids, std::size_t k,
                                    std::size_t dim, double* best_dist = nullptr) {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    const double d = squared_distance(x, centroids.data() + c * dim, dim);
    if (d < bd) {
      bd = d;
      best = c;
    }
  }
  if (best_dist) *best_dist = bd;
  return best;
}

/// k-means++ seeding.
inline std::vector<double> kmeanspp_init(std::span<const double> data, std::size_t n, std::size_t dim, std::size_t k,
                                         Rng& rng) {
  std::vector<double> centroids(k * dim);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t first = uniform_index(rng, n);
  std::copy_n(data.data() + first * dim, dim, centroids.data());
  for (std::size_t c = 1; c < k; ++c) {
    const double* prev = centroids.data() + (c - 1) * dim;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(data.data() + i * dim, prev, dim));
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = uniform_index(rng, n);
    } else {
      double u = uniform01(rng) * total;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        u -= d2[i];
        if (u < 0.0) {
          pick = i;
          break;
        }
      }
    }
    std::copy_n(data.data() + pick * dim, dim, centroids.data() + c * dim);
  }
  return centroids;
}

/// Lloyd iterations from the given centroids. Empty clusters are re-seeded at
/// the point currently farthest from its centroid. Returns the objective after
/// each assignment step, which is non-increasing.
inline std::vector<double> lloyd(std::span<const double> data, std::size_t n, std::size_t dim,
                                 std::vector<double>& centroids, std::size_t k, std::size_t iters) {
  std::vector<double> history;
  std::vector<std::size_t> assign(n, 0), prev_assign(n, k);
  std::vector<double> dist(n);
  std::vector<double> sums(k * dim);
  std::vector<std::size_t> counts(k);
  for (std::size_t it = 0; it < iters; ++it) {
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      assign[i] = nearest_centroid(data.data() + i * dim, centroids, k, dim, &dist[i]);
      obj += dist[i];
    }
    history.push_back(obj);
    if (assign == prev_assign) break;
    prev_assign = assign;

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      const double* x = data.data() + i * dim;
      double* s = sums.data() + assign[i] * dim;
      for (std::size_t j = 0; j < dim; ++j) s[j] += x[j];
    }
    std::vector<char> taken(n, 0);
    for (std::size_t c = 0; c < k; ++c) {
      double* cen = centroids.data() + c * dim;
      if (counts[c] > 0) {
        for (std::size_t j = 0; j < dim; ++j) cen[j] = sums[c * dim + j] / static_cast<double>(counts[c]);
        continue;
      }
      std::size_t far = 0;
      double fd = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!taken[i] && dist[i] > fd) {
          fd = dist[i];
          far = i;
        }
      }
      taken[far] = 1;
      std::copy_n(data.data() + far * dim, dim, cen);
    }
  }
  return history;
}

inline double kmeans_objective(std::span<const double> data, std::size_t n, std::size_t dim,
                               const std::vector<double>& centroids, std::size_t k) {
  double obj = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    nearest_centroid(data.data() + i * dim, centroids, k, dim, &d);
    obj += d;
  }
  return obj;
}

/// Best of `restarts` k-means++ / Lloyd runs.
inline KMeansResult kmeans(std::span<const double> data, std::size_t n, std::size_t dim, const KMeansConfig& cfg,
                           std::uint64_t seed) {
  if (cfg.k == 0) throw ConfigError("k-means: k must be positive");
  if (n < cfg.k) {
    throw ConfigError("k-means: need at least k=" + std::to_string(cfg.k) + " points, got " + std::to_string(n));
  }
  if (data.size() != n * dim) throw ConfigError("k-means: data size does not match n x dim");
  KMeansResult best;
  best.objective = std::numeric_limits<double>::infinity();
  const std::size_t restarts = std::max<std::size_t>(1, cfg.restarts);
  for (std::size_t r = 0; r < restarts; ++r) {
    Rng rng(derive_seed(seed, r));
    auto centroids = kmeanspp_init(data, n, dim, cfg.k, rng);
    auto history = lloyd(data, n, dim, centroids, cfg.k, cfg.max_iters);
    const double obj = kmeans_objective(data, n, dim, centroids, cfg.k);
    if (obj < best.objective) {
      best.centroids = std::move(centroids);
      best.objective = obj;
      best.history = std::move(history);
      best.history.push_back(obj);
    }
  }
  return best;
}

}  // namespace siesta::pq
