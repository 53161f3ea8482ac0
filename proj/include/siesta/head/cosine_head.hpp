#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "siesta/error.hpp"

namespace siesta {

/// Cross-entropy target mixing two classes: weight `lambda` on `first`,
/// 1 - lambda on `second`. A hard label has first == second, lambda == 1.
template <std::floating_point T>
struct SoftTarget {
  int first = 0;
  int second = 0;
  T lambda = T(1);

  static SoftTarget hard(int label) { return {label, label, T(1)}; }
};

template <std::floating_point T>
struct HeadScores {
  std::vector<T> cosines;  // a_k, 0 for inactive classes
  std::vector<T> probs;    // p_k, 0 for inactive classes
};

template <std::floating_point T>
struct HeadGradients {
  T loss = T(0);                // mean cross-entropy over the batch
  std::vector<T> weights;       // K x dim
  T tau = T(0);                 // dL/dtau
  std::vector<T> inputs;        // batch x dim, dL/dz
};

/// Output layer F: cosine softmax over class vectors f_k with temperature tau,
/// running-mean updates while awake.
///
/// Rows are allocated for every class up front but only *active* rows take
/// part in the softmax. A row becomes active on its first running-mean update
/// (or via activate()). Inactive rows report a_k = p_k = 0.
template <std::floating_point T>
class CosineHead {
 public:
  CosineHead() = default;
  CosineHead(std::size_t num_classes, std::size_t dim, T tau = T(0.1))
      : num_classes_(num_classes),
        dim_(dim),
        weights_(num_classes * dim, T(0)),
        counts_(num_classes, 0),
        active_(num_classes, 0),
        tau_(tau) {
    if (num_classes == 0 || dim == 0) throw ConfigError("CosineHead needs at least one class and dim >= 1");
    if (!(tau > T(0))) throw ConfigError("CosineHead temperature must be positive");
  }

  std::size_t num_classes() const { return num_classes_; }
  std::size_t dim() const { return dim_; }
  T tau() const { return tau_; }
  void set_tau(T tau) {
    if (!(tau > T(0)) || !std::isfinite(tau)) throw NumericalError("temperature must stay positive and finite");
    tau_ = tau;
  }

  std::span<T> row(std::size_t k) { return {weights_.data() + k * dim_, dim_}; }
  std::span<const T> row(std::size_t k) const { return {weights_.data() + k * dim_, dim_}; }
  std::span<T> weights() { return weights_; }
  std::span<const T> weights() const { return weights_; }

  std::uint64_t count(std::size_t k) const { return counts_.at(k); }
  const std::vector<std::uint64_t>& counts() const { return counts_; }
  bool active(std::size_t k) const { return active_.at(k) != 0; }
  std::size_t active_count() const { return static_cast<std::size_t>(std::count(active_.begin(), active_.end(), 1)); }

  void set_count(std::size_t k, std::uint64_t c) { counts_.at(k) = c; }
  void set_active(std::size_t k, bool on) { active_.at(k) = on ? 1 : 0; }

  /// Marks class k active and seeds its row with `init` without touching c_k.
  void activate(std::size_t k, std::span<const T> init) {
    check_label(static_cast<int>(k));
    if (init.size() != dim_) throw ConfigError("activate: init vector has wrong dim");
    std::copy(init.begin(), init.end(), row(k).begin());
    active_[k] = 1;
  }

  /// f_k <- (c_k f_k + z) / (c_k + 1); c_k <- c_k + 1. Uses raw z.
  void online_update(std::span<const T> z, int label) {
    check_label(label);
    if (z.size() != dim_) throw ConfigError("online_update: embedding has wrong dim");
    const auto k = static_cast<std::size_t>(label);
    auto f = row(k);
    const T c = static_cast<T>(counts_[k]);
    for (std::size_t i = 0; i < dim_; ++i) f[i] = (c * f[i] + z[i]) / (c + T(1));
    ++counts_[k];
    active_[k] = 1;
  }

  /// a_k = cos(f_k, z) with a zero norm on either side giving 0; p = softmax(a / tau).
  HeadScores<T> scores(std::span<const T> z) const {
    if (z.size() != dim_) throw ConfigError("scores: embedding has wrong dim");
    if (active_count() == 0) throw UsageError("scores: head has no active class");
    HeadScores<T> out;
    out.cosines.assign(num_classes_, T(0));
    out.probs.assign(num_classes_, T(0));
    const T zn = norm(z);
    T max_logit = -std::numeric_limits<T>::infinity();
    for (std::size_t k = 0; k < num_classes_; ++k) {
      if (!active_[k]) continue;
      out.cosines[k] = cosine(row(k), z, zn);
      max_logit = std::max(max_logit, out.cosines[k] / tau_);
    }
    T sum = T(0);
    for (std::size_t k = 0; k < num_classes_; ++k) {
      if (!active_[k]) continue;
      out.probs[k] = std::exp(out.cosines[k] / tau_ - max_logit);
      sum += out.probs[k];
    }
    for (auto& p : out.probs) p /= sum;
    return out;
  }

  /// argmax of a_k over active classes (identical to argmax of p_k).
  int predict(std::span<const T> z) const {
    if (z.size() != dim_) throw ConfigError("predict: embedding has wrong dim");
    const T zn = norm(z);
    int best = -1;
    T best_a = -std::numeric_limits<T>::infinity();
    bool any_nonzero = false;
    for (std::size_t k = 0; k < num_classes_; ++k) {
      if (!active_[k]) continue;
      const T fn = norm(row(k));
      if (fn > T(0)) any_nonzero = true;
      const T a = cosine(row(k), z, zn);
      if (a > best_a) {
        best_a = a;
        best = static_cast<int>(k);
      }
    }
    if (best < 0 || !any_nonzero) throw UsageError("predict: head is all zero");
    return best;
  }

  bool all_finite() const {
    if (!std::isfinite(tau_)) return false;
    return std::all_of(weights_.begin(), weights_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const CosineHead&, const CosineHead&) = default;

  static T norm(std::span<const T> v) {
    T s = T(0);
    for (T x : v) s += x * x;
    return std::sqrt(s);
  }

 private:
  void check_label(int label) const {
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes_) {
      throw UsageError("class " + std::to_string(label) + " outside allocated range [0, " +
                       std::to_string(num_classes_) + ")");
    }
  }

  T cosine(std::span<const T> f, std::span<const T> z, T zn) const {
    const T fn = norm(f);
    if (fn == T(0) || zn == T(0)) return T(0);
    T dot = T(0);
    for (std::size_t i = 0; i < dim_; ++i) dot += f[i] * z[i];
    return dot / (fn * zn);
  }

  std::size_t num_classes_ = 0;
  std::size_t dim_ = 0;
  std::vector<T> weights_;
  std::vector<std::uint64_t> counts_;
  std::vector<std::uint8_t> active_;
  T tau_ = T(0.1);

  template <std::floating_point U>
  friend HeadGradients<U> head_backward(const CosineHead<U>&, std::span<const U>, std::span<const SoftTarget<U>>);
};

/// Mean cross-entropy of the cosine softmax against (possibly mixed)
/// targets, with exact gradients for the class rows, the temperature and
/// the input embeddings. `z` is batch x dim.
template <std::floating_point T>
HeadGradients<T> head_backward(const CosineHead<T>& head, std::span<const T> z, std::span<const SoftTarget<T>> targets) {
  const std::size_t dim = head.dim_;
  const std::size_t batch = targets.size();
  if (batch == 0) throw UsageError("head_backward: empty batch");
  if (z.size() != batch * dim) throw ConfigError("head_backward: embeddings do not match batch x dim");
  for (const auto& t : targets) {
    for (int c : {t.first, t.second}) {
      head.check_label(c);
      if (!head.active_[static_cast<std::size_t>(c)]) {
        throw UsageError("head_backward: target class " + std::to_string(c) + " is not active");
      }
    }
  }

  const std::size_t K = head.num_classes_;
  HeadGradients<T> g;
  g.weights.assign(K * dim, T(0));
  g.inputs.assign(batch * dim, T(0));

  std::vector<T> fnorm(K);
  for (std::size_t k = 0; k < K; ++k) fnorm[k] = CosineHead<T>::norm(head.row(k));

  const T tau = head.tau_;
  const T inv_batch = T(1) / static_cast<T>(batch);
  std::vector<T> a(K), p(K), target(K);
  double loss = 0.0;

  for (std::size_t b = 0; b < batch; ++b) {
    std::span<const T> zb(z.data() + b * dim, dim);
    const T zn = CosineHead<T>::norm(zb);
    T max_logit = -std::numeric_limits<T>::infinity();
    for (std::size_t k = 0; k < K; ++k) {
      a[k] = T(0);
      if (!head.active_[k]) continue;
      if (fnorm[k] > T(0) && zn > T(0)) {
        T dot = T(0);
        for (std::size_t i = 0; i < dim; ++i) dot += head.weights_[k * dim + i] * zb[i];
        a[k] = dot / (fnorm[k] * zn);
      }
      max_logit = std::max(max_logit, a[k] / tau);
    }
    T sum = T(0);
    for (std::size_t k = 0; k < K; ++k) {
      p[k] = head.active_[k] ? std::exp(a[k] / tau - max_logit) : T(0);
      sum += p[k];
    }
    const T log_sum = std::log(sum) + max_logit;
    std::fill(target.begin(), target.end(), T(0));
    const auto& t = targets[b];
    target[static_cast<std::size_t>(t.first)] += t.lambda;
    target[static_cast<std::size_t>(t.second)] += T(1) - t.lambda;

    T expected_a = T(0);
    for (std::size_t k = 0; k < K; ++k) {
      p[k] /= sum;
      if (target[k] != T(0)) loss -= static_cast<double>(target[k] * (a[k] / tau - log_sum));
      expected_a += target[k] * a[k];
    }
    // dL/dtau = sum_k (p_k - t_k)(-a_k / tau^2)
    T pa = T(0);
    for (std::size_t k = 0; k < K; ++k) pa += p[k] * a[k];
    g.tau += (expected_a - pa) / (tau * tau) * inv_batch;

    T* gz = g.inputs.data() + b * dim;
    for (std::size_t k = 0; k < K; ++k) {
      if (!head.active_[k] || fnorm[k] == T(0) || zn == T(0)) continue;
      const T da = (p[k] - target[k]) / tau * inv_batch;
      if (da == T(0)) continue;
      const T* f = head.weights_.data() + k * dim;
      T* gf = g.weights.data() + k * dim;
      // da/df = (z_hat - a f_hat) / |f| ; da/dz = (f_hat - a z_hat) / |z|
      for (std::size_t i = 0; i < dim; ++i) {
        const T fh = f[i] / fnorm[k];
        const T zh = zb[i] / zn;
        gf[i] += da * (zh - a[k] * fh) / fnorm[k];
        gz[i] += da * (fh - a[k] * zh) / zn;
      }
    }
  }
  g.loss = static_cast<T>(loss) * inv_batch;
  if (!std::isfinite(g.loss) || !std::isfinite(g.tau)) throw NumericalError("head_backward: non-finite loss or gradient");
  return g;
}

template <std::floating_point T>
HeadGradients<T> head_backward(const CosineHead<T>& head, std::span<const T> z, std::span<const int> labels) {
  std::vector<SoftTarget<T>> targets;
  targets.reserve(labels.size());
  for (int y : labels) targets.push_back(SoftTarget<T>::hard(y));
  return head_backward(head, z, std::span<const SoftTarget<T>>(targets));
}

}  // namespace siesta
