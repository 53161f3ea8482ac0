#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "siesta/error.hpp"
#include "siesta/head/cosine_head.hpp"
#include "siesta/nn/network.hpp"
#include "siesta/pq/codec.hpp"
#include "siesta/random.hpp"
#include "siesta/replay/buffer.hpp"
#include "siesta/sleep/train_step.hpp"

namespace siesta::sleep {

enum class PolicyKind {
  balanced_uniform,
  uniform,
  min_rehearsal,
  max_interference,
  max_loss,
  min_margin,
  prototypical,
  balanced_prototypical,
};

inline constexpr std::pair<PolicyKind, std::string_view> kPolicyNames[] = {
    {PolicyKind::balanced_uniform, "balanced_uniform"},
    {PolicyKind::uniform, "uniform"},
    {PolicyKind::min_rehearsal, "min_rehearsal"},
    {PolicyKind::max_interference, "max_interference"},
    {PolicyKind::max_loss, "max_loss"},
    {PolicyKind::min_margin, "min_margin"},
    {PolicyKind::prototypical, "prototypical"},
    {PolicyKind::balanced_prototypical, "balanced_prototypical"},
};

inline std::string_view policy_name(PolicyKind k) {
  for (auto [kind, name] : kPolicyNames) {
    if (kind == k) return name;
  }
  return "?";
}

inline PolicyKind parse_policy(std::string_view s) {
  for (auto [kind, name] : kPolicyNames) {
    if (name == s) return kind;
  }
  throw ConfigError("unknown rehearsal policy '" + std::string(s) + "'");
}

inline bool needs_model(PolicyKind k) {
  return k == PolicyKind::max_interference || k == PolicyKind::max_loss || k == PolicyKind::min_margin ||
         k == PolicyKind::prototypical || k == PolicyKind::balanced_prototypical;
}

inline bool is_balanced(PolicyKind k) {
  return k == PolicyKind::balanced_uniform || k == PolicyKind::balanced_prototypical;
}

inline constexpr std::size_t kInterferenceNeighbors = 10;

namespace detail {

template <std::floating_point T>
std::vector<T> buffer_embeddings(const replay::ReplayBuffer& buffer, const pq::PQCodec& codec,
                                 const nn::Network<T>& net) {
  std::vector<LatentTensor<T>> tensors;
  tensors.reserve(buffer.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) tensors.push_back(buffer.peek<T>(i, codec));
  return embed_all(net, std::span<const LatentTensor<T>>(tensors));
}

template <std::floating_point T>
double cosine(const T* a, const T* b, std::size_t dim) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < dim; ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

}  // namespace detail

/// Per-entry sampling priority; higher means rehearse sooner. Uniform kinds
/// return zeros. Model-dependent kinds need `net` and `head`.
template <std::floating_point T>
std::vector<double> policy_scores(PolicyKind kind, const replay::ReplayBuffer& buffer, const pq::PQCodec& codec,
                                  const nn::Network<T>* net, const CosineHead<T>* head) {
  if (buffer.empty()) throw UsageError("policy_scores: empty buffer");
  const std::size_t n = buffer.size();
  std::vector<double> scores(n, 0.0);
  if (kind == PolicyKind::uniform || kind == PolicyKind::balanced_uniform) return scores;
  if (kind == PolicyKind::min_rehearsal) {
    for (std::size_t i = 0; i < n; ++i) scores[i] = -static_cast<double>(buffer.entry(i).rehearsal_count);
    return scores;
  }
  if (net == nullptr || (head == nullptr && kind != PolicyKind::prototypical &&
                         kind != PolicyKind::balanced_prototypical && kind != PolicyKind::max_interference)) {
    throw ConfigError(std::string("policy ") + std::string(policy_name(kind)) + " needs the current network and head");
  }
  const std::size_t dim = net->output_dim();
  const auto z = detail::buffer_embeddings(buffer, codec, *net);

  switch (kind) {
    case PolicyKind::max_loss:
      for (std::size_t i = 0; i < n; ++i) {
        const auto s = head->scores(std::span<const T>(z.data() + i * dim, dim));
        const double p = s.probs.at(static_cast<std::size_t>(buffer.entry(i).label()));
        scores[i] = -std::log(std::max(p, 1e-300));
      }
      break;
    case PolicyKind::min_margin:
      for (std::size_t i = 0; i < n; ++i) {
        auto p = head->scores(std::span<const T>(z.data() + i * dim, dim)).probs;
        std::partial_sort(p.begin(), p.begin() + std::min<std::size_t>(2, p.size()), p.end(), std::greater<>());
        const double margin = p.size() > 1 ? static_cast<double>(p[0] - p[1]) : static_cast<double>(p[0]);
        scores[i] = -margin;
      }
      break;
    case PolicyKind::max_interference: {
      std::vector<double> sims;
      for (std::size_t i = 0; i < n; ++i) {
        sims.clear();
        for (std::size_t j = 0; j < n; ++j) {
          if (buffer.entry(j).label() == buffer.entry(i).label()) continue;
          sims.push_back(detail::cosine(z.data() + i * dim, z.data() + j * dim, dim));
        }
        const std::size_t k = std::min(kInterferenceNeighbors, sims.size());
        if (k == 0) continue;
        std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(k), sims.end(), std::greater<>());
        scores[i] = std::accumulate(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(k), 0.0) /
                    static_cast<double>(k);
      }
      break;
    }
    case PolicyKind::prototypical:
    case PolicyKind::balanced_prototypical: {
      std::map<int, std::vector<double>> means;
      std::map<int, std::size_t> counts;
      for (std::size_t i = 0; i < n; ++i) {
        auto& m = means[buffer.entry(i).label()];
        m.resize(dim, 0.0);
        for (std::size_t c = 0; c < dim; ++c) m[c] += z[i * dim + c];
        ++counts[buffer.entry(i).label()];
      }
      for (auto& [c, m] : means) {
        for (auto& v : m) v /= static_cast<double>(counts[c]);
      }
      for (std::size_t i = 0; i < n; ++i) {
        const auto& m = means[buffer.entry(i).label()];
        double d2 = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
          const double d = z[i * dim + c] - m[c];
          d2 += d * d;
        }
        scores[i] = -std::sqrt(d2);
      }
      break;
    }
    default:
      break;
  }
  return scores;
}

namespace detail {

inline std::vector<std::size_t> uniform_subset(std::vector<std::size_t> pool, std::size_t k, Rng& rng) {
  k = std::min(k, pool.size());
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + uniform_index(rng, pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

// Highest scores first; ties broken by lower index.
inline std::vector<std::size_t> top_k(std::vector<std::size_t> pool, std::span<const double> scores, std::size_t k) {
  std::stable_sort(pool.begin(), pool.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  pool.resize(std::min(k, pool.size()));
  return pool;
}

// Weighted sampling without replacement, weight = rank / N (lowest score has
// rank 1), via exponential keys log(u) / w.
inline std::vector<std::size_t> rank_weighted_subset(std::span<const double> scores, std::size_t k, Rng& rng) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> weight(n);
  for (std::size_t r = 0; r < n; ++r) weight[order[r]] = static_cast<double>(r + 1) / static_cast<double>(n);
  std::vector<std::pair<double, std::size_t>> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = std::max(uniform01(rng), 1e-300);
    keys[i] = {std::log(u) / weight[i], i};
  }
  std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(k), keys.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = keys[i].second;
  return out;
}

}  // namespace detail

/// Per-class quotas summing to min(size, buffer size): floor(size / K) each,
/// the remainder handed out round-robin from a random starting class, and any
/// quota a class cannot fill passed on to classes with spare entries.
inline std::map<int, std::size_t> balanced_quotas(const replay::ReplayBuffer& buffer, std::size_t size, Rng& rng) {
  const auto classes = buffer.classes();
  const std::size_t K = classes.size();
  std::map<int, std::size_t> quota;
  std::map<int, std::size_t> avail;
  for (int c : classes) avail[c] = buffer.indices_of(c).size();
  size = std::min(size, buffer.size());
  const std::size_t start = uniform_index(rng, K);
  for (int c : classes) quota[c] = size / K;
  for (std::size_t i = 0; i < size % K; ++i) ++quota[classes[(start + i) % K]];
  std::size_t spill = 0;
  for (int c : classes) {
    if (quota[c] > avail[c]) {
      spill += quota[c] - avail[c];
      quota[c] = avail[c];
    }
  }
  for (std::size_t i = 0; spill > 0; i = (i + 1) % K) {
    const int c = classes[(start + i) % K];
    if (quota[c] < avail[c]) {
      ++quota[c];
      --spill;
    }
  }
  return quota;
}

/// Indices to rehearse, ascending. Takes the whole buffer when size >= entries.
inline std::vector<std::size_t> select_rehearsal_set(PolicyKind kind, const replay::ReplayBuffer& buffer,
                                                     std::span<const double> scores, std::size_t size, Rng& rng) {
  if (buffer.empty()) throw UsageError("select_rehearsal_set: empty buffer");
  if (scores.size() != buffer.size()) throw UsageError("select_rehearsal_set: score count does not match buffer");
  const std::size_t n = buffer.size();
  std::vector<std::size_t> out;
  if (size >= n) {
    out.resize(n);
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
  }
  if (is_balanced(kind)) {
    for (const auto& [c, q] : balanced_quotas(buffer, size, rng)) {
      auto members = buffer.indices_of(c);
      auto picked = kind == PolicyKind::balanced_uniform ? detail::uniform_subset(std::move(members), q, rng)
                                                         : detail::top_k(std::move(members), scores, q);
      out.insert(out.end(), picked.begin(), picked.end());
    }
  } else if (kind == PolicyKind::uniform) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    out = detail::uniform_subset(std::move(all), size, rng);
  } else {
    out = detail::rank_weighted_subset(scores, size, rng);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace siesta::sleep
