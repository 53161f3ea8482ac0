#pragma once

#include <algorithm>
#include <concepts>
#include <span>
#include <vector>

#include "siesta/head/cosine_head.hpp"
#include "siesta/nn/network.hpp"
#include "siesta/nn/optimizer.hpp"
#include "siesta/tensor.hpp"

namespace siesta::sleep {

struct HeadTrainConfig {
  bool learn_temperature = true;
  double min_temperature = 1e-3;

  friend bool operator==(const HeadTrainConfig&, const HeadTrainConfig&) = default;
};

struct StepResult {
  double loss = 0.0;
  double lr = 0.0;  // scheduled LR at depth 0
};

/// One SGD update of G and F on a mini-batch. The head rows train at depth 0;
/// the temperature is stepped as an inverse temperature (1/tau) so its
/// gradient scale does not blow up at small tau.
template <std::floating_point T>
StepResult train_step(nn::Network<T>& net, CosineHead<T>& head, nn::OptimizerState<T>& state,
                      std::span<const LatentTensor<T>> batch, std::span<const SoftTarget<T>> targets,
                      const nn::SgdConfig& cfg, const HeadTrainConfig& head_cfg = {}) {
  auto fwd = nn::forward(net, batch);
  auto hg = head_backward(head, std::span<const T>(fwd.embeddings), targets);
  auto ng = nn::backward(net, fwd.tape, std::span<const T>(hg.inputs));

  auto groups = nn::network_groups(net, ng);
  groups.push_back({head.weights(), std::span<const T>(hg.weights), 0, true, "head.weights"});
  T inv_tau = T(1) / head.tau();
  // d(1/tau) = -tau^2 dtau
  const T grad_inv_tau = head_cfg.learn_temperature ? -head.tau() * head.tau() * hg.tau : T(0);
  groups.push_back({std::span<T>(&inv_tau, 1), std::span<const T>(&grad_inv_tau, 1), 0, false, "head.inv_temperature"});

  StepResult r;
  r.lr = nn::sgd_step(std::span<nn::ParamGroup<T>>(groups), state, cfg);
  r.loss = static_cast<double>(hg.loss);
  net.touch();
  const T max_inv = static_cast<T>(1.0 / head_cfg.min_temperature);
  head.set_tau(T(1) / std::clamp(inv_tau, T(1e-6), max_inv));
  return r;
}

/// Embeddings for many tensors, evaluated in chunks.
template <std::floating_point T>
std::vector<T> embed_all(const nn::Network<T>& net, std::span<const LatentTensor<T>> tensors, std::size_t chunk = 256) {
  std::vector<T> out;
  out.reserve(tensors.size() * net.output_dim());
  for (std::size_t i = 0; i < tensors.size(); i += chunk) {
    const std::size_t n = std::min(chunk, tensors.size() - i);
    auto e = nn::embed(net, tensors.subspan(i, n));
    out.insert(out.end(), e.begin(), e.end());
  }
  return out;
}

}  // namespace siesta::sleep
