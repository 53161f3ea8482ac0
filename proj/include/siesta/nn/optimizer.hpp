#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "siesta/error.hpp"
#include "siesta/nn/network.hpp"

namespace siesta::nn {

struct OneCycleConfig {
  double pct_start = 0.3;
  double div_start = 25.0;
  double div_final = 1e4;

  friend bool operator==(const OneCycleConfig&, const OneCycleConfig&) = default;
};

enum class LrSchedule { one_cycle, constant };

struct SgdConfig {
  double lr = 0.2;  // peak LR of the output layer
  double momentum = 0.9;
  double weight_decay = 1e-5;
  double layer_decay = 0.99;
  LrSchedule schedule = LrSchedule::one_cycle;
  OneCycleConfig one_cycle;

  friend bool operator==(const SgdConfig&, const SgdConfig&) = default;
};

/// Cosine warmup from max_lr/div_start to max_lr over pct_start*total steps,
/// then cosine anneal down to max_lr/div_final at step == total.
inline double onecycle_lr(std::size_t step, std::size_t total, double max_lr, const OneCycleConfig& cfg = {}) {
  if (total == 0) throw ConfigError("onecycle_lr: total steps must be positive");
  if (step > total) throw UsageError("onecycle_lr: step beyond total");
  const double start = max_lr / cfg.div_start;
  const double final_lr = max_lr / cfg.div_final;
  const double warm = cfg.pct_start * static_cast<double>(total);
  const double s = static_cast<double>(step);
  if (s <= warm && warm > 0.0) {
    const double t = s / warm;
    return max_lr + (start - max_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
  }
  const double span = static_cast<double>(total) - warm;
  if (span <= 0.0) return max_lr;
  const double t = (s - warm) / span;
  return final_lr + (max_lr - final_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

inline double layer_lr(double scheduled_lr, double layer_decay, int depth_index) {
  return scheduled_lr * std::pow(layer_decay, depth_index);
}

/// One parameter array seen by the optimizer.
template <std::floating_point T>
struct ParamGroup {
  std::span<T> values;
  std::span<const T> grads;
  int depth_index = 0;
  bool weight_decay = true;
  std::string name;
};

template <std::floating_point T>
struct OptimizerState {
  std::vector<std::vector<T>> velocity;
  std::size_t step = 0;
  std::size_t total_steps = 0;

  explicit OptimizerState(std::size_t total = 0) : total_steps(total) {}
};

/// v <- mu v + g + wd theta ; theta <- theta - lr_layer v. Returns the
/// scheduled (depth-0) LR used for this step.
template <std::floating_point T>
double sgd_step(std::span<ParamGroup<T>> groups, OptimizerState<T>& state, const SgdConfig& cfg) {
  if (state.step >= state.total_steps) {
    throw UsageError("sgd_step: step " + std::to_string(state.step) + " >= total " + std::to_string(state.total_steps));
  }
  for (const auto& g : groups) {
    if (g.values.size() != g.grads.size()) throw UsageError("sgd_step: gradient shape mismatch in " + g.name);
    for (std::size_t i = 0; i < g.grads.size(); ++i) {
      if (!std::isfinite(g.grads[i])) {
        throw NumericalError("non-finite gradient in " + g.name + " at index " + std::to_string(i) + " (step " +
                             std::to_string(state.step) + ")");
      }
    }
  }
  if (state.velocity.empty()) {
    state.velocity.resize(groups.size());
    for (std::size_t k = 0; k < groups.size(); ++k) state.velocity[k].assign(groups[k].values.size(), T(0));
  } else if (state.velocity.size() != groups.size()) {
    throw UsageError("sgd_step: parameter groups changed between steps");
  }

  const double sched = cfg.schedule == LrSchedule::one_cycle
                           ? onecycle_lr(state.step, state.total_steps, cfg.lr, cfg.one_cycle)
                           : cfg.lr;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    auto& g = groups[k];
    auto& v = state.velocity[k];
    if (v.size() != g.values.size()) throw UsageError("sgd_step: momentum buffer shape mismatch in " + g.name);
    const T lr = static_cast<T>(layer_lr(sched, cfg.layer_decay, g.depth_index));
    const T mu = static_cast<T>(cfg.momentum);
    const T wd = g.weight_decay ? static_cast<T>(cfg.weight_decay) : T(0);
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = mu * v[i] + g.grads[i] + wd * g.values[i];
      g.values[i] -= lr * v[i];
    }
  }
  ++state.step;
  return sched;
}

/// Parameter groups for every trainable layer of `net`, paired with `grads`.
template <std::floating_point T>
std::vector<ParamGroup<T>> network_groups(Network<T>& net, const NetworkGrads<T>& grads) {
  if (grads.layers.size() != net.layers().size()) throw UsageError("gradient layer count mismatch");
  std::vector<ParamGroup<T>> groups;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    auto& layer = net.layers()[i];
    if (!is_trainable(layer.spec.kind)) continue;
    const auto& g = grads.layers[i];
    const std::string base = "layer" + std::to_string(i);
    groups.push_back({layer.weight, g.weight, layer.depth_index, true, base + ".weight"});
    groups.push_back({layer.bias, g.bias, layer.depth_index, true, base + ".bias"});
  }
  return groups;
}

template <std::floating_point T>
double sgd_step(Network<T>& net, OptimizerState<T>& state, const NetworkGrads<T>& grads, const SgdConfig& cfg) {
  auto groups = network_groups(net, grads);
  const double lr = sgd_step(std::span<ParamGroup<T>>(groups), state, cfg);
  net.touch();
  return lr;
}

}  // namespace siesta::nn
