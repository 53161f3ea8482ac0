#pragma once

#include <concepts>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "siesta/error.hpp"
#include "siesta/head/cosine_head.hpp"
#include "siesta/nn/network.hpp"
#include "siesta/nn/optimizer.hpp"
#include "siesta/pq/codec.hpp"
#include "siesta/random.hpp"
#include "siesta/replay/buffer.hpp"
#include "siesta/sleep/augment.hpp"
#include "siesta/sleep/policy.hpp"
#include "siesta/sleep/train_step.hpp"

namespace siesta::sleep {

enum class Augmentation { none, mixup_cutmix };

inline std::string_view augmentation_name(Augmentation a) {
  return a == Augmentation::none ? "none" : "mixup_cutmix";
}

inline Augmentation parse_augmentation(std::string_view s) {
  if (s == "none") return Augmentation::none;
  if (s == "mixup_cutmix") return Augmentation::mixup_cutmix;
  throw ConfigError("unknown augmentation '" + std::string(s) + "'");
}

struct SleepConfig {
  std::size_t updates = 0;  // m: backward passes allowed per sleep
  std::size_t batch = 64;   // q
  Augmentation augmentation = Augmentation::none;
  double p_cutmix = 0.6;
  double p_mixup = 0.4;
  MixConfig mix;
  PolicyKind policy = PolicyKind::balanced_uniform;
  nn::SgdConfig optim;
  HeadTrainConfig head;

  std::size_t batches() const { return batch == 0 ? 0 : updates / batch; }

  friend bool operator==(const SleepConfig&, const SleepConfig&) = default;
};

struct UpdateLogRow {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::uint64_t seen_updates = 0;  // cumulative backward-passed samples in this sleep
};

struct SleepReport {
  std::vector<UpdateLogRow> log;
  std::size_t batches_run = 0;
  std::uint64_t updates = 0;
  std::size_t dropped_updates = 0;  // m mod q, rounded away
  bool hit_update_cap = false;
};

inline void write_update_log_csv(std::ostream& os, std::span<const UpdateLogRow> rows, bool header = true) {
  if (header) os << "step,loss,lr,seen_updates\n";
  for (const auto& r : rows) {
    os << r.step << ',' << r.loss << ',' << r.lr << ',' << r.seen_updates << '\n';
  }
}

/// Builds one mini-batch: hard targets, or a batch-wide cutmix/mixup against a
/// shuffled partner ordering of the same batch.
template <std::floating_point T>
void augment_batch(std::vector<LabeledTensor<T>>& items, std::vector<LatentTensor<T>>& tensors,
                   std::vector<SoftTarget<T>>& targets, const SleepConfig& cfg, Rng& rng) {
  tensors.clear();
  targets.clear();
  std::optional<MixMode> mode;
  if (cfg.augmentation == Augmentation::mixup_cutmix) {
    const double u = uniform01(rng);
    if (u < cfg.p_cutmix) {
      mode = MixMode::cutmix;
    } else if (u < cfg.p_cutmix + cfg.p_mixup) {
      mode = MixMode::mixup;
    }
  }
  if (!mode) {
    for (auto& it : items) {
      targets.push_back(SoftTarget<T>::hard(it.label));
      tensors.push_back(std::move(it.tensor));
    }
    return;
  }
  std::vector<std::size_t> partner(items.size());
  std::iota(partner.begin(), partner.end(), std::size_t{0});
  shuffle_range(partner.begin(), partner.end(), rng);
  if (*mode == MixMode::mixup) {
    const T lambda = static_cast<T>(sample_beta(rng, cfg.mix.mixup_alpha, cfg.mix.mixup_alpha));
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& b = items[partner[i]];
      auto r = mixup(items[i].tensor, items[i].label, b.tensor, b.label, lambda);
      tensors.push_back(std::move(r.tensor));
      targets.push_back(r.target);
    }
  } else {
    const auto box = random_cut_box(items.front().tensor.rows(), items.front().tensor.cols(), cfg.mix.cutmix_beta, rng);
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& b = items[partner[i]];
      auto r = cutmix(items[i].tensor, items[i].label, b.tensor, b.label, box);
      tensors.push_back(std::move(r.tensor));
      targets.push_back(r.target);
    }
  }
}

/// One sleep: n = floor(m / q) mini-batches drawn from the buffer by the
/// policy (scores computed once, up front), each reconstructed, optionally
/// mixed, and used for one SGD step under a fresh OneCycle spanning n steps.
/// Stops early, cleanly, if the next batch would exceed `update_allowance`.
template <std::floating_point T>
SleepReport consolidate(nn::Network<T>& net, CosineHead<T>& head, replay::ReplayBuffer& buffer,
                        const pq::PQCodec& codec, const SleepConfig& cfg, Rng& rng,
                        std::uint64_t update_allowance = std::numeric_limits<std::uint64_t>::max()) {
  SleepReport report;
  if (cfg.batch == 0) throw ConfigError("sleep batch size q must be positive");
  if (cfg.p_cutmix < 0 || cfg.p_mixup < 0 || cfg.p_cutmix + cfg.p_mixup > 1.0 + 1e-12) {
    throw ConfigError("sleep: augmentation probabilities must lie in [0,1] and sum to at most 1");
  }
  const std::size_t n = cfg.batches();
  report.dropped_updates = cfg.updates - n * cfg.batch;
  if (n == 0) return report;
  if (buffer.empty()) throw UsageError("consolidate: buffer is empty");

  const auto scores = policy_scores<T>(cfg.policy, buffer, codec, &net, &head);
  nn::OptimizerState<T> state(n);
  std::vector<LatentTensor<T>> tensors;
  std::vector<SoftTarget<T>> targets;

  for (std::size_t step = 0; step < n; ++step) {
    const auto indices = select_rehearsal_set(cfg.policy, buffer, scores, cfg.batch, rng);
    if (report.updates + indices.size() > update_allowance) {
      report.hit_update_cap = true;
      break;
    }
    auto items = buffer.reconstruct_batch<T>(indices, codec);
    augment_batch(items, tensors, targets, cfg, rng);
    const auto r = train_step(net, head, state, std::span<const LatentTensor<T>>(tensors),
                              std::span<const SoftTarget<T>>(targets), cfg.optim, cfg.head);
    report.updates += indices.size();
    ++report.batches_run;
    report.log.push_back({step, r.loss, r.lr, report.updates});
  }
  return report;
}

}  // namespace siesta::sleep
