#pragma once

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "siesta/dataset.hpp"
#include "siesta/error.hpp"
#include "siesta/experiment/metrics.hpp"
#include "siesta/experiment/ordering.hpp"
#include "siesta/head/cosine_head.hpp"
#include "siesta/nn/network.hpp"
#include "siesta/nn/optimizer.hpp"
#include "siesta/pq/codec.hpp"
#include "siesta/random.hpp"
#include "siesta/replay/buffer.hpp"
#include "siesta/sleep/consolidate.hpp"
#include "siesta/sleep/train_step.hpp"

namespace siesta::experiment {

enum class Mode { siesta, awake_only, remind, offline_oracle };

inline std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::siesta: return "siesta";
    case Mode::awake_only: return "awake_only";
    case Mode::remind: return "remind";
    case Mode::offline_oracle: return "offline_oracle";
  }
  return "?";
}

inline Mode parse_mode(std::string_view s) {
  if (s == "siesta") return Mode::siesta;
  if (s == "awake_only") return Mode::awake_only;
  if (s == "remind") return Mode::remind;
  if (s == "offline_oracle") return Mode::offline_oracle;
  throw ConfigError("unknown mode '" + std::string(s) + "'");
}

struct ExperimentPlan {
  Mode mode = Mode::siesta;
  Ordering ordering = Ordering::class_incremental;
  std::vector<int> class_order;  // empty: ascending class ids
  std::size_t base_classes = 5;
  std::size_t sleep_every_samples = 0;  // 0 disables the sample trigger
  std::size_t sleep_every_classes = 0;  // 0 disables the classes-seen trigger
  bool sleep_at_end = true;
  std::uint64_t buffer_bytes = std::uint64_t{1} << 30;
  std::uint64_t update_cap = 0;  // 0: unlimited (post-base updates)
  std::size_t base_epochs = 20;
  std::uint64_t offline_updates = 0;  // 0: base updates + planned sleep updates
  std::size_t remind_rehearsal = 50;
  double remind_lr = 0.01;
  std::uint64_t seed = 0;

  friend bool operator==(const ExperimentPlan&, const ExperimentPlan&) = default;
};

struct ModelConfig {
  pq::PQConfig pq;
  bool pq_rotation = false;
  std::size_t rotation_iters = 5;
  std::size_t pq_train_max_vectors = 20000;
  std::size_t hidden = 32;
  std::size_t embed = 32;
  bool flatten = true;  // false: global average pooling before the dense layers
  double tau = 0.1;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ExperimentConfig {
  ExperimentPlan plan;
  ModelConfig model;
  sleep::SleepConfig sleep;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Stream order over the non-base training samples and the classes used for
/// base initialization.
struct StreamLayout {
  std::vector<int> class_order;
  std::set<int> base_classes;
  std::vector<std::size_t> base;    // train indices
  std::vector<std::size_t> stream;  // train indices in arrival order
};

inline StreamLayout make_layout(std::span<const int> labels, std::size_t num_classes, const ExperimentPlan& plan) {
  StreamLayout lay;
  lay.class_order = plan.class_order;
  if (lay.class_order.empty()) {
    lay.class_order.resize(num_classes);
    std::iota(lay.class_order.begin(), lay.class_order.end(), 0);
  }
  if (plan.base_classes >= num_classes) {
    throw ConfigError("plan.base_classes (" + std::to_string(plan.base_classes) + ") must be < number of classes (" +
                      std::to_string(num_classes) + ")");
  }
  for (int c : lay.class_order) {
    if (lay.base_classes.size() == plan.base_classes) break;
    lay.base_classes.insert(c);
  }
  std::vector<int> stream_labels;
  std::vector<std::size_t> stream_pos;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (lay.base_classes.count(labels[i])) {
      lay.base.push_back(i);
    } else {
      stream_labels.push_back(labels[i]);
      stream_pos.push_back(i);
    }
  }
  if (!stream_labels.empty()) {
    std::vector<int> stream_classes;
    for (int c : lay.class_order) {
      if (!lay.base_classes.count(c)) stream_classes.push_back(c);
    }
    const auto perm = make_ordering(stream_labels, plan.ordering, derive_seed(plan.seed, 101),
                                    plan.ordering == Ordering::iid ? std::span<const int>{} : std::span<const int>(stream_classes));
    for (auto p : perm) lay.stream.push_back(stream_pos[p]);
  }
  return lay;
}

/// Number of sleeps the trigger rules fire over `stream_labels`.
inline std::size_t planned_sleeps(std::span<const int> stream_labels, const std::set<int>& already_seen,
                                  const ExperimentPlan& plan) {
  std::size_t sleeps = 0, since = 0;
  std::set<int> seen = already_seen;
  std::set<int> new_since;
  for (int y : stream_labels) {
    if (plan.sleep_every_classes > 0 && !seen.count(y) && new_since.size() >= plan.sleep_every_classes) {
      ++sleeps;
      since = 0;
      new_since.clear();
    }
    if (!seen.count(y)) new_since.insert(y);
    seen.insert(y);
    ++since;
    if (plan.sleep_every_samples > 0 && since >= plan.sleep_every_samples) {
      ++sleeps;
      since = 0;
      new_since.clear();
    }
  }
  if (plan.sleep_at_end && since > 0) ++sleeps;
  return sleeps;
}

/// Full learner state for one run: codec, G, F, replay buffer and counters.
/// Stages are public so tests can drive them individually.
template <std::floating_point T>
class Experiment {
 public:
  Experiment(ExperimentConfig cfg, const FeatureDataset<T>& train, const FeatureDataset<T>& eval)
      : cfg_(std::move(cfg)), train_(train), eval_(eval), buffer_(cfg_.plan.buffer_bytes), rng_(cfg_.plan.seed) {
    train_.validate();
    eval_.validate();
    if (train_.size() == 0) throw ConfigError("training set is empty");
    if (eval_.num_classes != train_.num_classes) throw ConfigError("train and eval disagree on number of classes");
    if (cfg_.sleep.batch == 0) throw ConfigError("sleep.batch must be positive");
    layout_ = make_layout(train_.labels, train_.num_classes, cfg_.plan);
    if (layout_.base.empty()) throw ConfigError("no training samples belong to the base classes");
  }

  const ExperimentConfig& config() const { return cfg_; }
  const StreamLayout& layout() const { return layout_; }
  const pq::PQCodec& codec() const { return codec_; }
  const nn::Network<T>& network() const { return net_; }
  const CosineHead<T>& head() const { return head_; }
  CosineHead<T>& head() { return head_; }
  const replay::ReplayBuffer& buffer() const { return buffer_; }
  std::uint64_t updates() const { return updates_; }
  std::uint64_t base_updates() const { return base_updates_; }
  const std::set<int>& seen_classes() const { return seen_; }
  bool initialized() const { return initialized_; }
  bool stopped() const { return stopped_; }

  std::uint64_t memory_bytes() const { return buffer_.total_bytes() + codec_.model_bytes(); }

  /// PQ fit on base vectors, base samples into the buffer, head rows set to
  /// class means, then supervised training of G and F on reconstructions.
  void base_init() {
    std::vector<LatentTensor<T>> base_tensors;
    std::vector<int> base_labels;
    for (auto i : layout_.base) {
      base_tensors.push_back(train_.tensors[i]);
      base_labels.push_back(train_.labels[i]);
    }
    auto vectors = pq::flatten_vectors(std::span<const LatentTensor<T>>(base_tensors));
    const std::size_t d = base_tensors.front().channels();
    vectors = subsample_vectors(std::move(vectors), d, cfg_.model.pq_train_max_vectors, derive_seed(cfg_.plan.seed, 201));
    codec_ = pq::PQCodec::fit(cfg_.model.pq, vectors, d, derive_seed(cfg_.plan.seed, 202));
    if (cfg_.model.pq_rotation) codec_ = codec_.fit_rotation(vectors, cfg_.model.rotation_iters);

    net_ = make_network(base_tensors.front());
    head_ = CosineHead<T>(train_.num_classes, cfg_.model.embed, static_cast<T>(cfg_.model.tau));

    std::vector<std::size_t> order(base_tensors.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_range(order.begin(), order.end(), rng_);
    std::vector<LatentTensor<T>> recon(base_tensors.size());
    for (auto i : order) {
      auto enc = codec_.encode(base_tensors[i], base_labels[i]);
      recon[i] = codec_.decode<T>(enc);
      buffer_.insert(std::move(enc), rng_);
      peak_memory_ = std::max(peak_memory_, memory_bytes());
    }
    base_updates_ = supervised_fit(net_, head_, recon, base_labels, base_steps(base_tensors.size()));
    for (int c : layout_.base_classes) seen_.insert(c);

    eval_recon_.clear();
    eval_recon_.reserve(eval_.size());
    for (const auto& t : eval_.tensors) eval_recon_.push_back(codec_.decode<T>(codec_.encode(t)));
    initialized_ = true;
  }

  /// Streams the given training samples through the wake phase. Returns the
  /// prediction made for each sample right after it was learned.
  std::vector<int> run_wake_phase(std::span<const std::size_t> indices) {
    require_init();
    std::vector<int> preds;
    preds.reserve(indices.size());
    for (auto idx : indices) {
      if (stopped_) break;
      const auto& x = train_.tensors.at(idx);
      const int y = train_.labels.at(idx);
      auto enc = codec_.encode(x, y);
      auto recon = codec_.decode<T>(enc);
      std::vector<LatentTensor<T>> one{recon};

      std::vector<T> z;
      if (cfg_.plan.mode == Mode::remind) {
        if (!remind_step(one.front(), y, enc)) break;
        z = nn::embed(net_, std::span<const LatentTensor<T>>(one));
      } else {
        buffer_.insert(std::move(enc), rng_);
        z = nn::embed(net_, std::span<const LatentTensor<T>>(one));
        head_.online_update(z, y);
      }
      peak_memory_ = std::max(peak_memory_, memory_bytes());
      seen_.insert(y);
      ++streamed_;
      preds.push_back(head_.predict(z));
    }
    return preds;
  }

  /// One sleep cycle (no-op outside siesta mode). Returns its report.
  sleep::SleepReport sleep_now() {
    require_init();
    sleep::SleepReport rep;
    if (cfg_.plan.mode != Mode::siesta || stopped_) return rep;
    rep = sleep::consolidate(net_, head_, buffer_, codec_, cfg_.sleep, rng_, remaining_allowance());
    for (const auto& row : rep.log) {
      log_.push_back({log_.size(), row.loss, row.lr, updates_ + row.seen_updates});
    }
    updates_ += rep.updates;
    if (rep.hit_update_cap) stopped_ = true;
    ++sleeps_;
    return rep;
  }

  struct Evaluation {
    double accuracy = 0.0;  // percent over eval samples of seen classes
    std::vector<int> predictions;  // one per eval sample
  };

  Evaluation evaluate() const {
    require_init();
    return evaluate_on(net_, head_, eval_recon_, seen_);
  }

  /// Base init, then wake slices separated by sleeps, with pre/post-sleep
  /// evaluation at every boundary.
  MetricsRecord run() {
    if (cfg_.plan.mode == Mode::offline_oracle) return run_offline();
    MetricsRecord m;
    m.mode = std::string(mode_name(cfg_.plan.mode));
    base_init();
    auto ev = evaluate();
    m.base_alpha = ev.accuracy;
    m.steps.push_back({0, seen_.size(), 0, ev.accuracy, ev.accuracy, updates_, memory_bytes(), false});

    std::size_t since = 0;
    std::set<int> new_since;
    std::vector<std::size_t> slice;
    auto boundary = [&] {
      run_wake_phase(slice);
      slice.clear();
      StepRecord s;
      s.step = m.steps.size();
      const auto pre = evaluate();
      s.pre_sleep_acc = pre.accuracy;
      s.slept = cfg_.plan.mode == Mode::siesta && !stopped_;
      sleep_now();
      s.post_sleep_acc = s.slept ? evaluate().accuracy : pre.accuracy;
      s.seen_classes = seen_.size();
      s.streamed = streamed_;
      s.updates = updates_;
      s.memory_bytes = peak_memory_;
      m.steps.push_back(s);
      m.alpha.push_back(s.post_sleep_acc);
      since = 0;
      new_since.clear();
    };

    for (auto idx : layout_.stream) {
      if (stopped_) break;
      const int y = train_.labels[idx];
      const bool unseen = !seen_.count(y) && std::none_of(slice.begin(), slice.end(), [&](std::size_t j) {
        return train_.labels[j] == y;
      });
      if (cfg_.plan.sleep_every_classes > 0 && unseen && new_since.size() >= cfg_.plan.sleep_every_classes) boundary();
      if (unseen) new_since.insert(y);
      slice.push_back(idx);
      ++since;
      if (cfg_.plan.sleep_every_samples > 0 && since >= cfg_.plan.sleep_every_samples) boundary();
    }
    if (!slice.empty()) {
      if (cfg_.plan.sleep_at_end) {
        boundary();
      } else {
        run_wake_phase(slice);
        slice.clear();
        const auto ev2 = evaluate();
        m.steps.push_back({m.steps.size(), seen_.size(), streamed_, ev2.accuracy, ev2.accuracy, updates_, peak_memory_, false});
        m.alpha.push_back(ev2.accuracy);
      }
    }
    const auto final_eval = evaluate_on(net_, head_, eval_recon_, all_classes());
    m.final_predictions = final_eval.predictions;
    m.eval_truth = eval_.labels;
    m.final_alpha = m.steps.back().post_sleep_acc;
    m.mu = mean_accuracy(m.alpha);
    m.total_updates = updates_;
    m.base_updates = base_updates_;
    m.peak_memory_bytes = peak_memory_;
    m.streamed_samples = streamed_;
    m.sleeps = sleeps_;
    m.stopped_early = stopped_;
    m.update_log = log_;
    return m;
  }

  /// G and F trained on every training sample (raw features) with the same
  /// recipe and a total update budget equal to the continual run's.
  MetricsRecord run_offline() {
    MetricsRecord m;
    m.mode = std::string(mode_name(Mode::offline_oracle));
    net_ = make_network(train_.tensors.front());
    head_ = CosineHead<T>(train_.num_classes, cfg_.model.embed, static_cast<T>(cfg_.model.tau));
    std::uint64_t budget = cfg_.plan.offline_updates;
    if (budget == 0) budget = planned_offline_updates();
    const std::size_t steps = static_cast<std::size_t>(budget / cfg_.sleep.batch);
    updates_ = supervised_fit(net_, head_, train_.tensors, train_.labels, steps);
    initialized_ = true;
    for (int c : train_.classes_present()) seen_.insert(c);
    const auto ev = evaluate_on(net_, head_, eval_.tensors, all_classes());
    peak_memory_ = static_cast<std::uint64_t>(train_.size()) * train_.tensors.front().size() * sizeof(float);
    m.steps.push_back({1, seen_.size(), train_.size(), ev.accuracy, ev.accuracy, updates_, peak_memory_, false});
    m.alpha.push_back(ev.accuracy);
    m.final_alpha = ev.accuracy;
    m.total_updates = updates_;
    m.peak_memory_bytes = peak_memory_;
    m.final_predictions = ev.predictions;
    m.eval_truth = eval_.labels;
    m.streamed_samples = train_.size();
    return m;
  }

  /// Base-init updates plus the updates the planned sleeps would spend.
  std::uint64_t planned_offline_updates() const {
    std::vector<int> stream_labels;
    for (auto i : layout_.stream) stream_labels.push_back(train_.labels[i]);
    const auto sleeps = planned_sleeps(stream_labels, layout_.base_classes, cfg_.plan);
    return static_cast<std::uint64_t>(base_steps(layout_.base.size())) * cfg_.sleep.batch +
           static_cast<std::uint64_t>(sleeps) * cfg_.sleep.batches() * cfg_.sleep.batch;
  }

 private:
  nn::Network<T> make_network(const LatentTensor<T>& sample) const {
    return nn::Network<T>::default_stack(sample.channels(), cfg_.model.hidden, cfg_.model.embed,
                                         derive_seed(cfg_.plan.seed, 203), cfg_.model.flatten ? sample.positions() : 0);
  }

  std::size_t base_steps(std::size_t n) const {
    return (n * cfg_.plan.base_epochs + cfg_.sleep.batch - 1) / cfg_.sleep.batch;
  }

  std::set<int> all_classes() const {
    std::set<int> s;
    for (std::size_t c = 0; c < train_.num_classes; ++c) s.insert(static_cast<int>(c));
    return s;
  }

  void require_init() const {
    if (!initialized_) throw UsageError("experiment used before base initialization");
  }

  std::uint64_t remaining_allowance() const {
    if (cfg_.plan.update_cap == 0) return std::numeric_limits<std::uint64_t>::max();
    return cfg_.plan.update_cap > updates_ ? cfg_.plan.update_cap - updates_ : 0;
  }

  static std::vector<double> subsample_vectors(std::vector<double> v, std::size_t d, std::size_t max_vectors,
                                               std::uint64_t seed) {
    const std::size_t n = v.size() / d;
    if (max_vectors == 0 || n <= max_vectors) return v;
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    shuffle_range(idx.begin(), idx.end(), rng);
    idx.resize(max_vectors);
    std::sort(idx.begin(), idx.end());
    std::vector<double> out;
    out.reserve(max_vectors * d);
    for (auto i : idx) out.insert(out.end(), v.begin() + static_cast<std::ptrdiff_t>(i * d),
                                  v.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    return out;
  }

  /// Rows set to class means of the initial embeddings, then `steps` SGD
  /// updates over epoch-shuffled mini-batches. Returns backward passes spent.
  std::uint64_t supervised_fit(nn::Network<T>& net, CosineHead<T>& head, const std::vector<LatentTensor<T>>& tensors,
                               const std::vector<int>& labels, std::size_t steps) {
    const auto z = sleep::embed_all(net, std::span<const LatentTensor<T>>(tensors));
    const std::size_t e = net.output_dim();
    for (std::size_t i = 0; i < tensors.size(); ++i) head.online_update(std::span<const T>(z.data() + i * e, e), labels[i]);
    if (steps == 0) return 0;

    nn::OptimizerState<T> state(steps);
    std::vector<std::size_t> perm(tensors.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::size_t cursor = perm.size();
    std::uint64_t spent = 0;
    std::vector<LabeledTensor<T>> items;
    std::vector<LatentTensor<T>> batch;
    std::vector<SoftTarget<T>> targets;
    for (std::size_t s = 0; s < steps; ++s) {
      items.clear();
      while (items.size() < cfg_.sleep.batch) {
        if (cursor == perm.size()) {
          shuffle_range(perm.begin(), perm.end(), rng_);
          cursor = 0;
        }
        const auto i = perm[cursor++];
        items.push_back({tensors[i], labels[i]});
      }
      sleep::augment_batch(items, batch, targets, cfg_.sleep, rng_);
      sleep::train_step(net, head, state, std::span<const LatentTensor<T>>(batch), std::span<const SoftTarget<T>>(targets),
                        cfg_.sleep.optim, cfg_.sleep.head);
      spent += batch.size();
    }
    return spent;
  }

  // Mini-batch of the current sample plus `remind_rehearsal` uniform buffer
  // draws, one constant-LR SGD step, then the sample is stored.
  bool remind_step(const LatentTensor<T>& recon, int y, pq::EncodedTensor& enc) {
    std::vector<double> flat(buffer_.size(), 0.0);
    const auto idx = buffer_.empty() ? std::vector<std::size_t>{}
                                     : sleep::select_rehearsal_set(sleep::PolicyKind::uniform, buffer_, flat,
                                                                   cfg_.plan.remind_rehearsal, rng_);
    const std::uint64_t cost = idx.size() + 1;
    if (cost > remaining_allowance()) {
      stopped_ = true;
      return false;
    }
    auto items = buffer_.reconstruct_batch<T>(idx, codec_);
    std::vector<LatentTensor<T>> batch{recon};
    std::vector<SoftTarget<T>> targets{SoftTarget<T>::hard(y)};
    for (auto& it : items) {
      batch.push_back(std::move(it.tensor));
      targets.push_back(SoftTarget<T>::hard(it.label));
    }
    if (!head_.active(static_cast<std::size_t>(y))) {
      const auto z = nn::embed(net_, std::span<const LatentTensor<T>>(batch.data(), 1));
      head_.activate(static_cast<std::size_t>(y), z);
    }
    if (!remind_state_) {
      remind_state_.emplace(std::numeric_limits<std::size_t>::max());
    }
    auto optim = cfg_.sleep.optim;
    optim.schedule = nn::LrSchedule::constant;
    optim.lr = cfg_.plan.remind_lr;
    const auto r = sleep::train_step(net_, head_, *remind_state_, std::span<const LatentTensor<T>>(batch),
                                     std::span<const SoftTarget<T>>(targets), optim, cfg_.sleep.head);
    updates_ += cost;
    log_.push_back({log_.size(), r.loss, r.lr, updates_});
    buffer_.insert(std::move(enc), rng_);
    return true;
  }

  Evaluation evaluate_on(const nn::Network<T>& net, const CosineHead<T>& head, const std::vector<LatentTensor<T>>& tensors,
                         const std::set<int>& classes) const {
    Evaluation ev;
    const auto z = sleep::embed_all(net, std::span<const LatentTensor<T>>(tensors));
    const std::size_t e = net.output_dim();
    std::size_t total = 0, correct = 0;
    ev.predictions.resize(tensors.size());
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      ev.predictions[i] = head.predict(std::span<const T>(z.data() + i * e, e));
      if (!classes.count(eval_.labels[i])) continue;
      ++total;
      if (ev.predictions[i] == eval_.labels[i]) ++correct;
    }
    ev.accuracy = total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(total);
    return ev;
  }

  ExperimentConfig cfg_;
  const FeatureDataset<T>& train_;
  const FeatureDataset<T>& eval_;
  StreamLayout layout_;
  pq::PQCodec codec_;
  nn::Network<T> net_;
  CosineHead<T> head_;
  replay::ReplayBuffer buffer_;
  Rng rng_;
  std::optional<nn::OptimizerState<T>> remind_state_;
  std::vector<LatentTensor<T>> eval_recon_;
  std::set<int> seen_;
  std::vector<sleep::UpdateLogRow> log_;
  std::uint64_t updates_ = 0;
  std::uint64_t base_updates_ = 0;
  std::uint64_t peak_memory_ = 0;
  std::size_t streamed_ = 0;
  std::size_t sleeps_ = 0;
  bool initialized_ = false;
  bool stopped_ = false;
};

template <std::floating_point T>
MetricsRecord run_experiment(const ExperimentConfig& cfg, const FeatureDataset<T>& train, const FeatureDataset<T>& eval) {
  Experiment<T> ex(cfg, train, eval);
  return ex.run();
}

}  // namespace siesta::experiment
