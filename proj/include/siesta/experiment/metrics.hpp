#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "siesta/sleep/consolidate.hpp"

namespace siesta::experiment {

/// One evaluation boundary. Step 0 is the post-base-initialization point.
struct StepRecord {
  std::size_t step = 0;
  std::size_t seen_classes = 0;
  std::size_t streamed = 0;
  double pre_sleep_acc = 0.0;   // percent
  double post_sleep_acc = 0.0;  // percent; equals pre when no sleep ran
  std::uint64_t updates = 0;    // cumulative U after this step
  std::uint64_t memory_bytes = 0;
  bool slept = false;
};

struct MetricsRecord {
  std::string mode;
  std::vector<StepRecord> steps;
  std::vector<double> alpha;  // alpha_t for t = 1..T (post-base steps)
  std::optional<double> mu;   // mean of alpha; absent when T = 0
  double final_alpha = 0.0;
  double base_alpha = 0.0;
  std::uint64_t total_updates = 0;  // U, excluding base initialization
  std::uint64_t base_updates = 0;
  std::uint64_t peak_memory_bytes = 0;
  std::size_t streamed_samples = 0;
  std::size_t sleeps = 0;
  bool stopped_early = false;
  std::vector<int> eval_truth;
  std::vector<int> final_predictions;
  std::vector<sleep::UpdateLogRow> update_log;  // global step, cumulative U
};

inline std::optional<double> mean_accuracy(std::span<const double> alpha) {
  if (alpha.empty()) return std::nullopt;
  double s = 0.0;
  for (double a : alpha) s += a;
  return s / static_cast<double>(alpha.size());
}

}  // namespace siesta::experiment
