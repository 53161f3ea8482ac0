#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "siesta/error.hpp"
#include "siesta/random.hpp"

namespace siesta::experiment {

enum class Ordering { iid, class_incremental, custom };

inline std::string_view ordering_name(Ordering o) {
  switch (o) {
    case Ordering::iid: return "iid";
    case Ordering::class_incremental: return "class_incremental";
    case Ordering::custom: return "custom";
  }
  return "?";
}

inline Ordering parse_ordering(std::string_view s) {
  if (s == "iid") return Ordering::iid;
  if (s == "class_incremental") return Ordering::class_incremental;
  if (s == "custom") return Ordering::custom;
  throw ConfigError("unknown ordering '" + std::string(s) + "'");
}

/// Permutation of positions [0, labels.size()).
///
/// class_incremental: classes in `class_order` (ascending ids when empty),
/// each class's positions shuffled with one engine seeded by `seed`, class by
/// class. iid: one global shuffle. custom: `class_order` is a class sequence
/// that may revisit classes; each occurrence takes the next
/// ceil(remaining / remaining occurrences) shuffled samples of that class.
inline std::vector<std::size_t> make_ordering(std::span<const int> labels, Ordering ordering, std::uint64_t seed,
                                              std::span<const int> class_order = {}) {
  if (labels.empty()) throw UsageError("make_ordering: no labels");
  Rng rng(seed);
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  if (ordering == Ordering::iid) {
    out.resize(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) out[i] = i;
    shuffle_range(out.begin(), out.end(), rng);
    return out;
  }

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<int> order(class_order.begin(), class_order.end());
  if (order.empty()) {
    if (ordering == Ordering::custom) throw ConfigError("custom ordering needs a class sequence");
    for (const auto& [c, idx] : by_class) order.push_back(c);
  }

  if (ordering == Ordering::class_incremental) {
    std::vector<int> seen;
    for (int c : order) {
      if (std::find(seen.begin(), seen.end(), c) != seen.end()) {
        throw ConfigError("class_incremental order repeats class " + std::to_string(c));
      }
      seen.push_back(c);
      auto it = by_class.find(c);
      if (it == by_class.end()) continue;
      auto idx = it->second;
      shuffle_range(idx.begin(), idx.end(), rng);
      out.insert(out.end(), idx.begin(), idx.end());
    }
    if (out.size() != labels.size()) throw ConfigError("class order does not cover every class present");
    return out;
  }

  // custom
  std::map<int, std::size_t> occurrences;
  for (int c : order) ++occurrences[c];
  for (auto& [c, idx] : by_class) {
    if (!occurrences.count(c)) throw ConfigError("custom order omits class " + std::to_string(c));
    shuffle_range(idx.begin(), idx.end(), rng);
  }
  std::map<int, std::size_t> cursor;
  for (int c : order) {
    auto it = by_class.find(c);
    if (it == by_class.end()) throw ConfigError("custom order names absent class " + std::to_string(c));
    const std::size_t remaining = it->second.size() - cursor[c];
    const std::size_t left = occurrences[c]--;
    const std::size_t take = (remaining + left - 1) / left;
    for (std::size_t k = 0; k < take; ++k) out.push_back(it->second[cursor[c]++]);
  }
  return out;
}

}  // namespace siesta::experiment
