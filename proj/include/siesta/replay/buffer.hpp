#pragma once

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "siesta/error.hpp"
#include "siesta/pq/codec.hpp"
#include "siesta/random.hpp"
#include "siesta/tensor.hpp"

namespace siesta::replay {

struct ReplayEntry {
  pq::EncodedTensor encoded;
  std::uint64_t rehearsal_count = 0;
  std::uint64_t insert_time = 0;

  int label() const { return encoded.label; }
};

struct BufferStats {
  std::map<int, std::size_t> class_histogram;
  std::size_t total_bytes = 0;
  std::size_t entries = 0;
  std::vector<std::uint64_t> rehearsal_counts;
};

struct InsertOutcome {
  bool evicted = false;
  int evicted_class = -1;
  std::uint64_t evicted_insert_time = 0;
};

/// Byte-budgeted store of PQ-encoded tensors. When an insert pushes the total
/// over capacity, a uniformly random entry of the most populous class (lowest
/// class id on ties, the new entry included in the count) is removed.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity_bytes) : capacity_(capacity_bytes) {}

  InsertOutcome insert(pq::EncodedTensor enc, Rng& rng) {
    if (enc.bytes() > capacity_) {
      throw ConfigError("replay insert: entry of " + std::to_string(enc.bytes()) + " bytes exceeds capacity " +
                        std::to_string(capacity_));
    }
    const int label = enc.label;
    total_bytes_ += enc.bytes();
    by_class_[label].push_back(entries_.size());
    entries_.push_back({std::move(enc), 0, clock_++});

    InsertOutcome out;
    while (total_bytes_ > capacity_) {
      const int victim_class = largest_class();
      auto& members = by_class_.at(victim_class);
      const std::size_t slot = uniform_index(rng, members.size());
      out.evicted = true;
      out.evicted_class = victim_class;
      out.evicted_insert_time = entries_[members[slot]].insert_time;
      remove_entry(members[slot]);
    }
    return out;
  }

  /// Decodes the requested entries and bumps their rehearsal counters.
  template <std::floating_point T>
  std::vector<LabeledTensor<T>> reconstruct_batch(std::span<const std::size_t> indices, const pq::PQCodec& codec) {
    for (auto i : indices) check_index(i);
    std::vector<LabeledTensor<T>> out;
    out.reserve(indices.size());
    for (auto i : indices) {
      out.push_back({codec.decode<T>(entries_[i].encoded), entries_[i].label()});
      ++entries_[i].rehearsal_count;
    }
    return out;
  }

  /// Decode without counting as a rehearsal (policy scoring, audits).
  template <std::floating_point T>
  LatentTensor<T> peek(std::size_t index, const pq::PQCodec& codec) const {
    check_index(index);
    return codec.decode<T>(entries_[index].encoded);
  }

  BufferStats snapshot_stats() const {
    BufferStats s;
    for (const auto& [c, members] : by_class_) {
      if (!members.empty()) s.class_histogram[c] = members.size();
    }
    s.total_bytes = total_bytes_;
    s.entries = entries_.size();
    s.rehearsal_counts.reserve(entries_.size());
    for (const auto& e : entries_) s.rehearsal_counts.push_back(e.rehearsal_count);
    return s;
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t capacity_bytes() const { return capacity_; }
  std::size_t total_bytes() const { return total_bytes_; }
  const ReplayEntry& entry(std::size_t i) const {
    check_index(i);
    return entries_[i];
  }
  const std::vector<ReplayEntry>& entries() const { return entries_; }

  std::vector<int> classes() const {
    std::vector<int> out;
    for (const auto& [c, members] : by_class_) {
      if (!members.empty()) out.push_back(c);
    }
    return out;
  }

  /// Entry indices of class `c`, ascending.
  std::vector<std::size_t> indices_of(int c) const {
    auto it = by_class_.find(c);
    if (it == by_class_.end()) return {};
    auto v = it->second;
    std::sort(v.begin(), v.end());
    return v;
  }

  /// The class an overflow would evict from right now.
  int largest_class() const {
    int best = -1;
    std::size_t best_n = 0;
    for (const auto& [c, members] : by_class_) {
      if (members.size() > best_n) {
        best_n = members.size();
        best = c;
      }
    }
    if (best < 0) throw UsageError("replay buffer is empty");
    return best;
  }

  /// One JSON object per line: {"class", "codes" (base64), "rehearsal_count"}.
  void dump_jsonl(std::ostream& os) const {
    for (const auto& e : entries_) {
      nlohmann::ordered_json j;
      j["class"] = e.label();
      j["codes"] = base64_encode(e.encoded.codes);
      j["rehearsal_count"] = e.rehearsal_count;
      os << j.dump() << '\n';
    }
  }

  static std::string base64_encode(std::span<const std::uint8_t> bytes) {
    static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
      const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
      out += kAlphabet[(v >> 18) & 63];
      out += kAlphabet[(v >> 12) & 63];
      out += kAlphabet[(v >> 6) & 63];
      out += kAlphabet[v & 63];
    }
    if (i + 1 == bytes.size()) {
      const std::uint32_t v = bytes[i] << 16;
      out += kAlphabet[(v >> 18) & 63];
      out += kAlphabet[(v >> 12) & 63];
      out += "==";
    } else if (i + 2 == bytes.size()) {
      const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
      out += kAlphabet[(v >> 18) & 63];
      out += kAlphabet[(v >> 12) & 63];
      out += kAlphabet[(v >> 6) & 63];
      out += '=';
    }
    return out;
  }

 private:
  void check_index(std::size_t i) const {
    if (i >= entries_.size()) {
      throw UsageError("replay index " + std::to_string(i) + " out of range (size " + std::to_string(entries_.size()) +
                       ")");
    }
  }

  // Swap-remove; fixes the moved entry's slot in its class list.
  void remove_entry(std::size_t idx) {
    const int c = entries_[idx].label();
    total_bytes_ -= entries_[idx].encoded.bytes();
    auto& members = by_class_.at(c);
    members.erase(std::find(members.begin(), members.end(), idx));
    const std::size_t last = entries_.size() - 1;
    if (idx != last) {
      auto& moved = by_class_.at(entries_[last].label());
      *std::find(moved.begin(), moved.end(), last) = idx;
      entries_[idx] = std::move(entries_[last]);
    }
    entries_.pop_back();
  }

  std::size_t capacity_;
  std::size_t total_bytes_ = 0;
  std::uint64_t clock_ = 0;
  std::vector<ReplayEntry> entries_;
  std::map<int, std::vector<std::size_t>> by_class_;
};

}  // namespace siesta::replay
