#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "test_util.hpp"

using namespace siesta;
using siesta::testing::fake_entry;
using siesta::testing::random_tensor;

namespace {

constexpr std::size_t kCodes = 12;
const std::size_t kEntry = kCodes + pq::EncodedTensor::kLabelBytes;

std::map<int, std::size_t> histogram(const replay::ReplayBuffer& b) { return b.snapshot_stats().class_histogram; }

double chi2_p(const std::vector<double>& observed) {
  double total = 0;
  for (double o : observed) total += o;
  const double expected = total / static_cast<double>(observed.size());
  double x = 0;
  for (double o : observed) x += (o - expected) * (o - expected) / expected;
  boost::math::chi_squared dist(static_cast<double>(observed.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, x));
}

}  // namespace

TEST(ReplayBuffer, EvictsFromTheLargestClass) {
  replay::ReplayBuffer b(3 * kEntry);
  Rng rng(0);
  b.insert(fake_entry(0, kCodes), rng);
  b.insert(fake_entry(0, kCodes), rng);
  EXPECT_FALSE(b.insert(fake_entry(1, kCodes), rng).evicted);
  const auto out = b.insert(fake_entry(1, kCodes), rng);
  EXPECT_TRUE(out.evicted);
  EXPECT_EQ(out.evicted_class, 0);
  EXPECT_EQ(histogram(b), (std::map<int, std::size_t>{{0, 1}, {1, 2}}));
}

TEST(ReplayBuffer, BelowCapacityJustCounts) {
  replay::ReplayBuffer b(10 * kEntry);
  Rng rng(0);
  for (int i = 0; i < 10; ++i) {
    EXPECT_FALSE(b.insert(fake_entry(i % 3, kCodes), rng).evicted);
    EXPECT_EQ(b.size(), static_cast<std::size_t>(i + 1));
  }
  EXPECT_EQ(b.total_bytes(), 10 * kEntry);
}

TEST(ReplayBuffer, OversizedEntryIsConfigError) {
  replay::ReplayBuffer b(kEntry - 1);
  Rng rng(0);
  EXPECT_THROW(b.insert(fake_entry(0, kCodes), rng), ConfigError);
}

TEST(ReplayBuffer, TieGoesToLowestClassId) {
  replay::ReplayBuffer b(4 * kEntry);
  Rng rng(1);
  for (int c : {2, 2, 1, 1}) b.insert(fake_entry(c, kCodes), rng);
  const auto out = b.insert(fake_entry(0, kCodes), rng);
  EXPECT_EQ(out.evicted_class, 1);
}

TEST(ReplayBuffer, WithinClassEvictionIsUniform) {
  // Full buffer {A:5, B:5}; inserting A evicts one of six A entries.
  std::vector<double> hits(6, 0.0);
  Rng rng(123);
  for (int trial = 0; trial < 10000; ++trial) {
    replay::ReplayBuffer b(10 * kEntry);
    for (int i = 0; i < 5; ++i) b.insert(fake_entry(0, kCodes), rng);
    for (int i = 0; i < 5; ++i) b.insert(fake_entry(1, kCodes), rng);
    const auto out = b.insert(fake_entry(0, kCodes), rng);
    ASSERT_EQ(out.evicted_class, 0);
    const auto t = out.evicted_insert_time;
    ASSERT_TRUE(t < 5 || t == 10);
    hits[t < 5 ? t : 5] += 1;
  }
  EXPECT_GT(chi2_p(hits), 0.01);
}

TEST(ReplayBuffer, RandomOperationsRespectTheLaw) {
  Rng rng(77);
  const std::size_t capacity = 40 * kEntry + 7;
  replay::ReplayBuffer b(capacity);
  for (int op = 0; op < 100000; ++op) {
    const int label = static_cast<int>(uniform_index(rng, 6));
    auto h = histogram(b);
    ++h[label];
    const std::size_t peak = std::max_element(h.begin(), h.end(), [](auto& a, auto& c) { return a.second < c.second; })->second;
    const auto out = b.insert(fake_entry(label, kCodes), rng);
    ASSERT_LE(b.total_bytes(), capacity);
    if (out.evicted) {
      ASSERT_EQ(h.at(out.evicted_class), peak) << "op " << op;
      for (const auto& [c, n] : h) {
        if (n == peak) {
          ASSERT_EQ(out.evicted_class, c) << "tie must go to the lowest id";
          break;
        }
      }
    }
    if (op % 97 == 0 && !b.empty()) {
      const std::size_t i = uniform_index(rng, b.size());
      const auto before = b.entry(i).rehearsal_count;
      const std::vector<std::size_t> idx{i};
      b.reconstruct_batch<double>(idx, pq::PQCodec(1, 1, 1, {0.0}));
      ASSERT_EQ(b.entry(i).rehearsal_count, before + 1);
    }
  }
  const auto s = b.snapshot_stats();
  std::size_t bytes = 0, count = 0;
  for (const auto& e : b.entries()) bytes += e.encoded.bytes();
  for (const auto& [c, n] : s.class_histogram) count += n;
  EXPECT_EQ(s.total_bytes, bytes);
  EXPECT_EQ(count, b.size());
  EXPECT_EQ(s.rehearsal_counts.size(), b.size());
}

TEST(ReplayBuffer, MixedSizesNeverExceedCapacity) {
  Rng rng(78);
  const std::size_t capacity = 300;
  replay::ReplayBuffer b(capacity);
  for (int op = 0; op < 100000; ++op) {
    const std::size_t before = b.size();
    const auto out = b.insert(fake_entry(static_cast<int>(uniform_index(rng, 5)), 4 + uniform_index(rng, 60)), rng);
    ASSERT_LE(b.total_bytes(), capacity);
    ASSERT_EQ(out.evicted, b.size() <= before);
  }
}

TEST(ReplayBuffer, BalanceIsReachedAndKept) {
  Rng rng(5);
  replay::ReplayBuffer b(50 * kEntry);
  bool balanced = false;
  for (int t = 0; t < 20000; ++t) {
    b.insert(fake_entry(static_cast<int>(uniform_index(rng, 7)), kCodes), rng);
    const auto h = histogram(b);
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& [c, n] : h) {
      lo = std::min(lo, n);
      hi = std::max(hi, n);
    }
    if (balanced) {
      ASSERT_LE(hi - lo, 1u) << "step " << t;
    }
    if (b.total_bytes() + kEntry > b.capacity_bytes() && h.size() == 7 && hi - lo <= 1) balanced = true;
  }
  EXPECT_TRUE(balanced);
}

TEST(ReplayBuffer, ReconstructRoundTripsAndCounts) {
  Rng rng(3);
  std::vector<double> train;
  for (int i = 0; i < 400; ++i) {
    const auto v = siesta::testing::random_vector(4, rng);
    train.insert(train.end(), v.begin(), v.end());
  }
  const auto codec = pq::PQCodec::fit({2, 16, 10, 1}, train, 4, 1);
  replay::ReplayBuffer b(1 << 20);
  for (int i = 0; i < 30; ++i) b.insert(codec.encode(random_tensor(2, 2, 4, rng), i % 3), rng);
  const std::vector<std::size_t> touched{1, 4, 9};
  const auto batch = b.reconstruct_batch<double>(touched, codec);
  for (std::size_t i = 0; i < b.size(); ++i) {
    const bool hit = std::find(touched.begin(), touched.end(), i) != touched.end();
    EXPECT_EQ(b.entry(i).rehearsal_count, hit ? 1u : 0u);
  }
  for (std::size_t j = 0; j < touched.size(); ++j) {
    EXPECT_EQ(codec.encode(batch[j].tensor, batch[j].label), b.entry(touched[j]).encoded);
  }
  const std::vector<std::size_t> bad{30};
  EXPECT_THROW(b.reconstruct_batch<double>(bad, codec), UsageError);

  std::vector<std::size_t> all(b.size());
  std::iota(all.begin(), all.end(), 0);
  const auto everything = b.reconstruct_batch<double>(all, codec);
  for (int c = 0; c < 3; ++c) {
    std::vector<double> mean(16, 0.0);
    int n = 0;
    for (std::size_t i = 0; i < b.size(); ++i) {
      if (b.entry(i).label() != c) continue;
      const auto t = codec.decode<double>(b.entry(i).encoded);
      for (std::size_t k = 0; k < 16; ++k) mean[k] += t.data()[k];
      ++n;
    }
    std::vector<double> got(16, 0.0);
    int m = 0;
    for (const auto& it : everything) {
      if (it.label != c) continue;
      for (std::size_t k = 0; k < 16; ++k) got[k] += it.tensor.data()[k];
      ++m;
    }
    ASSERT_EQ(n, m);
    for (std::size_t k = 0; k < 16; ++k) EXPECT_NEAR(got[k] / m, mean[k] / n, 1e-12);
  }
}

TEST(ReplayBuffer, JsonlDump) {
  replay::ReplayBuffer b(1000);
  Rng rng(0);
  pq::EncodedTensor e{1, 3, 1, {0, 1, 2}, 4};
  b.insert(e, rng);
  const std::vector<std::size_t> idx{0};
  b.reconstruct_batch<double>(idx, pq::PQCodec(1, 1, 3, {0.0, 1.0, 2.0}));
  std::ostringstream os;
  b.dump_jsonl(os);
  const auto j = nlohmann::json::parse(os.str());
  EXPECT_EQ(j["class"], 4);
  EXPECT_EQ(j["codes"], "AAEC");
  EXPECT_EQ(j["rehearsal_count"], 1);
  const std::vector<std::uint8_t> bytes{'M', 'a'};
  EXPECT_EQ(replay::ReplayBuffer::base64_encode(bytes), "TWE=");
}
