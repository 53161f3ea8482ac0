#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <set>

#include "test_util.hpp"

using namespace siesta;
using siesta::testing::blob_dataset;
using siesta::testing::fake_entry;
using siesta::testing::random_tensor;

namespace {

constexpr std::size_t kClasses = 4;

// Small encoded world: blob latents, a codec, a filled buffer, G and F.
struct World {
  FeatureDataset<double> data;
  pq::PQCodec codec;
  replay::ReplayBuffer buffer{1 << 20};
  nn::Network<double> net;
  CosineHead<double> head{kClasses, 8, 0.1};

  explicit World(std::uint64_t seed = 1, std::size_t per_class = 20) {
    data = blob_dataset(kClasses, per_class, 2, 2, 4, 0.6, seed);
    std::vector<double> flat;
    for (const auto& t : data.tensors) flat.insert(flat.end(), t.data().begin(), t.data().end());
    codec = pq::PQCodec::fit({2, 16, 10, 1}, flat, 4, seed);
    Rng rng(seed);
    for (std::size_t i = 0; i < data.size(); ++i) buffer.insert(codec.encode(data.tensors[i], data.labels[i]), rng);
    net = nn::Network<double>::default_stack(4, 8, 8, seed, 4);
    const auto z = embeddings();
    for (std::size_t i = 0; i < buffer.size(); ++i) {
      head.online_update(std::span<const double>(z.data() + i * 8, 8), buffer.entry(i).label());
    }
  }

  std::vector<double> embeddings() const {
    std::vector<LatentTensor<double>> ts;
    for (std::size_t i = 0; i < buffer.size(); ++i) ts.push_back(buffer.peek<double>(i, codec));
    return nn::embed(net, std::span<const LatentTensor<double>>(ts));
  }

  double buffer_loss() const {
    std::vector<LatentTensor<double>> ts;
    std::vector<int> y;
    for (std::size_t i = 0; i < buffer.size(); ++i) {
      ts.push_back(buffer.peek<double>(i, codec));
      y.push_back(buffer.entry(i).label());
    }
    const auto f = nn::forward(net, ts);
    return head_backward(head, std::span<const double>(f.embeddings), std::span<const int>(y)).loss;
  }

  std::vector<double> scores(sleep::PolicyKind k) const {
    return sleep::policy_scores<double>(k, buffer, codec, &net, &head);
  }
};

std::vector<double> params(const nn::Network<double>& net) {
  std::vector<double> out;
  for (const auto& l : net.layers()) {
    out.insert(out.end(), l.weight.begin(), l.weight.end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

double chi2_p(const std::vector<double>& observed, const std::vector<double>& expected) {
  double x = 0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    x += (observed[i] - expected[i]) * (observed[i] - expected[i]) / expected[i];
  }
  boost::math::chi_squared dist(static_cast<double>(observed.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, x));
}

sleep::SleepConfig small_sleep(std::size_t m, std::size_t q) {
  sleep::SleepConfig c;
  c.updates = m;
  c.batch = q;
  c.optim.lr = 0.05;
  return c;
}

}  // namespace

TEST(Policy, NamesRoundTrip) {
  for (auto [kind, name] : sleep::kPolicyNames) EXPECT_EQ(sleep::parse_policy(name), kind);
  EXPECT_THROW(sleep::parse_policy("random"), ConfigError);
}

TEST(Policy, MaxLossMatchesBruteForce) {
  World w;
  const auto s = w.scores(sleep::PolicyKind::max_loss);
  const auto z = w.embeddings();
  for (std::size_t i = 0; i < w.buffer.size(); ++i) {
    const auto p = w.head.scores(std::span<const double>(z.data() + i * 8, 8)).probs;
    EXPECT_NEAR(s[i], -std::log(p[static_cast<std::size_t>(w.buffer.entry(i).label())]), 1e-12);
  }
}

TEST(Policy, MinMarginMatchesBruteForce) {
  World w;
  const auto s = w.scores(sleep::PolicyKind::min_margin);
  const auto z = w.embeddings();
  for (std::size_t i = 0; i < w.buffer.size(); ++i) {
    const auto p = w.head.scores(std::span<const double>(z.data() + i * 8, 8)).probs;
    double best = -1, second = -1;
    for (double v : p) {
      if (v > best) {
        second = best;
        best = v;
      } else if (v > second) {
        second = v;
      }
    }
    EXPECT_NEAR(s[i], -(best - second), 1e-12);
  }
}

TEST(Policy, MaxInterferenceMatchesBruteForce) {
  World w;
  const auto s = w.scores(sleep::PolicyKind::max_interference);
  const auto z = w.embeddings();
  const std::size_t n = w.buffer.size();
  auto cos = [&](std::size_t a, std::size_t b) {
    double d = 0, na = 0, nb = 0;
    for (std::size_t c = 0; c < 8; ++c) {
      d += z[a * 8 + c] * z[b * 8 + c];
      na += z[a * 8 + c] * z[a * 8 + c];
      nb += z[b * 8 + c] * z[b * 8 + c];
    }
    return d / std::sqrt(na * nb);
  };
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> others;
    for (std::size_t j = 0; j < n; ++j) {
      if (w.buffer.entry(j).label() != w.buffer.entry(i).label()) others.push_back(cos(i, j));
    }
    std::sort(others.rbegin(), others.rend());
    double mean = 0;
    for (std::size_t k = 0; k < 10; ++k) mean += others[k];
    EXPECT_NEAR(s[i], mean / 10, 1e-12);
  }
}

TEST(Policy, PrototypicalIsNegativeDistanceToClassMean) {
  World w;
  const auto s = w.scores(sleep::PolicyKind::prototypical);
  const auto z = w.embeddings();
  for (std::size_t i = 0; i < w.buffer.size(); ++i) {
    std::vector<double> mean(8, 0.0);
    int n = 0;
    for (std::size_t j = 0; j < w.buffer.size(); ++j) {
      if (w.buffer.entry(j).label() != w.buffer.entry(i).label()) continue;
      for (std::size_t c = 0; c < 8; ++c) mean[c] += z[j * 8 + c];
      ++n;
    }
    double d2 = 0;
    for (std::size_t c = 0; c < 8; ++c) d2 += std::pow(z[i * 8 + c] - mean[c] / n, 2);
    EXPECT_NEAR(s[i], -std::sqrt(d2), 1e-12);
  }
}

TEST(Policy, MinRehearsalPrefersUntouchedEntries) {
  World w;
  std::vector<std::size_t> idx{0, 0, 0, 5};
  w.buffer.reconstruct_batch<double>(idx, w.codec);
  const auto s = sleep::policy_scores<double>(sleep::PolicyKind::min_rehearsal, w.buffer, w.codec, nullptr, nullptr);
  EXPECT_EQ(s[0], -3.0);
  EXPECT_EQ(s[5], -1.0);
  EXPECT_EQ(s[1], 0.0);
}

TEST(Policy, ModelPoliciesNeedTheModel) {
  World w;
  EXPECT_THROW(sleep::policy_scores<double>(sleep::PolicyKind::max_loss, w.buffer, w.codec, nullptr, nullptr),
               ConfigError);
  replay::ReplayBuffer empty(100);
  EXPECT_THROW(sleep::policy_scores<double>(sleep::PolicyKind::uniform, empty, w.codec, nullptr, nullptr), UsageError);
}

TEST(Selection, RankWeightedFrequencies) {
  // Scores 0,1,2 have ranks 1,2,3: single draws land with odds 1:2:3.
  replay::ReplayBuffer b(1000);
  Rng rng(8);
  for (int i = 0; i < 3; ++i) b.insert(fake_entry(i, 4), rng);
  const std::vector<double> scores{0, 1, 2};
  std::vector<double> hits(3, 0.0);
  const int trials = 30000;
  for (int t = 0; t < trials; ++t) {
    const auto pick = sleep::select_rehearsal_set(sleep::PolicyKind::max_loss, b, scores, 1, rng);
    hits[pick.at(0)] += 1;
  }
  EXPECT_GT(chi2_p(hits, {trials / 6.0, trials / 3.0, trials / 2.0}), 0.01);
}

TEST(Selection, ReturnsDistinctSortedIndices) {
  World w;
  Rng rng(4);
  for (auto [kind, name] : sleep::kPolicyNames) {
    const auto s = w.scores(kind);
    for (std::size_t size : {1u, 7u, 33u, 80u, 200u}) {
      const auto pick = sleep::select_rehearsal_set(kind, w.buffer, s, size, rng);
      ASSERT_EQ(pick.size(), std::min<std::size_t>(size, 80)) << name;
      ASSERT_TRUE(std::is_sorted(pick.begin(), pick.end()));
      ASSERT_EQ(std::set<std::size_t>(pick.begin(), pick.end()).size(), pick.size());
      ASSERT_LT(pick.back(), w.buffer.size());
    }
  }
}

TEST(Selection, BalancedSplitsEvenly) {
  replay::ReplayBuffer b(1000);
  Rng rng(0);
  for (int c : {0, 0, 0, 0, 1, 1}) b.insert(fake_entry(c, 4), rng);
  const std::vector<double> zeros(6, 0.0);
  for (int t = 0; t < 50; ++t) {
    const auto pick = sleep::select_rehearsal_set(sleep::PolicyKind::balanced_uniform, b, zeros, 4, rng);
    std::map<int, int> per;
    for (auto i : pick) ++per[b.entry(i).label()];
    EXPECT_EQ(per[0], 2);
    EXPECT_EQ(per[1], 2);
  }
}

TEST(Selection, BalancedQuotaSpillsFromSmallClasses) {
  replay::ReplayBuffer b(1000);
  Rng rng(0);
  for (int c : {0, 0, 0, 0, 0, 1, 2, 2, 2}) b.insert(fake_entry(c, 4), rng);
  for (int t = 0; t < 50; ++t) {
    const auto q = sleep::balanced_quotas(b, 7, rng);
    EXPECT_EQ(q.at(1), 1u);
    EXPECT_EQ(q.at(0) + q.at(2), 6u);
    EXPECT_LE(q.at(2), 3u);
    EXPECT_GE(q.at(0), 3u);
  }
}

TEST(Selection, BalancedPrototypicalTakesClosestPerClass) {
  World w;
  Rng rng(2);
  const auto s = w.scores(sleep::PolicyKind::balanced_prototypical);
  const auto pick = sleep::select_rehearsal_set(sleep::PolicyKind::balanced_prototypical, w.buffer, s, 12, rng);
  for (std::size_t c = 0; c < kClasses; ++c) {
    auto members = w.buffer.indices_of(static_cast<int>(c));
    std::stable_sort(members.begin(), members.end(), [&](auto a, auto b) { return s[a] > s[b]; });
    std::set<std::size_t> expect(members.begin(), members.begin() + 3);
    std::set<std::size_t> got;
    for (auto i : pick) {
      if (w.buffer.entry(i).label() == static_cast<int>(c)) got.insert(i);
    }
    EXPECT_EQ(got, expect);
  }
}

TEST(Augment, MixupEndpoints) {
  Rng rng(1);
  const auto a = random_tensor(2, 3, 2, rng);
  const auto b = random_tensor(2, 3, 2, rng);
  const auto one = sleep::mixup(a, 0, b, 1, 1.0);
  EXPECT_EQ(one.tensor, a);
  EXPECT_EQ(one.target.lambda, 1.0);
  const auto zero = sleep::mixup(a, 0, b, 1, 0.0);
  EXPECT_EQ(zero.tensor, b);
  const auto half = sleep::mixup(a, 0, b, 1, 0.25);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(half.tensor.data()[i], 0.25 * a.data()[i] + 0.75 * b.data()[i], 1e-15);
  }
  EXPECT_THROW(sleep::mixup(a, 0, random_tensor(3, 2, 2, rng), 1, 0.5), ConfigError);
}

TEST(Augment, CutmixAreaFraction) {
  Rng rng(1);
  const auto a = random_tensor(4, 4, 3, rng);
  const auto b = random_tensor(4, 4, 3, rng);
  const auto none = sleep::cutmix(a, 0, b, 1, {2, 2, 1, 3});
  EXPECT_EQ(none.tensor, a);
  EXPECT_EQ(none.target.lambda, 1.0);
  const auto all = sleep::cutmix(a, 0, b, 1, {0, 4, 0, 4});
  EXPECT_EQ(all.tensor, b);
  EXPECT_EQ(all.target.lambda, 0.0);
  const auto part = sleep::cutmix(a, 0, b, 1, {1, 3, 0, 3});
  EXPECT_DOUBLE_EQ(part.target.lambda, 1.0 - 6.0 / 16.0);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      const bool inside = i >= 1 && i < 3 && j < 3;
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(part.tensor.at(i, j, c), inside ? b.at(i, j, c) : a.at(i, j, c));
    }
  }
  EXPECT_THROW(sleep::cutmix(a, 0, b, 1, {0, 5, 0, 1}), ConfigError);
}

TEST(Augment, RandomBoxStaysOnTheGrid) {
  Rng rng(6);
  for (int t = 0; t < 2000; ++t) {
    const auto box = sleep::random_cut_box(5, 7, 1.0, rng);
    ASSERT_LE(box.row_begin, box.row_end);
    ASSERT_LE(box.row_end, 5u);
    ASSERT_LE(box.col_begin, box.col_end);
    ASSERT_LE(box.col_end, 7u);
  }
}

TEST(Augment, BatchModeFrequencies) {
  // Cutmix on a 4x4 grid gives lambda in sixteenths; mixup lambda is continuous.
  Rng rng(10);
  sleep::SleepConfig cfg;
  cfg.augmentation = sleep::Augmentation::mixup_cutmix;
  int cut = 0, mix = 0;
  const int trials = 3000;
  for (int t = 0; t < trials; ++t) {
    std::vector<LabeledTensor<double>> items;
    for (int i = 0; i < 4; ++i) items.push_back({random_tensor(4, 4, 2, rng), i});
    std::vector<LatentTensor<double>> tensors;
    std::vector<SoftTarget<double>> targets;
    sleep::augment_batch(items, tensors, targets, cfg, rng);
    const double l = targets[0].lambda * 16;
    (std::abs(l - std::round(l)) < 1e-9 ? cut : mix)++;
  }
  const double sd = std::sqrt(trials * 0.6 * 0.4);
  EXPECT_NEAR(cut, 0.6 * trials, 4 * sd);
  EXPECT_EQ(cut + mix, trials);
}

TEST(Augment, NoneLeavesHardTargets) {
  Rng rng(10);
  sleep::SleepConfig cfg;
  std::vector<LabeledTensor<double>> items{{random_tensor(2, 2, 2, rng), 3}, {random_tensor(2, 2, 2, rng), 1}};
  const auto copy = items;
  std::vector<LatentTensor<double>> tensors;
  std::vector<SoftTarget<double>> targets;
  sleep::augment_batch(items, tensors, targets, cfg, rng);
  EXPECT_EQ(tensors[0], copy[0].tensor);
  EXPECT_EQ(targets[1].first, 1);
  EXPECT_EQ(targets[1].lambda, 1.0);
}

TEST(Consolidate, ZeroBudgetChangesNothing) {
  World w;
  const auto before = params(w.net);
  const auto head_before = std::vector<double>(w.head.weights().begin(), w.head.weights().end());
  Rng rng(0);
  const auto r = sleep::consolidate(w.net, w.head, w.buffer, w.codec, small_sleep(0, 16), rng);
  EXPECT_EQ(r.batches_run, 0u);
  EXPECT_EQ(r.updates, 0u);
  EXPECT_EQ(params(w.net), before);
  EXPECT_EQ(std::vector<double>(w.head.weights().begin(), w.head.weights().end()), head_before);
}

TEST(Consolidate, OneBatchWhenBudgetEqualsBatch) {
  World w;
  Rng rng(0);
  const auto before = params(w.net);
  const auto r = sleep::consolidate(w.net, w.head, w.buffer, w.codec, small_sleep(16, 16), rng);
  EXPECT_EQ(r.batches_run, 1u);
  EXPECT_EQ(r.updates, 16u);
  EXPECT_NE(params(w.net), before);
  std::uint64_t total = 0;
  for (auto c : w.buffer.snapshot_stats().rehearsal_counts) total += c;
  EXPECT_EQ(total, 16u);
}

TEST(Consolidate, RemainderIsDropped) {
  World w;
  Rng rng(0);
  const auto r = sleep::consolidate(w.net, w.head, w.buffer, w.codec, small_sleep(50, 16), rng);
  EXPECT_EQ(r.batches_run, 3u);
  EXPECT_EQ(r.updates, 48u);
  EXPECT_EQ(r.dropped_updates, 2u);
  ASSERT_EQ(r.log.size(), 3u);
  EXPECT_EQ(r.log.back().seen_updates, 48u);
}

TEST(Consolidate, AllowanceStopsCleanly) {
  World w;
  Rng rng(0);
  const auto r = sleep::consolidate(w.net, w.head, w.buffer, w.codec, small_sleep(64, 16), rng, 40);
  EXPECT_TRUE(r.hit_update_cap);
  EXPECT_EQ(r.updates, 32u);
}

TEST(Consolidate, ReducesBufferLoss) {
  World w(3);
  const double before = w.buffer_loss();
  Rng rng(0);
  auto cfg = small_sleep(1600, 16);
  cfg.optim.lr = 0.1;
  sleep::consolidate(w.net, w.head, w.buffer, w.codec, cfg, rng);
  EXPECT_LT(w.buffer_loss(), before);
}

TEST(Consolidate, SameSeedSameResult) {
  for (auto aug : {sleep::Augmentation::none, sleep::Augmentation::mixup_cutmix}) {
    World a(5), b(5);
    auto cfg = small_sleep(160, 16);
    cfg.augmentation = aug;
    cfg.policy = sleep::PolicyKind::max_loss;
    Rng ra(9), rb(9);
    sleep::consolidate(a.net, a.head, a.buffer, a.codec, cfg, ra);
    sleep::consolidate(b.net, b.head, b.buffer, b.codec, cfg, rb);
    EXPECT_EQ(params(a.net), params(b.net));
    EXPECT_EQ(a.head.tau(), b.head.tau());
  }
}

TEST(Consolidate, RejectsBadProbabilities) {
  World w;
  Rng rng(0);
  auto cfg = small_sleep(16, 16);
  cfg.p_cutmix = 0.7;
  cfg.p_mixup = 0.4;
  EXPECT_THROW(sleep::consolidate(w.net, w.head, w.buffer, w.codec, cfg, rng), ConfigError);
  cfg = small_sleep(16, 0);
  EXPECT_THROW(sleep::consolidate(w.net, w.head, w.buffer, w.codec, cfg, rng), ConfigError);
}

TEST(Consolidate, EmptyBufferIsUsageError) {
  World w;
  replay::ReplayBuffer empty(1000);
  Rng rng(0);
  EXPECT_THROW(sleep::consolidate(w.net, w.head, empty, w.codec, small_sleep(16, 16), rng), UsageError);
}
