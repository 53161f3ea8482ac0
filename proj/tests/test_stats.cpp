#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace siesta;
using namespace siesta::experiment;

namespace {

// Truth all zeros; correctness encoded directly in the predictions.
std::vector<int> preds_from(const std::vector<int>& correct) {
  std::vector<int> p;
  for (int c : correct) p.push_back(c ? 0 : 1);
  return p;
}

// Alternate form: k(k-1) sum_j (C_j - Cbar)^2 / sum_i R_i (k - R_i)
double cochran_oracle(const std::vector<std::vector<int>>& x) {
  const double k = static_cast<double>(x.size());
  const std::size_t n = x.front().size();
  std::vector<double> col;
  for (const auto& row : x) col.push_back(std::accumulate(row.begin(), row.end(), 0.0));
  const double cbar = std::accumulate(col.begin(), col.end(), 0.0) / k;
  double num = 0;
  for (double c : col) num += (c - cbar) * (c - cbar);
  double den = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double r = 0;
    for (const auto& row : x) r += row[i];
    den += r * (k - r);
  }
  return k * (k - 1) * num / den;
}

}  // namespace

TEST(McNemar, WorkedExample) {
  // b = 10 (only A right), c = 2 (only B right), 5 both right, 3 both wrong.
  std::vector<int> a, b;
  for (int i = 0; i < 10; ++i) a.push_back(1), b.push_back(0);
  for (int i = 0; i < 2; ++i) a.push_back(0), b.push_back(1);
  for (int i = 0; i < 5; ++i) a.push_back(1), b.push_back(1);
  for (int i = 0; i < 3; ++i) a.push_back(0), b.push_back(0);
  const std::vector<int> truth(a.size(), 0);
  const auto r = mcnemar_test(preds_from(a), preds_from(b), truth);
  EXPECT_NEAR(r.statistic, 49.0 / 12.0, 1e-12);
  EXPECT_NEAR(r.p_value, std::erfc(std::sqrt(r.statistic / 2)), 1e-10);
  const auto swapped = mcnemar_test(preds_from(b), preds_from(a), truth);
  EXPECT_EQ(swapped.statistic, r.statistic);
}

TEST(McNemar, IdenticalClassifiers) {
  const std::vector<int> p{0, 1, 2, 0}, truth{0, 1, 1, 1};
  const auto r = mcnemar_test(p, p, truth);
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_EQ(r.p_value, 1.0);
  EXPECT_THROW(mcnemar_test(p, std::vector<int>{0}, truth), UsageError);
}

TEST(CochranQ, MatchesAlternateFormula) {
  const std::vector<std::vector<int>> x{{1, 1, 0, 1, 1, 1}, {1, 0, 0, 0, 1, 0}, {0, 0, 0, 1, 0, 0}};
  const auto r = cochran_q(x);
  EXPECT_NEAR(r.statistic, cochran_oracle(x), 1e-12);
  EXPECT_NEAR(r.p_value, std::exp(-r.statistic / 2), 1e-10);
}

TEST(CochranQ, RandomMatricesAgreeWithOracle) {
  Rng rng(12);
  for (int t = 0; t < 200; ++t) {
    const std::size_t k = 2 + uniform_index(rng, 5), n = 5 + uniform_index(rng, 40);
    std::vector<std::vector<int>> x(k, std::vector<int>(n));
    for (auto& row : x) {
      for (auto& v : row) v = uniform01(rng) < 0.6;
    }
    const auto r = cochran_q(x);
    double den = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (const auto& row : x) s += row[i];
      den += s * (static_cast<double>(k) - s);
    }
    if (den == 0) {
      EXPECT_EQ(r.p_value, 1.0);
      continue;
    }
    EXPECT_NEAR(r.statistic, cochran_oracle(x), 1e-9);
    EXPECT_GE(r.p_value, 0.0);
    EXPECT_LE(r.p_value, 1.0);
  }
}

TEST(CochranQ, TwoClassifiersReduceToUncorrectedMcNemar) {
  // b = 7, c = 3: Q = (b - c)^2 / (b + c)
  std::vector<int> a, b;
  for (int i = 0; i < 7; ++i) a.push_back(1), b.push_back(0);
  for (int i = 0; i < 3; ++i) a.push_back(0), b.push_back(1);
  for (int i = 0; i < 4; ++i) a.push_back(1), b.push_back(1);
  EXPECT_NEAR(cochran_q({a, b}).statistic, 16.0 / 10.0, 1e-12);
}

TEST(CochranQ, IdenticalInputs) {
  const std::vector<int> p{0, 1, 1, 2}, truth{0, 1, 2, 2};
  const auto r = cochran_q_test({p, p, p}, truth);
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_EQ(r.p_value, 1.0);
  EXPECT_THROW(cochran_q_test({p, p}, truth), UsageError);
  EXPECT_THROW(cochran_q({{1, 0}, {1}}), UsageError);
}

TEST(ChiSquare, SurvivalKnownValues) {
  EXPECT_NEAR(chi2_survival(3.841458820694124, 1), 0.05, 1e-12);
  EXPECT_NEAR(chi2_survival(2.0, 2), std::exp(-1.0), 1e-12);
  EXPECT_EQ(chi2_survival(0.0, 3), 1.0);
}
