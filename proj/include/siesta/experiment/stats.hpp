#pragma once

#include <cmath>
#include <cstdlib>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "siesta/error.hpp"

namespace siesta::experiment {

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

inline double chi2_survival(double x, double dof) {
  if (x <= 0.0) return 1.0;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(dof), x));
}

/// McNemar with continuity correction: chi2 = (|b - c| - 1)^2 / (b + c), where
/// b counts samples only A gets right and c those only B gets right.
inline TestResult mcnemar_test(std::span<const int> preds_a, std::span<const int> preds_b, std::span<const int> truth) {
  if (preds_a.size() != truth.size() || preds_b.size() != truth.size()) {
    throw UsageError("mcnemar_test: prediction and truth lengths differ");
  }
  double b = 0, c = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool ra = preds_a[i] == truth[i];
    const bool rb = preds_b[i] == truth[i];
    if (ra && !rb) ++b;
    if (rb && !ra) ++c;
  }
  if (b + c == 0.0) return {0.0, 1.0};
  const double num = std::max(std::abs(b - c) - 1.0, 0.0);
  const double stat = num * num / (b + c);
  return {stat, chi2_survival(stat, 1.0)};
}

/// Cochran's Q over a classifiers x samples 0/1 correctness matrix:
/// Q = (k-1) [k sum_j C_j^2 - N^2] / [k N - sum_i R_i^2], chi2 with k-1 dof.
inline TestResult cochran_q(const std::vector<std::vector<int>>& correct) {
  const std::size_t k = correct.size();
  if (k < 2) throw UsageError("cochran_q: need at least two classifiers");
  const std::size_t n = correct.front().size();
  for (const auto& row : correct) {
    if (row.size() != n) throw UsageError("cochran_q: ragged indicator matrix");
  }
  double total = 0.0, col_sq = 0.0, row_sq = 0.0;
  for (const auto& row : correct) {
    double cj = 0.0;
    for (int v : row) cj += v != 0;
    col_sq += cj * cj;
    total += cj;
  }
  for (std::size_t i = 0; i < n; ++i) {
    double ri = 0.0;
    for (const auto& row : correct) ri += row[i] != 0;
    row_sq += ri * ri;
  }
  const double kd = static_cast<double>(k);
  const double denom = kd * total - row_sq;
  if (denom == 0.0) return {0.0, 1.0};
  const double q = (kd - 1.0) * (kd * col_sq - total * total) / denom;
  return {q, chi2_survival(q, kd - 1.0)};
}

/// Three or more classifiers' predictions against the same truth.
inline TestResult cochran_q_test(const std::vector<std::vector<int>>& preds, std::span<const int> truth) {
  if (preds.size() < 3) throw UsageError("cochran_q_test: needs >= 3 classifiers; use mcnemar_test for two");
  std::vector<std::vector<int>> correct;
  for (const auto& p : preds) {
    if (p.size() != truth.size()) throw UsageError("cochran_q_test: prediction and truth lengths differ");
    std::vector<int> row(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) row[i] = p[i] == truth[i] ? 1 : 0;
    correct.push_back(std::move(row));
  }
  return cochran_q(correct);
}

}  // namespace siesta::experiment
