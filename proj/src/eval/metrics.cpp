#include "iclcot/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace iclcot {

double mse_normalized(double pred, double truth, std::size_t d) {
  if (d == 0) throw ContractError("mse_normalized: d must be >= 1");
  const double e = pred - truth;
  return e * e / static_cast<double>(d);
}

double median_of(std::span<const double> values) {
  if (values.empty()) throw ContractError("median of an empty sample");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double auc_binarized(std::span<const double> preds, std::span<const double> truths) {
  if (preds.size() != truths.size()) {
    throw ShapeError("auc: " + std::to_string(preds.size()) + " predictions vs " +
                     std::to_string(truths.size()) + " truths");
  }
  if (preds.size() < 2) throw UndefinedMetric("auc: fewer than two samples");
  const double med = median_of(truths);
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    (truths[i] > med ? pos : neg).push_back(preds[i]);
  }
  if (pos.empty() || neg.empty()) throw UndefinedMetric("auc: only one label class present");

  // Mann-Whitney U via one sort of the pooled scores with midranks for ties.
  std::vector<std::pair<double, int>> all;
  all.reserve(preds.size());
  for (double s : pos) all.emplace_back(s, 1);
  for (double s : neg) all.emplace_back(s, 0);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum_pos = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (all[t].second == 1) rank_sum_pos += midrank;
    }
    i = j;
  }
  const double np = static_cast<double>(pos.size());
  const double nn = static_cast<double>(neg.size());
  const double u = rank_sum_pos - np * (np + 1.0) / 2.0;
  return u / (np * nn);
}

MeanStderr mean_stderr(std::span<const double> values) {
  MeanStderr out;
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return out;
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.stderr_ = std::sqrt(ss / (n - 1.0) / n);
  return out;
}

double sign_test_p(std::span<const double> differences) {
  std::size_t plus = 0, minus = 0;
  for (double d : differences) {
    if (d > 0) ++plus;
    if (d < 0) ++minus;
  }
  const std::size_t n = plus + minus;
  if (n == 0) return 1.0;
  const std::size_t k = std::min(plus, minus);
  // P(X <= k) for X ~ Bin(n, 1/2), summed in log space.
  double tail = 0.0;
  for (std::size_t i = 0; i <= k; ++i) {
    const double log_term = std::lgamma(static_cast<double>(n) + 1.0) -
                            std::lgamma(static_cast<double>(i) + 1.0) -
                            std::lgamma(static_cast<double>(n - i) + 1.0) -
                            static_cast<double>(n) * std::log(2.0);
    tail += std::exp(log_term);
  }
  return std::min(1.0, 2.0 * tail);
}

}  // namespace iclcot
