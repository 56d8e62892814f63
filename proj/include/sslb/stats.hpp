#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sslb/errors.hpp"

namespace sslb {

struct WilcoxonResult {
  /// Sum of ranks of the positive differences a_i − b_i.
  double statistic = 0.0;
  double p_value = 1.0;
  /// Number of nonzero differences that entered the test.
  std::size_t n = 0;
  bool exact = false;
};

/// Largest n evaluated by exact enumeration of sign patterns.
inline constexpr std::size_t kWilcoxonExactLimit = 12;

namespace detail {
/// |differences| within this tolerance count as ties (and as zero).
inline constexpr double kTieTolerance = 1e-9;

/// Average ranks (1-based) of |d|, grouped within kTieTolerance.
inline std::vector<double> average_ranks(std::span<const double> abs_d) {
  const std::size_t n = abs_d.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return abs_d[a] < abs_d[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && abs_d[order[j]] - abs_d[order[i]] <= kTieTolerance) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = avg;
    i = j;
  }
  return ranks;
}
}  // namespace detail

namespace detail {
/// Exact two-sided p-value of W+ over all 2^n sign patterns of `ranks`.
/// Average ranks are multiples of 1/2, so doubled ranks are integers and
/// the null distribution of 2·W+ is a subset-sum count.
inline double wilcoxon_exact_p(std::span<const double> ranks, double statistic) {
  const std::size_t n = ranks.size();
  std::vector<std::size_t> doubled(n);
  std::size_t max_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    doubled[i] = static_cast<std::size_t>(std::lround(2.0 * ranks[i]));
    max_sum += doubled[i];
  }
  std::vector<double> ways(max_sum + 1, 0.0);
  ways[0] = 1.0;
  for (std::size_t r : doubled) {
    for (std::size_t s = max_sum; s >= r; --s) {
      ways[s] += ways[s - r];
      if (s == r) break;
    }
  }
  // Compare |2·(2W) − Σ 2r| to stay in integers.
  const long long observed = std::lround(2.0 * statistic);
  const long long centre2 = static_cast<long long>(max_sum);
  const long long dev_obs = std::llabs(2 * observed - centre2);
  double extreme = 0.0;
  for (std::size_t s = 0; s <= max_sum; ++s) {
    if (std::llabs(2 * static_cast<long long>(s) - centre2) >= dev_obs) extreme += ways[s];
  }
  return std::min(1.0, extreme / std::ldexp(1.0, static_cast<int>(n)));
}

/// Normal approximation with tie correction Σ(t³ − t)/48 and a 0.5
/// continuity correction.
inline double wilcoxon_normal_p(std::span<const double> ranks, double statistic) {
  const std::size_t n = ranks.size();
  std::vector<double> sorted_ranks(ranks.begin(), ranks.end());
  std::sort(sorted_ranks.begin(), sorted_ranks.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && sorted_ranks[j] == sorted_ranks[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += (t * t * t - t) / 48.0;
    i = j;
  }
  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1.0) / 4.0;
  const double variance = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term;
  const double dev = std::max(0.0, std::abs(statistic - mean) - 0.5);
  const double z = variance > 0.0 ? dev / std::sqrt(variance) : 0.0;
  return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}
}  // namespace detail

/// Paired two-sided Wilcoxon signed-rank test on a − b. Zero differences are
/// dropped and tied magnitudes share their average rank. For n ≤ 12 the
/// p-value is exact; above that the normal approximation is used.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("wilcoxon: samples have different lengths");
  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (std::abs(d) > detail::kTieTolerance) diffs.push_back(d);
  }
  const std::size_t n = diffs.size();
  if (n < 5) {
    throw InsufficientDataError("wilcoxon: " + std::to_string(n) +
                                " nonzero differences, need at least 5");
  }
  std::vector<double> mags(n);
  for (std::size_t i = 0; i < n; ++i) mags[i] = std::abs(diffs[i]);
  const auto ranks = detail::average_ranks(mags);

  WilcoxonResult res;
  res.n = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (diffs[i] > 0) res.statistic += ranks[i];
  }
  res.exact = n <= kWilcoxonExactLimit;
  res.p_value = res.exact ? detail::wilcoxon_exact_p(ranks, res.statistic)
                          : detail::wilcoxon_normal_p(ranks, res.statistic);
  return res;
}

inline double sample_mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Sample standard deviation with the n − 1 denominator; 0 for n < 2.
inline double sample_std(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  // Shifted by the first value so that constant samples give exactly 0.
  const double shift = x[0];
  double s = 0.0, ss = 0.0;
  for (double v : x) {
    s += v - shift;
    ss += (v - shift) * (v - shift);
  }
  const double n = static_cast<double>(x.size());
  return std::sqrt(std::max(0.0, ss - s * s / n) / (n - 1.0));
}

}  // namespace sslb
