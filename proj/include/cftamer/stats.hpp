#pragma once

// Robust aggregate statistics for comparing learning curves across seeds:
// interquartile mean, optimality gap, percentile bootstrap intervals and the
// Mann-Whitney probability of improvement.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "cftamer/rng.hpp"

namespace cftamer {

// Mean of the middle 50% of the sorted values. Each value covers a unit
// interval of [0, n); the kept window is [n/4, 3n/4] and values straddling a
// boundary contribute with fractional weight.
inline double iqm(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("iqm: empty input");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  const double lo = n / 4.0;
  const double hi = 3.0 * n / 4.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double a = std::max(lo, static_cast<double>(i));
    const double b = std::min(hi, static_cast<double>(i + 1));
    if (b > a) sum += (b - a) * v[i];
  }
  return sum / (hi - lo);
}

inline double mean(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean: empty input");
  double s = 0.0;
  for (double x : values) s += x;
  return s / static_cast<double>(values.size());
}

// Mean shortfall from a perfect normalized score of 1; scores above 1 earn no
// credit.
inline double optimality_gap(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("optimality_gap: no checkpoints");
  double s = 0.0;
  for (double x : scores) s += std::max(0.0, 1.0 - x);
  return s / static_cast<double>(scores.size());
}

// Linear-interpolation quantile of sorted data (q in [0, 1]).
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty data");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

struct MetricSummary {
  double point = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n_runs = 0;
  std::size_t n_resamples = 0;
};

using Statistic = std::function<double(std::span<const double>)>;

inline constexpr std::size_t kDefaultResamples = 2000;

// Interval from bootstrap replicates; widened if needed so it contains the
// point estimate.
inline MetricSummary summarize_replicates(double point, std::vector<double> reps, double level,
                                          std::size_t n_runs) {
  std::sort(reps.begin(), reps.end());
  const double alpha = (1.0 - level) / 2.0;
  MetricSummary m;
  m.point = point;
  m.ci_low = std::min(point, quantile_sorted(reps, alpha));
  m.ci_high = std::max(point, quantile_sorted(reps, 1.0 - alpha));
  m.n_runs = n_runs;
  m.n_resamples = reps.size();
  return m;
}

// Percentile bootstrap over runs (resampled with replacement).
inline MetricSummary bootstrap_ci(std::span<const double> values, const Statistic& statistic,
                                  double level = 0.95, std::size_t n_resamples = kDefaultResamples,
                                  std::uint64_t seed = 0) {
  if (values.size() < 2) throw std::invalid_argument("bootstrap_ci: need at least two values");
  if (n_resamples == 0) throw std::invalid_argument("bootstrap_ci: need at least one resample");
  Rng rng(seed);
  std::vector<double> sample(values.size());
  std::vector<double> reps;
  reps.reserve(n_resamples);
  for (std::size_t r = 0; r < n_resamples; ++r) {
    for (auto& x : sample) x = values[rng.below(values.size())];
    reps.push_back(statistic(sample));
  }
  return summarize_replicates(statistic(values), std::move(reps), level, values.size());
}

// Bootstrap that resamples within each stratum (e.g. environment) and applies
// the statistic to the pooled resample.
inline MetricSummary stratified_bootstrap_ci(const std::vector<std::vector<double>>& strata,
                                             const Statistic& statistic, double level = 0.95,
                                             std::size_t n_resamples = kDefaultResamples, std::uint64_t seed = 0) {
  std::vector<double> pooled;
  for (const auto& s : strata) {
    if (s.size() < 2) throw std::invalid_argument("stratified_bootstrap_ci: each stratum needs two values");
    pooled.insert(pooled.end(), s.begin(), s.end());
  }
  if (pooled.empty()) throw std::invalid_argument("stratified_bootstrap_ci: no strata");
  Rng rng(seed);
  std::vector<double> sample(pooled.size());
  std::vector<double> reps;
  reps.reserve(n_resamples);
  for (std::size_t r = 0; r < n_resamples; ++r) {
    std::size_t k = 0;
    for (const auto& s : strata)
      for (std::size_t i = 0; i < s.size(); ++i) sample[k++] = s[rng.below(s.size())];
    reps.push_back(statistic(sample));
  }
  return summarize_replicates(statistic(pooled), std::move(reps), level, pooled.size());
}

// Paired bootstrap of statistic(a) - statistic(b), resampling pair indices.
inline MetricSummary paired_difference_ci(std::span<const double> a, std::span<const double> b,
                                          const Statistic& statistic, double level = 0.95,
                                          std::size_t n_resamples = kDefaultResamples, std::uint64_t seed = 0) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("paired_difference_ci: need two equally sized samples of size >= 2");
  Rng rng(seed);
  std::vector<double> sa(a.size()), sb(b.size());
  std::vector<double> reps;
  reps.reserve(n_resamples);
  for (std::size_t r = 0; r < n_resamples; ++r) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      const std::size_t j = rng.below(a.size());
      sa[i] = a[j];
      sb[i] = b[j];
    }
    reps.push_back(statistic(sa) - statistic(sb));
  }
  return summarize_replicates(statistic(a) - statistic(b), std::move(reps), level, a.size());
}

// P(X < Y) + 0.5 P(X == Y): the probability that a draw from `x` has a lower
// (better) optimality gap than a draw from `y`.
inline double poi_point(std::span<const double> x, std::span<const double> y) {
  if (x.empty() || y.empty()) throw std::invalid_argument("probability_of_improvement: empty sample");
  std::uint64_t twice = 0;
  for (double xi : x)
    for (double yj : y) twice += xi < yj ? 2 : (xi == yj ? 1 : 0);
  return static_cast<double>(twice) / (2.0 * static_cast<double>(x.size() * y.size()));
}

struct ComparisonResult {
  double poi = 0.5;
  double ci_low = 0.5;
  double ci_high = 0.5;
  std::size_t n_x = 0;
  std::size_t n_y = 0;
};

inline ComparisonResult probability_of_improvement(std::span<const double> x, std::span<const double> y,
                                                   double level = 0.95,
                                                   std::size_t n_resamples = kDefaultResamples,
                                                   std::uint64_t seed = 0) {
  ComparisonResult r;
  r.poi = poi_point(x, y);
  r.n_x = x.size();
  r.n_y = y.size();
  if (n_resamples == 0) {
    r.ci_low = r.ci_high = r.poi;
    return r;
  }
  Rng rng(seed);
  std::vector<double> sx(x.size()), sy(y.size());
  std::vector<double> reps;
  reps.reserve(n_resamples);
  for (std::size_t k = 0; k < n_resamples; ++k) {
    for (auto& v : sx) v = x[rng.below(x.size())];
    for (auto& v : sy) v = y[rng.below(y.size())];
    reps.push_back(poi_point(sx, sy));
  }
  const auto s = summarize_replicates(r.poi, std::move(reps), level, x.size());
  r.ci_low = s.ci_low;
  r.ci_high = s.ci_high;
  return r;
}

}  // namespace cftamer
