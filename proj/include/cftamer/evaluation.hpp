#pragma once

#include <cstdint>
#include <algorithm>
#include <map>
#include <tuple>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cftamer/env.hpp"
#include "cftamer/expert.hpp"
#include "cftamer/feedback.hpp"
#include "cftamer/hmodel.hpp"
#include "cftamer/stats.hpp"

namespace cftamer {

inline std::vector<std::uint64_t> default_eval_seeds() {
  std::vector<std::uint64_t> s(10);
  std::iota(s.begin(), s.end(), std::uint64_t{1000});
  return s;
}

// Per-episode policy randomness (tie breaks, random actions). Stream 0 is the
// evaluation stream; calibration uses the others.
inline std::uint64_t policy_seed(std::uint64_t env_seed, std::uint64_t stream) {
  return derive_seed(env_seed, 31 + (stream << 8));
}

// Raw return of one episode under `policy(env, rng) -> action`.
template <class Policy>
double episode_return(EnvId id, std::uint64_t seed, Policy&& policy, const GridConfig& grid = {},
                      std::uint64_t stream = 0) {
  Environment env = Environment::reset(id, seed, grid);
  Rng rng(policy_seed(seed, stream));
  double total = 0.0;
  while (!env.done()) total += env.step(policy(env, rng)).reward;
  return total;
}

// Normalized score of a frozen policy on each evaluation seed. No learning and
// no feedback happen here.
template <class Policy>
std::vector<double> per_seed_scores(Policy&& policy, EnvId id, const std::vector<std::uint64_t>& eval_seeds,
                                    const Norms& norms, const GridConfig& grid = {}, std::uint64_t stream = 0) {
  if (eval_seeds.empty()) throw std::invalid_argument("evaluate_policy: no evaluation seeds");
  std::vector<double> out;
  out.reserve(eval_seeds.size());
  for (std::uint64_t s : eval_seeds) out.push_back(normalized_score(episode_return(id, s, policy, grid, stream), norms));
  return out;
}

template <class Policy>
double evaluate_policy(Policy&& policy, EnvId id, const std::vector<std::uint64_t>& eval_seeds, const Norms& norms,
                       const GridConfig& grid = {}) {
  return mean(per_seed_scores(policy, id, eval_seeds, norms, grid));
}

inline auto greedy_policy(const HModel& model) {
  return [&model](const Environment& env, Rng& rng) { return select_action(model, env.observation(), rng); };
}

inline auto expert_policy(const ExpertPolicy& expert) {
  return [expert](const Environment& env, Rng&) { return expert(env.hidden()); };
}

inline auto random_policy() {
  return [](const Environment& env, Rng& rng) { return rng.index(static_cast<std::size_t>(env.action_count())); };
}

inline double evaluate_model(const HModel& model, EnvId id, const std::vector<std::uint64_t>& eval_seeds,
                             const Norms& norms, const GridConfig& grid = {}) {
  return evaluate_policy(greedy_policy(model), id, eval_seeds, norms, grid);
}

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// R_random: mean return of a uniform-random policy over the evaluation seeds,
// each replayed with `random_passes` independent action streams (1..passes).
// R_expert: mean expert return over the evaluation seeds. The expert must
// not fail outright on any seed.
inline Norms calibrate_norms(EnvId id, const ExpertPolicy& expert, int random_passes,
                             const std::vector<std::uint64_t>& eval_seeds, const GridConfig& grid = {}) {
  if (random_passes <= 0) throw std::invalid_argument("calibrate_norms: need random passes");
  if (eval_seeds.empty()) throw std::invalid_argument("calibrate_norms: no evaluation seeds");
  Norms n;
  double sum = 0.0;
  for (int p = 1; p <= random_passes; ++p)
    for (std::uint64_t s : eval_seeds)
      sum += episode_return(id, s, random_policy(), grid, static_cast<std::uint64_t>(p));
  n.random = sum / static_cast<double>(random_passes * static_cast<int>(eval_seeds.size()));

  sum = 0.0;
  for (std::uint64_t s : eval_seeds) {
    const double r = episode_return(id, s, expert_policy(expert), grid);
    const bool failed = (id == EnvId::gridworld && r <= 0.0) ||
                        (id == EnvId::cartpole && r < cartpole::kMaxSteps) ||
                        (id == EnvId::mountaincar && r <= -mountaincar::kMaxSteps);
    if (failed)
      throw CalibrationError("expert failed evaluation seed " + std::to_string(s) + " on " +
                             std::string(to_string(id)) + " (return " + std::to_string(r) + ")");
    sum += r;
  }
  n.expert = sum / static_cast<double>(eval_seeds.size());
  if (!(n.expert > n.random))
    throw CalibrationError("degenerate normalization for " + std::string(to_string(id)));
  return n;
}

inline constexpr int kDefaultRandomPasses = 100;

// Random-policy score averaged over `passes` action streams that calibration
// did not use.
inline double random_policy_score(EnvId id, const std::vector<std::uint64_t>& eval_seeds, const Norms& norms,
                                  int passes = kDefaultRandomPasses, const GridConfig& grid = {}) {
  double sum = 0.0;
  for (int p = 0; p < passes; ++p) {
    const auto stream = static_cast<std::uint64_t>(kDefaultRandomPasses + 1 + p);
    sum += mean(per_seed_scores(random_policy(), id, eval_seeds, norms, grid, stream));
  }
  return sum / passes;
}

// One row of runs.csv.
struct ResultRow {
  EnvId env = EnvId::gridworld;
  Variant variant = Variant::vanilla;
  std::uint64_t seed = 0;
  int env_steps = 0;
  double normalized_score = 0.0;
  int feedback_count = 0;
  int cf_count = 0;
  friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

struct RunRecord {
  EnvId env = EnvId::gridworld;
  Variant variant = Variant::vanilla;
  std::uint64_t seed = 0;
  std::vector<std::pair<int, double>> checkpoints;  // (env_steps, score)

  std::vector<double> scores() const {
    std::vector<double> s;
    for (const auto& c : checkpoints) s.push_back(c.second);
    return s;
  }
  std::vector<int> grid() const {
    std::vector<int> g;
    for (const auto& c : checkpoints) g.push_back(c.first);
    return g;
  }
};

class GridMismatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void validate_run(const RunRecord& r) {
  if (r.checkpoints.empty()) throw std::invalid_argument("run has no checkpoints");
  for (std::size_t i = 1; i < r.checkpoints.size(); ++i)
    if (r.checkpoints[i].first <= r.checkpoints[i - 1].first)
      throw std::invalid_argument("run checkpoints are not strictly increasing");
}

inline double optimality_gap(const RunRecord& r) {
  validate_run(r);
  return optimality_gap(r.scores());
}

// Groups rows into runs, ordered by (env, variant, seed).
inline std::vector<RunRecord> group_runs(const std::vector<ResultRow>& rows) {
  std::map<std::tuple<int, int, std::uint64_t>, RunRecord> runs;
  for (const auto& row : rows) {
    auto& r = runs[{static_cast<int>(row.env), static_cast<int>(row.variant), row.seed}];
    r.env = row.env;
    r.variant = row.variant;
    r.seed = row.seed;
    r.checkpoints.emplace_back(row.env_steps, row.normalized_score);
  }
  std::vector<RunRecord> out;
  for (auto& [k, r] : runs) {
    std::sort(r.checkpoints.begin(), r.checkpoints.end());
    validate_run(r);
    out.push_back(std::move(r));
  }
  return out;
}

struct CurveRow {
  std::string env;
  std::string variant;
  int env_steps = 0;
  MetricSummary stat;
};

struct GapRow {
  std::string env;
  std::string variant;
  MetricSummary stat;
};

struct PoiRow {
  std::string env;
  std::string variant_x;
  std::string variant_y;
  ComparisonResult stat;
};

struct Report {
  std::vector<CurveRow> curves;
  std::vector<GapRow> gaps;
  std::vector<PoiRow> poi;
};

struct AggregateOptions {
  std::size_t n_resamples = kDefaultResamples;
  double level = 0.95;
  std::uint64_t seed = 0x57A75;
  // Ordered (x, y) variant pairs for the POI table; empty = all pairs.
  std::vector<std::pair<Variant, Variant>> comparisons;
};

namespace detail {

inline MetricSummary summarize(std::span<const double> values, const Statistic& stat, const AggregateOptions& o,
                               std::uint64_t cell) {
  if (values.size() < 2) {
    const double p = stat(values);
    return {p, p, p, values.size(), 0};
  }
  return bootstrap_ci(values, stat, o.level, o.n_resamples, derive_seed(o.seed, cell));
}

}  // namespace detail

// Per (env, variant): IQM score curve, IQM optimality gap, and the pairwise
// probability-of-improvement table on per-run gaps. A "pooled" gap row per
// variant resamples within environments.
inline Report aggregate(const std::vector<RunRecord>& records, const AggregateOptions& opt = {}) {
  using Key = std::pair<EnvId, Variant>;
  std::map<Key, std::vector<const RunRecord*>> groups;
  std::map<EnvId, std::vector<int>> env_grid;
  for (const auto& r : records) {
    validate_run(r);
    auto [it, fresh] = env_grid.emplace(r.env, r.grid());
    if (!fresh && it->second != r.grid())
      throw GridMismatchError("checkpoint grid of " + std::string(to_string(r.env)) + "/" +
                              std::string(to_string(r.variant)) + " seed " + std::to_string(r.seed) +
                              " differs from other runs of the same environment");
    groups[{r.env, r.variant}].push_back(&r);
  }

  const Statistic iqm_stat = [](std::span<const double> v) { return iqm(v); };
  Report rep;
  std::uint64_t cell = 0;
  std::map<Key, std::vector<double>> gaps;
  for (const auto& [key, runs] : groups) {
    const auto& grid = env_grid[key.first];
    for (std::size_t c = 0; c < grid.size(); ++c) {
      std::vector<double> v;
      for (const auto* r : runs) v.push_back(r->checkpoints[c].second);
      rep.curves.push_back({std::string(to_string(key.first)), std::string(to_string(key.second)), grid[c],
                            detail::summarize(v, iqm_stat, opt, cell++)});
    }
    auto& g = gaps[key];
    for (const auto* r : runs) g.push_back(optimality_gap(*r));
    rep.gaps.push_back({std::string(to_string(key.first)), std::string(to_string(key.second)),
                        detail::summarize(g, iqm_stat, opt, cell++)});
  }

  std::map<Variant, std::vector<std::vector<double>>> by_variant;
  for (const auto& [key, g] : gaps) by_variant[key.second].push_back(g);
  for (const auto& [variant, strata] : by_variant) {
    std::vector<double> pooled;
    bool bootstrappable = true;
    for (const auto& s : strata) {
      pooled.insert(pooled.end(), s.begin(), s.end());
      bootstrappable = bootstrappable && s.size() >= 2;
    }
    MetricSummary m;
    if (bootstrappable)
      m = stratified_bootstrap_ci(strata, iqm_stat, opt.level, opt.n_resamples, derive_seed(opt.seed, cell++));
    else
      m = detail::summarize(pooled, iqm_stat, opt, cell++);
    rep.gaps.push_back({"pooled", std::string(to_string(variant)), m});
  }

  std::vector<std::pair<Variant, Variant>> pairs = opt.comparisons;
  for (const auto& [env, grid] : env_grid) {
    if (opt.comparisons.empty()) {
      pairs.clear();
      for (Variant x : kAllVariants)
        for (Variant y : kAllVariants)
          if (gaps.count({env, x}) && gaps.count({env, y})) pairs.emplace_back(x, y);
    }
    for (const auto& [x, y] : pairs) {
      auto gx = gaps.find({env, x});
      auto gy = gaps.find({env, y});
      if (gx == gaps.end() || gy == gaps.end()) continue;
      const bool enough = gx->second.size() >= 2 && gy->second.size() >= 2;
      rep.poi.push_back({std::string(to_string(env)), std::string(to_string(x)), std::string(to_string(y)),
                         probability_of_improvement(gx->second, gy->second, opt.level,
                                                    enough ? opt.n_resamples : 0, derive_seed(opt.seed, cell++))});
    }
  }
  return rep;
}

}  // namespace cftamer
