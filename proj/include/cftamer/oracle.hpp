#pragma once

// Synthetic trainer. Compares the learner's previous action with an expert's
// preferred action (optionally degraded to a random one) and emits +1/-1
// feedback plus, depending on the variant, a counterfactual.

#include <iostream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "cftamer/env.hpp"
#include "cftamer/expert.hpp"
#include "cftamer/feedback.hpp"
#include "cftamer/rng.hpp"

namespace cftamer {

struct OracleConfig {
  double feedback_frequency = 1.0;
  double feedback_quality = 1.0;
  Variant variant = Variant::vanilla;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(feedback_frequency >= 0.0 && feedback_frequency <= 1.0))
      throw std::invalid_argument("feedback_frequency must lie in [0, 1]");
    if (!(feedback_quality >= 0.0 && feedback_quality <= 1.0))
      throw std::invalid_argument("feedback_quality must lie in [0, 1]");
  }
};

struct BankEntry {
  Observation observation;
  HiddenState hidden;
  int action = 0;  // expert's preferred action in `hidden`
};

// Expert-visited states grouped by the action the expert takes there.
struct StateBank {
  std::vector<std::vector<BankEntry>> buckets;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& b : buckets) n += b.size();
    return n;
  }

  const BankEntry& nth(std::size_t i) const {
    for (const auto& b : buckets) {
      if (i < b.size()) return b[i];
      i -= b.size();
    }
    throw std::out_of_range("state bank index");
  }

  const BankEntry& uniform(Rng& rng) const {
    const std::size_t n = total();
    if (n == 0) throw std::logic_error("state bank is empty");
    return nth(rng.below(n));
  }

  // Uniform over entries whose bucket is not `excluded`.
  const BankEntry* uniform_excluding(int excluded, Rng& rng) const {
    std::size_t n = 0;
    for (std::size_t a = 0; a < buckets.size(); ++a)
      if (static_cast<int>(a) != excluded) n += buckets[a].size();
    if (n == 0) return nullptr;
    std::size_t i = rng.below(n);
    for (std::size_t a = 0; a < buckets.size(); ++a) {
      if (static_cast<int>(a) == excluded) continue;
      if (i < buckets[a].size()) return &buckets[a][i];
      i -= buckets[a].size();
    }
    return nullptr;
  }
};

namespace detail {

inline void bank_insert(StateBank& bank, std::set<std::vector<double>>& seen, const Environment& env,
                        int action) {
  Observation obs = env.observation();
  std::vector<double> k(obs.data(), obs.data() + obs.size());
  if (!seen.insert(std::move(k)).second) return;
  bank.buckets[static_cast<std::size_t>(action)].push_back({std::move(obs), env.hidden(), action});
}

}  // namespace detail

// Rolls out the expert for `n_episodes` seeded episodes. Buckets left empty
// are filled from random-policy rollouts filtered by expert preference.
inline StateBank build_state_bank(EnvId id, const ExpertPolicy& expert, int n_episodes, std::uint64_t seed,
                                  const GridConfig& grid = {}) {
  StateBank bank;
  bank.buckets.resize(static_cast<std::size_t>(action_count(id)));
  std::set<std::vector<double>> seen;
  Rng seeds(derive_seed(seed, 11));
  for (int e = 0; e < n_episodes; ++e) {
    Environment env = Environment::reset(id, seeds.next_u64(), grid);
    while (!env.done()) {
      const int a = expert(env.hidden());
      detail::bank_insert(bank, seen, env, a);
      env.step(a);
    }
  }

  auto has_empty = [&] {
    for (const auto& b : bank.buckets)
      if (b.empty()) return true;
    return false;
  };
  Rng rng(derive_seed(seed, 12));
  for (int attempt = 0; attempt < 500 && has_empty(); ++attempt) {
    Environment env = Environment::reset(id, rng.next_u64(), grid);
    while (!env.done()) {
      const int a = expert(env.hidden());
      if (bank.buckets[static_cast<std::size_t>(a)].empty()) detail::bank_insert(bank, seen, env, a);
      env.step(rng.index(static_cast<std::size_t>(env.action_count())));
    }
  }
  if (has_empty()) std::clog << "warning: state bank has an empty action bucket after supplementing\n";
  return bank;
}

struct CounterfactualDraw {
  Counterfactual cf;
  bool contrastive = true;
  const BankEntry* source = nullptr;  // bank entry used for s_cf, if any
};

// Builds the variant's counterfactual for a fact whose feedback was `f`.
// Returns nothing when the variant attaches no counterfactual to this sign.
// `preferred` is the (possibly degraded) preferred action; `degraded` marks a
// low-quality draw, which samples states from the whole bank.
inline std::optional<CounterfactualDraw> construct_counterfactual(Variant variant, int f, int preferred,
                                                                  bool degraded, int a_prev, int n_actions,
                                                                  const StateBank& bank, Rng& rng) {
  auto from_bucket = [&](int action) -> const BankEntry* {
    const auto& b = bank.buckets.at(static_cast<std::size_t>(action));
    if (!degraded && !b.empty()) return &b[rng.below(b.size())];
    if (!degraded) std::clog << "warning: empty state-bank bucket, sampling the whole bank\n";
    return &bank.uniform(rng);
  };

  CounterfactualDraw d;
  switch (variant) {
    case Variant::vanilla: return std::nullopt;
    case Variant::cfa:
      if (f != -1) return std::nullopt;
      d.cf = {+1, CfKind::action, std::nullopt, preferred};
      return d;
    case Variant::cfs:
      if (f != -1) return std::nullopt;
      d.source = from_bucket(a_prev);
      d.cf = {+1, CfKind::state, d.source->observation, std::nullopt};
      return d;
    case Variant::cfa_down: {
      if (f != +1) return std::nullopt;
      std::vector<int> others;
      for (int a = 0; a < n_actions; ++a)
        if (a != preferred) others.push_back(a);
      if (others.empty()) return std::nullopt;
      d.cf = {-1, CfKind::action, std::nullopt, others[rng.below(others.size())]};
      return d;
    }
    case Variant::cfs_down: {
      if (f != +1) return std::nullopt;
      const BankEntry* e = degraded ? &bank.uniform(rng) : bank.uniform_excluding(a_prev, rng);
      if (!e) {
        std::clog << "warning: no bank entries prefer another action, sampling the whole bank\n";
        e = &bank.uniform(rng);
      }
      d.source = e;
      d.cf = {-1, CfKind::state, e->observation, std::nullopt};
      return d;
    }
    case Variant::random_extra: {
      if (f != -1) return std::nullopt;
      const BankEntry& e = bank.uniform(rng);
      d.source = &e;
      d.cf = {+1, CfKind::sample, e.observation, e.action};
      d.contrastive = false;
      return d;
    }
  }
  return std::nullopt;
}

struct OracleDecision {
  std::optional<FeedbackEvent> event;
  int expert = -1;
  int preferred = -1;
  bool degraded = false;
  const BankEntry* cf_source = nullptr;
};

// Full decision with diagnostics. Draw order is fixed: presence, quality,
// degraded action (if any), counterfactual sampling.
inline OracleDecision oracle_decide(const OracleConfig& cfg, const ExpertPolicy& expert, const StateBank& bank,
                                    const Observation& s_prev, const HiddenState& hidden_prev, int a_prev,
                                    Rng& rng) {
  OracleDecision d;
  if (!rng.bernoulli(cfg.feedback_frequency)) return d;
  const int n_actions = action_count(env_of(hidden_prev));
  d.expert = expert(hidden_prev);
  d.degraded = !rng.bernoulli(cfg.feedback_quality);
  d.preferred = d.degraded ? rng.index(static_cast<std::size_t>(n_actions)) : d.expert;

  FeedbackEvent e;
  e.f = a_prev == d.preferred ? +1 : -1;
  e.state = s_prev;
  e.action = a_prev;
  if (auto cf = construct_counterfactual(cfg.variant, e.f, d.preferred, d.degraded, a_prev, n_actions, bank, rng)) {
    e.cf = std::move(cf->cf);
    e.contrastive_enabled = cf->contrastive;
    d.cf_source = cf->source;
  }
  d.event = std::move(e);
  return d;
}

inline std::optional<FeedbackEvent> gather_feedback(const OracleConfig& cfg, const ExpertPolicy& expert,
                                                    const StateBank& bank, const Observation& s_prev,
                                                    const HiddenState& hidden_prev, int a_prev, Rng& rng) {
  return oracle_decide(cfg, expert, bank, s_prev, hidden_prev, a_prev, rng).event;
}

// Stateful feedback source for Trainer / run_training.
class Oracle {
 public:
  Oracle(OracleConfig cfg, const StateBank& bank, ExpertPolicy expert = {})
      : cfg_(cfg), bank_(&bank), expert_(expert), rng_(derive_seed(cfg.seed, 21)) {
    cfg_.validate();
  }

  std::optional<FeedbackEvent> operator()(const Observation& s_prev, const HiddenState& hidden_prev, int a_prev) {
    return gather_feedback(cfg_, expert_, *bank_, s_prev, hidden_prev, a_prev, rng_);
  }

  const OracleConfig& config() const { return cfg_; }
  const ExpertPolicy& expert() const { return expert_; }

 private:
  OracleConfig cfg_;
  const StateBank* bank_;
  ExpertPolicy expert_;
  Rng rng_;
};

}  // namespace cftamer
