#pragma once

// Drives a Session with the synthetic oracle's decisions, encoded as client
// messages, and runs the same cell offline for comparison.

#include <stdexcept>
#include <string>

#include "cftamer/experiment.hpp"
#include "cftamer/session.hpp"

namespace scripted {

using namespace cftamer;

struct Outcome {
  HModel session_model;
  TrainingLog session_log;
  HModel offline_model;
  TrainingLog offline_log;
  int positive = 0;
  int negative = 0;
  int cf_action = 0;
  int cf_state = 0;
  int skips = 0;
};

inline json grid_edit(const GridState& g) {
  return {{"cells", grid_cells_to_json(g)},
          {"agent", {{"x", g.agent.x}, {"y", g.agent.y}, {"dir", static_cast<int>(g.dir)}}}};
}

inline json client_message(const OracleDecision& d, int step, Outcome& tally) {
  json m = {{"schema_version", kSchemaVersion}, {"step", step}};
  if (!d.event) {
    ++tally.skips;
    m["kind"] = "skip";
    return m;
  }
  const auto& e = *d.event;
  m["kind"] = "feedback";
  m["f"] = e.f;
  (e.f > 0 ? tally.positive : tally.negative)++;
  if (!e.cf) return m;
  if (e.f != -1 || e.cf->f_cf != 1 || !e.contrastive_enabled)
    throw std::invalid_argument("scripted client only replays upward counterfactuals");
  if (e.cf->kind == CfKind::action) {
    ++tally.cf_action;
    m["cf"] = {{"kind", "action"}, {"action", *e.cf->a_cf}};
  } else if (e.cf->kind == CfKind::state) {
    const auto* g = d.cf_source ? std::get_if<GridState>(&d.cf_source->hidden) : nullptr;
    if (!g) throw std::invalid_argument("state counterfactual without a grid source");
    ++tally.cf_state;
    m["cf"] = {{"kind", "state"}, {"grid", grid_edit(*g)}};
  } else {
    throw std::invalid_argument("scripted client cannot send sample counterfactuals");
  }
  return m;
}

inline Outcome replay(const ExperimentConfig& cfg, const Norms& norms, Variant v, std::uint64_t seed) {
  const ExpertPolicy expert;
  const StateBank bank = build_state_bank(cfg.env, expert, cfg.bank_episodes, seed, cfg.grid);
  const OracleConfig ocfg{cfg.feedback_frequency, cfg.feedback_quality, v, seed};
  const TrainerConfig tcfg = cell_trainer_config(cfg, v, seed);
  const EnvId env = cfg.env;
  const GridConfig grid = cfg.grid;
  auto evaluator = [&](const HModel& m) { return evaluate_model(m, env, cfg.eval_seeds, norms, grid); };

  Outcome out{};
  Oracle oracle(ocfg, bank, expert);
  auto offline = run_training<Environment>(
      tcfg, [env, grid](std::uint64_t s) { return Environment::reset(env, s, grid); }, oracle, evaluator);
  if (offline.log.aborted) throw std::runtime_error("offline run aborted: " + offline.log.error);
  out.offline_model = std::move(offline.model);
  out.offline_log = std::move(offline.log);

  Session session("scripted", SessionConfig{env, grid, tcfg, cfg.eval_seeds, norms, 0});
  Rng rng(derive_seed(seed, 21));  // the Oracle's stream
  auto msgs = session.start();
  while (session.phase() != Phase::ended) {
    for (const auto& m : msgs)
      if (m.at("kind") == "error") throw std::runtime_error("session error: " + m.dump());
    const auto step = session.pending_step();
    if (!step) throw std::runtime_error("session neither awaiting nor ended");
    const auto& p = *session.trainer().pending();
    const auto d = oracle_decide(ocfg, expert, bank, p.state, p.hidden, p.action, rng);
    msgs = session.handle(client_message(d, *step, out));
  }
  out.session_model = session.trainer().model();
  out.session_log = session.trainer().log();
  return out;
}

}  // namespace scripted
