#pragma once

// Interactive training session. The training loop is the same Trainer used
// offline; the feedback for each pending (state, action) pair comes from a
// client message instead of an oracle. The class is transport-free: every
// call returns the JSON messages to send, and the host owns sockets and
// timers.

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cftamer/evaluation.hpp"
#include "cftamer/serialize.hpp"
#include "cftamer/trainer.hpp"
#include "cftamer/version.hpp"

namespace cftamer {

enum class Phase { awaiting_feedback, stepping, paused, ended };

inline std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::awaiting_feedback: return "awaiting_feedback";
    case Phase::stepping: return "stepping";
    case Phase::paused: return "paused";
    case Phase::ended: return "ended";
  }
  return "?";
}

inline Phase parse_phase(std::string_view s) {
  if (s == "awaiting_feedback") return Phase::awaiting_feedback;
  if (s == "stepping") return Phase::stepping;
  if (s == "paused") return Phase::paused;
  if (s == "ended") return Phase::ended;
  throw SnapshotError("unknown phase '" + std::string(s) + "'");
}

inline constexpr int kDefaultFeedbackTimeoutMs = 10000;
inline constexpr int kMaxFeedbackTimeoutMs = 3600000;

struct SessionConfig {
  EnvId env = EnvId::gridworld;
  GridConfig grid;
  TrainerConfig trainer;
  std::vector<std::uint64_t> eval_seeds = default_eval_seeds();
  Norms norms;
  int feedback_timeout_ms = kDefaultFeedbackTimeoutMs;
};

inline json session_config_to_json(const SessionConfig& c) {
  const auto& t = c.trainer;
  std::vector<Eigen::Index> trunk = t.dims.trunk_hidden;
  return {{"env", std::string(to_string(c.env))},
          {"grid", {{"width", c.grid.width}, {"height", c.grid.height}, {"view_size", c.grid.view_size}}},
          {"trainer",
           {{"variant", std::string(to_string(t.variant))},
            {"episodes", t.episodes},
            {"max_steps", t.max_steps},
            {"buffer_capacity", t.buffer_capacity},
            {"minibatch", t.minibatch},
            {"replay_interval", t.replay_interval},
            {"seed", t.seed},
            {"trunk_hidden", trunk},
            {"embed_dim", t.dims.embed_dim},
            {"step_size", t.adam.step_size},
            {"beta1", t.adam.beta1},
            {"beta2", t.adam.beta2},
            {"epsilon", t.adam.epsilon},
            {"checkpoint_every", t.checkpoint_every},
            {"horizon", t.horizon}}},
          {"eval_seeds", c.eval_seeds},
          {"norms", {{"random", c.norms.random}, {"expert", c.norms.expert}}},
          {"feedback_timeout_ms", c.feedback_timeout_ms}};
}

inline SessionConfig session_config_from_json(const json& j) {
  SessionConfig c;
  c.env = parse_env_id(j.at("env").get<std::string>());
  const auto& g = j.at("grid");
  c.grid = {g.at("width").get<int>(), g.at("height").get<int>(), g.at("view_size").get<int>()};
  const auto& t = j.at("trainer");
  c.trainer.variant = parse_variant(t.at("variant").get<std::string>());
  c.trainer.episodes = t.at("episodes").get<int>();
  c.trainer.max_steps = t.at("max_steps").get<int>();
  c.trainer.buffer_capacity = t.at("buffer_capacity").get<std::size_t>();
  c.trainer.minibatch = t.at("minibatch").get<int>();
  c.trainer.replay_interval = t.at("replay_interval").get<int>();
  c.trainer.seed = t.at("seed").get<std::uint64_t>();
  c.trainer.dims.trunk_hidden = t.at("trunk_hidden").get<std::vector<Eigen::Index>>();
  c.trainer.dims.embed_dim = t.at("embed_dim").get<Eigen::Index>();
  c.trainer.adam = {t.at("step_size").get<double>(), t.at("beta1").get<double>(), t.at("beta2").get<double>(),
                    t.at("epsilon").get<double>()};
  c.trainer.checkpoint_every = t.at("checkpoint_every").get<int>();
  c.trainer.horizon = t.at("horizon").get<int>();
  c.eval_seeds = j.at("eval_seeds").get<std::vector<std::uint64_t>>();
  c.norms = {j.at("norms").at("random").get<double>(), j.at("norms").at("expert").get<double>()};
  c.feedback_timeout_ms = j.at("feedback_timeout_ms").get<int>();
  c.trainer.validate();
  check_norms(c.norms);
  return c;
}

inline std::vector<std::string> action_names(EnvId id) {
  switch (id) {
    case EnvId::gridworld: return {"turn_left", "turn_right", "forward"};
    case EnvId::cartpole: return {"push_left", "push_right"};
    case EnvId::mountaincar: return {"left", "coast", "right"};
  }
  return {};
}

// Client-side grid edit: full layout plus agent pose. Goal and dimensions are
// taken from the layout; the step budget is copied from `reference`.
inline Observation apply_state_edit(const json& edit, const GridState& reference) {
  GridState g;
  if (!edit.is_object() || !edit.contains("cells") || !edit.contains("agent"))
    throw GridValidationError("edit_shape", "edit needs 'cells' and 'agent'");
  grid_cells_from_json(edit.at("cells"), g);
  const auto& agent = edit.at("agent");
  if (!agent.is_object() || !agent.contains("x") || !agent.contains("y") || !agent.contains("dir") ||
      !agent.at("x").is_number_integer() || !agent.at("y").is_number_integer() ||
      !agent.at("dir").is_number_integer())
    throw GridValidationError("edit_shape", "agent needs integer x, y and dir");
  g.agent = {agent.at("x").get<int>(), agent.at("y").get<int>()};
  g.dir = dir_from_int(agent.at("dir").get<int>());
  g.view_size = reference.view_size;
  g.steps_taken = 0;
  g.max_steps = reference.max_steps;
  validate_grid(g);
  return encode_grid(g);
}

inline json render_state(const HiddenState& h) {
  return std::visit(
      [](const auto& s) -> json {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, GridState>) {
          return {{"grid",
                   {{"width", s.width},
                    {"height", s.height},
                    {"view_size", s.view_size},
                    {"cells", grid_cells_to_json(s)},
                    {"agent", {{"x", s.agent.x}, {"y", s.agent.y}, {"dir", static_cast<int>(s.dir)}}},
                    {"goal", pos_to_json(s.goal)}}}};
        } else if constexpr (std::is_same_v<S, CartPoleState>) {
          return {{"physics", {{"x", s.x}, {"x_dot", s.x_dot}, {"theta", s.theta}, {"theta_dot", s.theta_dot}}}};
        } else {
          return {{"physics", {{"position", s.position}, {"velocity", s.velocity}}}};
        }
      },
      h);
}

class Session {
 public:
  using Messages = std::vector<json>;

  Session(std::string id, SessionConfig cfg)
      : id_(std::move(id)), cfg_(std::move(cfg)), trainer_(make_trainer(cfg_)), timeout_ms_(cfg_.feedback_timeout_ms) {}

  const std::string& id() const { return id_; }
  const SessionConfig& config() const { return cfg_; }
  Phase phase() const { return phase_; }
  int timeout_ms() const { return timeout_ms_; }
  const EnvTrainer& trainer() const { return trainer_; }

  // Step id of the pair currently waiting for feedback.
  std::optional<int> pending_step() const {
    if (phase_ != Phase::awaiting_feedback || !trainer_.pending()) return std::nullopt;
    return trainer_.total_steps();
  }

  // Takes the first step. Idempotent once the session is running.
  Messages start() {
    if (started_) return {state_update()};
    started_ = true;
    return proceed();
  }

  Messages handle_text(std::string_view text) {
    json msg;
    try {
      msg = json::parse(text);
    } catch (const json::parse_error& e) {
      return {error("malformed", std::string("invalid JSON: ") + e.what())};
    }
    return handle(msg);
  }

  Messages handle(const json& msg) {
    if (!msg.is_object()) return {error("malformed", "message must be a JSON object")};
    if (!msg.contains("schema_version") || msg.at("schema_version") != kSchemaVersion)
      return {error("schema_version", "schema_version must be " + std::to_string(kSchemaVersion))};
    if (!msg.contains("kind") || !msg.at("kind").is_string()) return {error("malformed", "missing 'kind'")};
    const std::string kind = msg.at("kind").get<std::string>();
    if (phase_ == Phase::ended) return {error("session_ended", "session has ended")};
    if (kind == "feedback") return on_feedback(msg);
    if (kind == "skip") return on_skip(msg);
    if (kind == "pause") return on_pause();
    if (kind == "resume") return on_resume();
    if (kind == "set_speed") return on_set_speed(msg);
    if (kind == "end") return finish("client");
    return {error("unknown_kind", "unknown message kind '" + kind + "'")};
  }

  // Timer expiry for `step`. A timer for a step that has since been answered
  // does nothing.
  Messages timeout(int step) {
    if (pending_step() != step) return {};
    trainer_.resolve(std::nullopt);
    return proceed();
  }

  // Connection lost: hold the pending pair and wait for a resume.
  void disconnect() {
    if (phase_ == Phase::awaiting_feedback || phase_ == Phase::stepping) phase_ = Phase::paused;
  }

  json snapshot() const {
    return {{"schema_version", kSchemaVersion},
            {"kind", "session_snapshot"},
            {"session_id", id_},
            {"phase", std::string(to_string(phase_))},
            {"started", started_},
            {"timeout_ms", timeout_ms_},
            {"reported_checkpoints", reported_},
            {"config", session_config_to_json(cfg_)},
            {"trainer", trainer_snapshot_to_json(trainer_.snapshot())}};
  }

  static Session restore(const json& j) {
    try {
      if (!j.is_object() || j.value("kind", "") != "session_snapshot")
        throw SnapshotError("not a session snapshot");
      if (!j.contains("schema_version") || j.at("schema_version") != kSchemaVersion)
        throw SnapshotError("unsupported snapshot schema_version");
      Session s(j.at("session_id").get<std::string>(), session_config_from_json(j.at("config")));
      auto snap = trainer_snapshot_from_json(j.at("trainer"));
      const auto obs = encode_observation(snap.env.hidden());
      if (snap.env.id() != s.cfg_.env || snap.model.input_size() != obs.size() ||
          snap.model.action_count() != action_count(s.cfg_.env))
        throw SnapshotError("snapshot model does not fit its environment");
      s.trainer_.restore(std::move(snap));
      s.phase_ = parse_phase(j.at("phase").get<std::string>());
      s.started_ = j.at("started").get<bool>();
      s.timeout_ms_ = j.at("timeout_ms").get<int>();
      s.reported_ = j.at("reported_checkpoints").get<std::size_t>();
      if (s.phase_ == Phase::stepping) s.phase_ = Phase::paused;
      const bool has_pending = s.trainer_.pending().has_value();
      if (s.phase_ == Phase::awaiting_feedback && !has_pending)
        throw SnapshotError("awaiting_feedback snapshot without a pending pair");
      return s;
    } catch (const json::exception& e) {
      throw SnapshotError(std::string("corrupt session snapshot: ") + e.what());
    } catch (const std::invalid_argument& e) {
      throw SnapshotError(std::string("corrupt session snapshot: ") + e.what());
    }
  }

  // Current view for a client that just attached.
  Messages render() const {
    Messages out{state_update()};
    if (phase_ == Phase::awaiting_feedback) out.push_back(awaiting());
    return out;
  }

  json state_update() const {
    const Environment& env = trainer_.env();
    json m = envelope("state_update");
    m["session_id"] = id_;
    m["phase"] = std::string(to_string(phase_));
    m["episode"] = trainer_.episode();
    m["step"] = trainer_.total_steps();
    m["step_in_episode"] = trainer_.step_in_episode();
    m["env"] = std::string(to_string(cfg_.env));
    m.update(render_state(env.hidden()));
    m["last_action"] = trainer_.pending() ? json(trainer_.pending()->action) : json(nullptr);
    m["h_values"] = h_values(trainer_.model(), env.observation());
    m["action_names"] = action_names(cfg_.env);
    m["timeout_ms"] = timeout_ms_;
    return m;
  }

 private:
  static EnvTrainer make_trainer(const SessionConfig& c) {
    const EnvId env = c.env;
    const GridConfig grid = c.grid;
    const auto seeds = c.eval_seeds;
    const Norms norms = c.norms;
    return EnvTrainer(
        c.trainer, [env, grid](std::uint64_t s) { return Environment::reset(env, s, grid); },
        [env, grid, seeds, norms](const HModel& m) { return evaluate_model(m, env, seeds, norms, grid); });
  }

  static json envelope(std::string_view kind) { return {{"schema_version", kSchemaVersion}, {"kind", kind}}; }

  json error(std::string_view code, const std::string& message, const std::string& rule = {}) const {
    json m = envelope("error");
    m["code"] = code;
    m["message"] = message;
    if (!rule.empty()) m["rule"] = rule;
    return m;
  }

  json awaiting() const {
    const auto& p = *trainer_.pending();
    json m = envelope("awaiting_feedback");
    m["step"] = trainer_.total_steps();
    m["action"] = p.action;
    m["action_name"] = action_names(cfg_.env).at(static_cast<std::size_t>(p.action));
    m["previous"] = render_state(p.hidden);
    m["timeout_ms"] = timeout_ms_;
    return m;
  }

  void report_checkpoints(Messages& out) {
    const auto& cps = trainer_.log().checkpoints;
    for (; reported_ < cps.size(); ++reported_) {
      const auto& c = cps[reported_];
      json m = envelope("eval_report");
      m["env_steps"] = c.env_steps;
      m["score"] = c.score;
      m["feedback_count"] = c.feedback_count;
      m["cf_count"] = c.cf_count;
      out.push_back(std::move(m));
    }
  }

  Messages finish(std::string_view reason) {
    Messages out;
    report_checkpoints(out);
    phase_ = Phase::ended;
    json m = envelope("session_end");
    m["reason"] = reason;
    m["steps"] = trainer_.total_steps();
    m["episodes"] = trainer_.log().episodes_completed;
    out.push_back(std::move(m));
    return out;
  }

  // After the pending pair is resolved: take the next step and ask about it.
  Messages proceed() {
    if (trainer_.finished()) return finish("finished");
    phase_ = Phase::stepping;
    trainer_.advance();
    if (trainer_.finished()) {
      Messages out{state_update()};
      for (auto& m : finish("finished")) out.push_back(std::move(m));
      return out;
    }
    phase_ = Phase::awaiting_feedback;
    Messages out{state_update()};
    report_checkpoints(out);
    out.push_back(awaiting());
    return out;
  }

  std::optional<json> check_step(const json& msg) const {
    if (phase_ != Phase::awaiting_feedback) return error("not_awaiting_feedback", "no feedback is being requested");
    if (!msg.contains("step") || !msg.at("step").is_number_integer())
      return error("malformed", "feedback needs an integer 'step'");
    if (msg.at("step").get<int>() != *pending_step())
      return error("stale_step", "step " + std::to_string(msg.at("step").get<int>()) +
                                     " is not the pending step " + std::to_string(*pending_step()));
    return std::nullopt;
  }

  Messages on_skip(const json& msg) {
    if (auto e = check_step(msg)) return {*e};
    trainer_.resolve(std::nullopt);
    return proceed();
  }

  Messages on_feedback(const json& msg) {
    if (auto e = check_step(msg)) return {*e};
    if (!msg.contains("f") || !msg.at("f").is_number_integer() ||
        (msg.at("f").get<int>() != 1 && msg.at("f").get<int>() != -1))
      return {error("malformed", "'f' must be -1 or +1")};
    const auto& p = *trainer_.pending();
    FeedbackEvent e;
    e.f = msg.at("f").get<int>();
    e.state = p.state;
    e.action = p.action;
    const json cf = msg.value("cf", json(nullptr));
    if (!cf.is_null()) {
      if (e.f != -1) return {error("malformed", "counterfactuals are only accepted with f = -1")};
      if (!cf.is_object() || !cf.contains("kind") || !cf.at("kind").is_string())
        return {error("malformed", "cf needs a 'kind'")};
      const std::string kind = cf.at("kind").get<std::string>();
      if (kind == "action") {
        if (!cf.contains("action") || !cf.at("action").is_number_integer())
          return {error("malformed", "action counterfactual needs an integer 'action'")};
        const int a = cf.at("action").get<int>();
        if (a < 0 || a >= trainer_.env().action_count()) return {error("malformed", "counterfactual action out of range")};
        if (a == p.action) return {error("malformed", "counterfactual action equals the taken action")};
        e.cf = Counterfactual{+1, CfKind::action, std::nullopt, a};
      } else if (kind == "state") {
        const auto* g = std::get_if<GridState>(&p.hidden);
        if (!g) return {error("unsupported", "state edits are only supported on gridworld")};
        if (!cf.contains("grid")) return {error("malformed", "state counterfactual needs a 'grid'")};
        try {
          e.cf = Counterfactual{+1, CfKind::state, apply_state_edit(cf.at("grid"), *g), std::nullopt};
        } catch (const GridValidationError& ex) {
          return {error("invalid_state_edit", ex.what(), ex.rule())};
        } catch (const json::exception& ex) {
          return {error("malformed", ex.what())};
        }
      } else {
        return {error("malformed", "unknown counterfactual kind '" + kind + "'")};
      }
      e.contrastive_enabled = true;
    }
    trainer_.resolve(e);
    return proceed();
  }

  Messages on_pause() {
    if (phase_ == Phase::paused) return {state_update()};
    phase_ = Phase::paused;
    return {state_update()};
  }

  Messages on_resume() {
    if (phase_ != Phase::paused) return {error("not_paused", "session is not paused")};
    if (!started_) {
      started_ = true;
      return proceed();
    }
    if (trainer_.pending()) {
      phase_ = Phase::awaiting_feedback;
      return {state_update(), awaiting()};
    }
    return proceed();
  }

  Messages on_set_speed(const json& msg) {
    if (!msg.contains("timeout_ms") || !msg.at("timeout_ms").is_number_integer())
      return {error("malformed", "set_speed needs an integer 'timeout_ms'")};
    const int t = msg.at("timeout_ms").get<int>();
    if (t < 0 || t > kMaxFeedbackTimeoutMs)
      return {error("malformed", "timeout_ms must lie in [0, " + std::to_string(kMaxFeedbackTimeoutMs) + "]")};
    timeout_ms_ = t;
    if (phase_ == Phase::awaiting_feedback) return {awaiting()};
    return {state_update()};
  }

  std::string id_;
  SessionConfig cfg_;
  EnvTrainer trainer_;
  Phase phase_ = Phase::stepping;
  bool started_ = false;
  int timeout_ms_ = kDefaultFeedbackTimeoutMs;
  std::size_t reported_ = 0;
};

}  // namespace cftamer
