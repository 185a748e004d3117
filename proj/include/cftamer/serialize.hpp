#pragma once

// JSON encodings for models, environment states, feedback events and trainer
// snapshots. Doubles are written in shortest round-trip form, so decoding an
// encoding reproduces every parameter bit for bit.

#include <json.hpp>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cftamer/env.hpp"
#include "cftamer/feedback.hpp"
#include "cftamer/hmodel.hpp"
#include "cftamer/trainer.hpp"

namespace cftamer {

using json = nlohmann::json;

class SnapshotError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline json vector_to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Vector vector_from_json(const json& j) {
  if (!j.is_array()) throw SnapshotError("expected a numeric array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw SnapshotError("expected a numeric array");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline json matrix_to_json(const Matrix& m) {
  json data = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Matrix matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || !data.is_array() || data.size() != static_cast<std::size_t>(rows * cols))
    throw SnapshotError("matrix shape does not match its data");
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
  return m;
}

inline json gradients_to_json(const Gradients& g) {
  json layers = json::array();
  for (const auto& l : g.layers)
    layers.push_back({{"weights", matrix_to_json(l.weights)}, {"biases", vector_to_json(l.biases)}});
  return layers;
}

inline Gradients gradients_from_json(const json& j) {
  Gradients g;
  for (const auto& l : j) g.layers.push_back({matrix_from_json(l.at("weights")), vector_from_json(l.at("biases"))});
  return g;
}

inline json network_to_json(const Network& net) {
  json layers = json::array();
  for (const auto& l : net.layers)
    layers.push_back({{"activation", l.activation == Activation::relu ? "relu" : "linear"},
                      {"weights", matrix_to_json(l.weights)},
                      {"biases", vector_to_json(l.biases)}});
  return {{"layers", std::move(layers)}, {"generation", net.generation}};
}

inline Network network_from_json(const json& j) {
  Network net;
  for (const auto& l : j.at("layers")) {
    Layer layer;
    const auto act = l.at("activation").get<std::string>();
    if (act != "relu" && act != "linear") throw SnapshotError("unknown activation '" + act + "'");
    layer.activation = act == "relu" ? Activation::relu : Activation::linear;
    layer.weights = matrix_from_json(l.at("weights"));
    layer.biases = vector_from_json(l.at("biases"));
    net.layers.push_back(std::move(layer));
  }
  net.generation = j.at("generation").get<std::uint64_t>();
  net.validate();
  return net;
}

inline json adam_to_json(const AdamState& s) {
  return {{"step_size", s.config.step_size},
          {"beta1", s.config.beta1},
          {"beta2", s.config.beta2},
          {"epsilon", s.config.epsilon},
          {"step", s.step},
          {"m", gradients_to_json(s.first_moment)},
          {"v", gradients_to_json(s.second_moment)}};
}

inline AdamState adam_from_json(const json& j, const Network& net) {
  AdamState s;
  s.config = {j.at("step_size").get<double>(), j.at("beta1").get<double>(), j.at("beta2").get<double>(),
              j.at("epsilon").get<double>()};
  s.step = j.at("step").get<std::int64_t>();
  s.first_moment = gradients_from_json(j.at("m"));
  s.second_moment = gradients_from_json(j.at("v"));
  if (!s.first_moment.congruent_with(net) || !s.second_moment.congruent_with(net))
    throw SnapshotError("optimizer state does not match its network");
  return s;
}

inline json model_to_json(const HModel& m) {
  json heads = json::array();
  json head_opts = json::array();
  for (std::size_t a = 0; a < m.heads.size(); ++a) {
    heads.push_back(network_to_json(m.heads[a]));
    head_opts.push_back(adam_to_json(m.head_opts[a]));
  }
  return {{"trunk", network_to_json(m.trunk)},
          {"trunk_opt", adam_to_json(m.trunk_opt)},
          {"heads", std::move(heads)},
          {"head_opts", std::move(head_opts)}};
}

inline HModel model_from_json(const json& j) {
  HModel m;
  m.trunk = network_from_json(j.at("trunk"));
  m.trunk_opt = adam_from_json(j.at("trunk_opt"), m.trunk);
  const auto& heads = j.at("heads");
  const auto& opts = j.at("head_opts");
  if (heads.empty() || heads.size() != opts.size()) throw SnapshotError("model heads and optimizers disagree");
  for (std::size_t a = 0; a < heads.size(); ++a) {
    m.heads.push_back(network_from_json(heads[a]));
    m.head_opts.push_back(adam_from_json(opts[a], m.heads.back()));
    const auto& h = m.heads.back();
    if (h.input_size() != m.trunk.output_size() || h.output_size() != 1 ||
        h.layers.front().out_size() != m.heads.front().layers.front().out_size())
      throw SnapshotError("head " + std::to_string(a) + " does not fit the trunk");
  }
  return m;
}

// Grid rows as strings: '#' wall, '.' empty, 'G' goal.
inline json grid_cells_to_json(const GridState& g) {
  json rows = json::array();
  for (int y = 0; y < g.height; ++y) {
    std::string row;
    for (int x = 0; x < g.width; ++x) {
      const Cell c = g.at({x, y});
      row += c == Cell::wall ? '#' : (c == Cell::goal ? 'G' : '.');
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// Fills width, height, cells and goal from string rows. Shape problems are
// reported as GridValidationError so callers can surface the rule name.
inline void grid_cells_from_json(const json& rows, GridState& g) {
  if (!rows.is_array() || rows.empty()) throw GridValidationError("dimensions", "cells must be a non-empty array of rows");
  g.height = static_cast<int>(rows.size());
  g.width = -1;
  g.cells.clear();
  bool goal_seen = false;
  for (int y = 0; y < g.height; ++y) {
    if (!rows[static_cast<std::size_t>(y)].is_string())
      throw GridValidationError("dimensions", "each row must be a string");
    const auto row = rows[static_cast<std::size_t>(y)].get<std::string>();
    if (g.width < 0) g.width = static_cast<int>(row.size());
    if (static_cast<int>(row.size()) != g.width) throw GridValidationError("dimensions", "rows differ in length");
    for (int x = 0; x < g.width; ++x) {
      switch (row[static_cast<std::size_t>(x)]) {
        case '#': g.cells.push_back(Cell::wall); break;
        case '.': g.cells.push_back(Cell::empty); break;
        case 'G':
          g.cells.push_back(Cell::goal);
          if (!goal_seen) g.goal = {x, y};
          goal_seen = true;
          break;
        default:
          throw GridValidationError("cells", std::string("unknown cell character '") +
                                                 row[static_cast<std::size_t>(x)] + "'");
      }
    }
  }
}

inline json pos_to_json(Pos p) { return {{"x", p.x}, {"y", p.y}}; }
inline Pos pos_from_json(const json& j) { return {j.at("x").get<int>(), j.at("y").get<int>()}; }

inline Dir dir_from_int(int d) {
  if (d < 0 || d > 3) throw GridValidationError("agent_dir", "direction must be 0..3");
  return static_cast<Dir>(d);
}

inline json hidden_to_json(const HiddenState& h) {
  json state = std::visit(
      [](const auto& s) -> json {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, GridState>) {
          return {{"width", s.width},
                  {"height", s.height},
                  {"view_size", s.view_size},
                  {"cells", grid_cells_to_json(s)},
                  {"agent", pos_to_json(s.agent)},
                  {"dir", static_cast<int>(s.dir)},
                  {"goal", pos_to_json(s.goal)},
                  {"steps_taken", s.steps_taken},
                  {"max_steps", s.max_steps}};
        } else if constexpr (std::is_same_v<S, CartPoleState>) {
          return {{"x", s.x}, {"x_dot", s.x_dot}, {"theta", s.theta}, {"theta_dot", s.theta_dot},
                  {"steps_taken", s.steps_taken}};
        } else {
          return {{"position", s.position}, {"velocity", s.velocity}, {"steps_taken", s.steps_taken}};
        }
      },
      h);
  return {{"env", std::string(to_string(env_of(h)))}, {"state", std::move(state)}};
}

inline HiddenState hidden_from_json(const json& j) {
  const EnvId id = parse_env_id(j.at("env").get<std::string>());
  const auto& s = j.at("state");
  switch (id) {
    case EnvId::gridworld: {
      GridState g;
      grid_cells_from_json(s.at("cells"), g);
      if (s.at("width").get<int>() != g.width || s.at("height").get<int>() != g.height)
        throw SnapshotError("grid dimensions disagree with its cells");
      g.view_size = s.at("view_size").get<int>();
      g.agent = pos_from_json(s.at("agent"));
      g.dir = dir_from_int(s.at("dir").get<int>());
      g.goal = pos_from_json(s.at("goal"));
      g.steps_taken = s.at("steps_taken").get<int>();
      g.max_steps = s.at("max_steps").get<int>();
      validate_grid(g);
      return g;
    }
    case EnvId::cartpole:
      return CartPoleState{s.at("x").get<double>(), s.at("x_dot").get<double>(), s.at("theta").get<double>(),
                           s.at("theta_dot").get<double>(), s.at("steps_taken").get<int>()};
    case EnvId::mountaincar:
      return MountainCarState{s.at("position").get<double>(), s.at("velocity").get<double>(),
                              s.at("steps_taken").get<int>()};
  }
  throw SnapshotError("unknown environment");
}

inline json environment_to_json(const Environment& env) {
  return {{"hidden", hidden_to_json(env.hidden())}, {"done", env.done()}};
}

inline Environment environment_from_json(const json& j) {
  return Environment(hidden_from_json(j.at("hidden")), j.at("done").get<bool>());
}

inline json event_to_json(const FeedbackEvent& e) {
  json cf = nullptr;
  if (e.cf) {
    cf = {{"f_cf", e.cf->f_cf}, {"kind", std::string(to_string(e.cf->kind))}};
    if (e.cf->s_cf) cf["s_cf"] = vector_to_json(*e.cf->s_cf);
    if (e.cf->a_cf) cf["a_cf"] = *e.cf->a_cf;
  }
  return {{"f", e.f},
          {"state", vector_to_json(e.state)},
          {"action", e.action},
          {"cf", std::move(cf)},
          {"contrastive_enabled", e.contrastive_enabled}};
}

inline FeedbackEvent event_from_json(const json& j) {
  FeedbackEvent e;
  e.f = j.at("f").get<int>();
  e.state = vector_from_json(j.at("state"));
  e.action = j.at("action").get<int>();
  e.contrastive_enabled = j.at("contrastive_enabled").get<bool>();
  const auto& cf = j.at("cf");
  if (!cf.is_null()) {
    Counterfactual c;
    c.f_cf = cf.at("f_cf").get<int>();
    c.kind = parse_cf_kind(cf.at("kind").get<std::string>());
    if (cf.contains("s_cf")) c.s_cf = vector_from_json(cf.at("s_cf"));
    if (cf.contains("a_cf")) c.a_cf = cf.at("a_cf").get<int>();
    e.cf = std::move(c);
  }
  return e;
}

inline json log_to_json(const TrainingLog& log) {
  json events = json::array();
  for (const auto& r : log.events)
    events.push_back({r.env_step, r.f, r.has_cf, std::string(to_string(r.kind)), r.f_cf, r.contrastive});
  json checkpoints = json::array();
  for (const auto& c : log.checkpoints) checkpoints.push_back({c.env_steps, c.score, c.feedback_count, c.cf_count});
  return {{"events", std::move(events)},
          {"checkpoints", std::move(checkpoints)},
          {"total_steps", log.total_steps},
          {"episodes_completed", log.episodes_completed},
          {"aborted", log.aborted},
          {"error", log.error}};
}

inline TrainingLog log_from_json(const json& j) {
  TrainingLog log;
  for (const auto& r : j.at("events"))
    log.events.push_back({r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<bool>(),
                          parse_cf_kind(r.at(3).get<std::string>()), r.at(4).get<int>(), r.at(5).get<bool>()});
  for (const auto& c : j.at("checkpoints"))
    log.checkpoints.push_back({c.at(0).get<int>(), c.at(1).get<double>(), c.at(2).get<int>(), c.at(3).get<int>()});
  log.total_steps = j.at("total_steps").get<int>();
  log.episodes_completed = j.at("episodes_completed").get<int>();
  log.aborted = j.at("aborted").get<bool>();
  log.error = j.at("error").get<std::string>();
  return log;
}

using EnvTrainer = Trainer<Environment>;

inline json trainer_snapshot_to_json(const EnvTrainer::Snapshot& s) {
  json buffer = json::array();
  for (const auto& e : s.buffer) buffer.push_back(event_to_json(e));
  json pending = nullptr;
  if (s.pending)
    pending = {{"state", vector_to_json(s.pending->state)},
               {"hidden", hidden_to_json(s.pending->hidden)},
               {"action", s.pending->action}};
  return {{"model", model_to_json(s.model)},
          {"buffer", std::move(buffer)},
          {"rng", s.rng_state},
          {"env_rng", s.env_rng_state},
          {"env", environment_to_json(s.env)},
          {"pending", std::move(pending)},
          {"episode", s.episode},
          {"step_in_episode", s.step_in_episode},
          {"episode_over", s.episode_over},
          {"finished", s.finished},
          {"feedback_count", s.feedback_count},
          {"cf_count", s.cf_count},
          {"log", log_to_json(s.log)}};
}

inline EnvTrainer::Snapshot trainer_snapshot_from_json(const json& j) {
  std::vector<FeedbackEvent> buffer;
  for (const auto& e : j.at("buffer")) buffer.push_back(event_from_json(e));
  std::optional<EnvTrainer::Pending> pending;
  if (const auto& p = j.at("pending"); !p.is_null())
    pending = EnvTrainer::Pending{vector_from_json(p.at("state")), hidden_from_json(p.at("hidden")),
                                  p.at("action").get<int>()};
  return {model_from_json(j.at("model")),
          std::move(buffer),
          j.at("rng").get<std::string>(),
          j.at("env_rng").get<std::string>(),
          environment_from_json(j.at("env")),
          std::move(pending),
          j.at("episode").get<int>(),
          j.at("step_in_episode").get<int>(),
          j.at("episode_over").get<bool>(),
          j.at("finished").get<bool>(),
          j.at("feedback_count").get<int>(),
          j.at("cf_count").get<int>(),
          log_from_json(j.at("log"))};
}

}  // namespace cftamer
