#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>

#include "cftamer/classic_control.hpp"
#include "cftamer/gridworld.hpp"

namespace cftamer {

enum class EnvId { gridworld, cartpole, mountaincar };

inline std::string_view to_string(EnvId id) {
  switch (id) {
    case EnvId::gridworld: return "gridworld";
    case EnvId::cartpole: return "cartpole";
    case EnvId::mountaincar: return "mountaincar";
  }
  return "?";
}

inline EnvId parse_env_id(std::string_view s) {
  if (s == "gridworld") return EnvId::gridworld;
  if (s == "cartpole") return EnvId::cartpole;
  if (s == "mountaincar") return EnvId::mountaincar;
  throw std::invalid_argument("unknown environment '" + std::string(s) + "'");
}

inline int action_count(EnvId id) {
  switch (id) {
    case EnvId::gridworld: return kGridActions;
    case EnvId::cartpole: return cartpole::kActions;
    case EnvId::mountaincar: return mountaincar::kActions;
  }
  return 0;
}

inline int max_episode_steps(EnvId id, const GridConfig& grid = {}) {
  switch (id) {
    case EnvId::gridworld: return 4 * grid.width * grid.height;
    case EnvId::cartpole: return cartpole::kMaxSteps;
    case EnvId::mountaincar: return mountaincar::kMaxSteps;
  }
  return 0;
}

inline std::size_t observation_size(EnvId id, const GridConfig& grid = {}) {
  switch (id) {
    case EnvId::gridworld: return grid_observation_size(grid.view_size);
    case EnvId::cartpole: return 4;
    case EnvId::mountaincar: return 2;
  }
  return 0;
}

// Full environment state. Only the oracle and the session renderer look at
// this; the learner sees Observation.
using HiddenState = std::variant<GridState, CartPoleState, MountainCarState>;

inline EnvId env_of(const HiddenState& h) {
  switch (h.index()) {
    case 0: return EnvId::gridworld;
    case 1: return EnvId::cartpole;
    default: return EnvId::mountaincar;
  }
}

inline Observation encode_observation(const HiddenState& h) {
  return std::visit(
      [](const auto& s) -> Observation {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, GridState>) {
          return encode_grid(s);
        } else if constexpr (std::is_same_v<S, CartPoleState>) {
          Observation o(4);
          o << s.x, s.x_dot, s.theta, s.theta_dot;
          return o;
        } else {
          Observation o(2);
          o << s.position, s.velocity;
          return o;
        }
      },
      h);
}

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  HiddenState info;
};

class EpisodeOverError : public std::logic_error {
 public:
  EpisodeOverError() : std::logic_error("step called on a finished episode; reset first") {}
};

class Environment {
 public:
  using Hidden = HiddenState;

  static Environment reset(EnvId id, std::uint64_t seed, const GridConfig& grid = {}) {
    switch (id) {
      case EnvId::gridworld: return Environment(gridworld_reset(seed, grid));
      case EnvId::cartpole: return Environment(cartpole_reset(seed));
      case EnvId::mountaincar: return Environment(mountaincar_reset(seed));
    }
    throw std::invalid_argument("unknown environment");
  }

  explicit Environment(HiddenState state, bool done = false) : state_(std::move(state)), done_(done) {
    if (auto* g = std::get_if<GridState>(&state_)) validate_grid(*g);
  }

  EnvId id() const { return env_of(state_); }
  int action_count() const { return cftamer::action_count(id()); }
  Observation observation() const { return encode_observation(state_); }
  const HiddenState& hidden() const { return state_; }
  bool done() const { return done_; }

  int steps_taken() const {
    return std::visit([](const auto& s) { return s.steps_taken; }, state_);
  }

  StepResult step(int action) {
    if (done_) throw EpisodeOverError();
    StepResult r;
    std::visit(
        [&](auto& s) {
          using S = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<S, GridState>) {
            const auto o = gridworld_step(s, action);
            r.reward = o.reward;
            r.done = o.done;
          } else if constexpr (std::is_same_v<S, CartPoleState>) {
            const auto o = cartpole_step(s, action);
            r.reward = o.reward;
            r.done = o.done;
          } else {
            const auto o = mountaincar_step(s, action);
            r.reward = o.reward;
            r.done = o.done;
          }
        },
        state_);
    done_ = r.done;
    r.observation = observation();
    r.info = state_;
    return r;
  }

 private:
  HiddenState state_;
  bool done_ = false;
};

struct Norms {
  double random = 0.0;
  double expert = 1.0;
};

inline void check_norms(const Norms& n) {
  if (!(n.expert > n.random))
    throw std::invalid_argument("degenerate normalization: R_expert must exceed R_random");
}

// Not clamped: slightly negative or >1 scores are legal.
inline double normalized_score(double raw_return, const Norms& n) {
  check_norms(n);
  return (raw_return - n.random) / (n.expert - n.random);
}

}  // namespace cftamer
