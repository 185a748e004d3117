#pragma once

// MiniGrid-style room with a randomly placed goal and an egocentric,
// partially observable view.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cftamer/nn.hpp"
#include "cftamer/rng.hpp"

namespace cftamer {

using Observation = Vector;

enum class Cell : std::uint8_t { empty = 0, wall = 1, goal = 2 };

// Clockwise from east, matching MiniGrid's direction indices.
enum class Dir : std::uint8_t { east = 0, south = 1, west = 2, north = 3 };

enum GridAction : int { turn_left = 0, turn_right = 1, move_forward = 2 };
inline constexpr int kGridActions = 3;

struct Pos {
  int x = 0;
  int y = 0;
  friend bool operator==(const Pos&, const Pos&) = default;
};

inline Pos dir_vector(Dir d) {
  static constexpr std::array<Pos, 4> v{{{1, 0}, {0, 1}, {-1, 0}, {0, -1}}};
  return v[static_cast<int>(d)];
}

inline Dir rotate_left(Dir d) { return static_cast<Dir>((static_cast<int>(d) + 3) % 4); }
inline Dir rotate_right(Dir d) { return static_cast<Dir>((static_cast<int>(d) + 1) % 4); }

struct GridConfig {
  int width = 8;
  int height = 8;
  int view_size = 7;
};

class GridValidationError : public std::invalid_argument {
 public:
  GridValidationError(std::string rule, const std::string& what)
      : std::invalid_argument(rule + ": " + what), rule_(std::move(rule)) {}
  const std::string& rule() const { return rule_; }

 private:
  std::string rule_;
};

struct GridState {
  int width = 0;
  int height = 0;
  int view_size = 7;
  std::vector<Cell> cells;  // row-major, y * width + x
  Pos agent;
  Dir dir = Dir::east;
  Pos goal;
  int steps_taken = 0;
  int max_steps = 0;

  bool in_bounds(Pos p) const { return p.x >= 0 && p.y >= 0 && p.x < width && p.y < height; }
  Cell at(Pos p) const { return cells[static_cast<std::size_t>(p.y * width + p.x)]; }
  Cell& at(Pos p) { return cells[static_cast<std::size_t>(p.y * width + p.x)]; }
  Pos front() const {
    const Pos d = dir_vector(dir);
    return {agent.x + d.x, agent.y + d.y};
  }

  friend bool operator==(const GridState&, const GridState&) = default;
};

// Rule names are part of the session protocol's error messages.
inline void validate_grid(const GridState& g) {
  if (g.width < 3 || g.height < 3 || g.cells.size() != static_cast<std::size_t>(g.width * g.height))
    throw GridValidationError("dimensions", "grid must be at least 3x3 with width*height cells");
  if (g.view_size < 1 || g.view_size % 2 == 0)
    throw GridValidationError("view_size", "view size must be odd and positive");
  for (int x = 0; x < g.width; ++x)
    for (int y : {0, g.height - 1})
      if (g.at({x, y}) != Cell::wall)
        throw GridValidationError("border_walls", "border cell is not a wall");
  for (int y = 0; y < g.height; ++y)
    for (int x : {0, g.width - 1})
      if (g.at({x, y}) != Cell::wall)
        throw GridValidationError("border_walls", "border cell is not a wall");
  int goals = 0;
  Pos found;
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x)
      if (g.at({x, y}) == Cell::goal) {
        ++goals;
        found = {x, y};
      }
  if (goals != 1) throw GridValidationError("single_goal", "grid must contain exactly one goal");
  if (!(found == g.goal)) throw GridValidationError("single_goal", "goal position does not match goal cell");
  if (!g.in_bounds(g.agent)) throw GridValidationError("agent_in_bounds", "agent outside the grid");
  if (g.at(g.agent) == Cell::wall) throw GridValidationError("agent_in_wall", "agent occupies a wall cell");
  if (g.max_steps <= 0 || g.steps_taken < 0 || g.steps_taken > g.max_steps)
    throw GridValidationError("step_budget", "steps_taken must lie in [0, max_steps]");
}

// Empty walled room; goal and agent pose drawn from `seed`.
inline GridState gridworld_reset(std::uint64_t seed, const GridConfig& cfg = {}) {
  if (cfg.width < 4 || cfg.height < 4) throw std::invalid_argument("gridworld: room too small");
  Rng rng(seed);
  GridState g;
  g.width = cfg.width;
  g.height = cfg.height;
  g.view_size = cfg.view_size;
  g.max_steps = 4 * cfg.width * cfg.height;
  g.cells.assign(static_cast<std::size_t>(cfg.width * cfg.height), Cell::empty);
  for (int x = 0; x < g.width; ++x) g.at({x, 0}) = g.at({x, g.height - 1}) = Cell::wall;
  for (int y = 0; y < g.height; ++y) g.at({0, y}) = g.at({g.width - 1, y}) = Cell::wall;

  const int iw = g.width - 2;
  const int ih = g.height - 2;
  const int goal_idx = rng.index(static_cast<std::size_t>(iw * ih));
  g.goal = {1 + goal_idx % iw, 1 + goal_idx / iw};
  g.at(g.goal) = Cell::goal;
  int agent_idx = rng.index(static_cast<std::size_t>(iw * ih - 1));
  if (agent_idx >= goal_idx) ++agent_idx;
  g.agent = {1 + agent_idx % iw, 1 + agent_idx / iw};
  g.dir = static_cast<Dir>(rng.index(4));
  return g;
}

struct GridStepOutcome {
  double reward = 0.0;
  bool done = false;
};

inline GridStepOutcome gridworld_step(GridState& g, int action) {
  if (action < 0 || action >= kGridActions)
    throw std::out_of_range("gridworld: unknown action " + std::to_string(action));
  g.steps_taken += 1;
  GridStepOutcome out;
  switch (action) {
    case turn_left: g.dir = rotate_left(g.dir); break;
    case turn_right: g.dir = rotate_right(g.dir); break;
    case move_forward: {
      const Pos f = g.front();
      if (g.in_bounds(f) && g.at(f) != Cell::wall) g.agent = f;
      break;
    }
  }
  if (g.at(g.agent) == Cell::goal) {
    out.done = true;
    out.reward = 1.0 - 0.9 * static_cast<double>(g.steps_taken) / static_cast<double>(g.max_steps);
  } else if (g.steps_taken >= g.max_steps) {
    out.done = true;
  }
  return out;
}

inline constexpr int kGridChannels = 4;  // empty, wall, goal, out_of_view

inline std::size_t grid_observation_size(int view_size) {
  return static_cast<std::size_t>(view_size * view_size * kGridChannels);
}

// View cell (row, col): row 0 is farthest ahead, the agent sits at the
// bottom-centre (row view-1, col view/2) looking "up".
inline Observation encode_grid(const GridState& g) {
  const int v = g.view_size;
  Observation obs = Observation::Zero(static_cast<Eigen::Index>(grid_observation_size(v)));
  const Pos fwd = dir_vector(g.dir);
  const Pos right = dir_vector(rotate_right(g.dir));
  for (int row = 0; row < v; ++row) {
    const int ahead = v - 1 - row;
    for (int col = 0; col < v; ++col) {
      const int lateral = col - v / 2;
      const Pos p{g.agent.x + ahead * fwd.x + lateral * right.x,
                  g.agent.y + ahead * fwd.y + lateral * right.y};
      const int channel = g.in_bounds(p) ? static_cast<int>(g.at(p)) : 3;
      obs[(row * v + col) * kGridChannels + channel] = 1.0;
    }
  }
  return obs;
}

}  // namespace cftamer
