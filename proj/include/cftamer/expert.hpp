#pragma once

// Exact expert policies used by the synthetic trainer: a shortest-path
// planner for the grid (full observability) and closed-form controllers for
// the physics tasks.

#include <array>
#include <deque>
#include <stdexcept>
#include <vector>

#include "cftamer/env.hpp"

namespace cftamer {

class UnreachableGoalError : public std::runtime_error {
 public:
  UnreachableGoalError() : std::runtime_error("gridworld: goal unreachable from agent pose") {}
};

// First action of a shortest turn/forward sequence reaching the goal. Among
// equally short plans, forward is preferred over turn_left over turn_right.
inline int grid_expert_action(const GridState& g) {
  if (g.agent == g.goal) return move_forward;
  const int n = g.width * g.height * 4;
  auto key = [&](Pos p, Dir d) { return (p.y * g.width + p.x) * 4 + static_cast<int>(d); };
  std::vector<int> first(static_cast<std::size_t>(n), -1);
  struct Node {
    Pos p;
    Dir d;
  };
  std::deque<Node> queue;
  static constexpr std::array<int, 3> kOrder{move_forward, turn_left, turn_right};

  auto expand = [&](const Node& node, int action) -> Node {
    switch (action) {
      case turn_left: return {node.p, rotate_left(node.d)};
      case turn_right: return {node.p, rotate_right(node.d)};
      default: {
        const Pos v = dir_vector(node.d);
        const Pos f{node.p.x + v.x, node.p.y + v.y};
        if (g.in_bounds(f) && g.at(f) != Cell::wall) return {f, node.d};
        return node;
      }
    }
  };

  first[static_cast<std::size_t>(key(g.agent, g.dir))] = -2;  // root marker
  const Node root{g.agent, g.dir};
  for (int a : kOrder) {
    const Node next = expand(root, a);
    auto& slot = first[static_cast<std::size_t>(key(next.p, next.d))];
    if (slot != -1) continue;
    if (next.p == g.goal) return a;
    slot = a;
    queue.push_back(next);
  }
  while (!queue.empty()) {
    const Node node = queue.front();
    queue.pop_front();
    const int origin = first[static_cast<std::size_t>(key(node.p, node.d))];
    for (int a : kOrder) {
      const Node next = expand(node, a);
      auto& slot = first[static_cast<std::size_t>(key(next.p, next.d))];
      if (slot != -1) continue;
      if (next.p == g.goal) return origin;
      slot = origin;
      queue.push_back(next);
    }
  }
  throw UnreachableGoalError();
}

struct CartPoleExpertWeights {
  double x = 0.1;
  double x_dot = 0.3;
  double theta = 1.0;
  double theta_dot = 0.3;
};

inline int cartpole_expert_action(const CartPoleState& s, const CartPoleExpertWeights& w = {}) {
  const double u = w.x * s.x + w.x_dot * s.x_dot + w.theta * s.theta + w.theta_dot * s.theta_dot;
  return u > 0.0 ? 1 : 0;
}

// Energy pumping: push along the velocity, coast when stationary.
inline int mountaincar_expert_action(const MountainCarState& s) {
  if (s.velocity > 0.0) return 2;
  if (s.velocity < 0.0) return 0;
  return 1;
}

struct ExpertPolicy {
  CartPoleExpertWeights cartpole_weights;

  int operator()(const HiddenState& h) const {
    return std::visit(
        [&](const auto& s) -> int {
          using S = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<S, GridState>) {
            return grid_expert_action(s);
          } else if constexpr (std::is_same_v<S, CartPoleState>) {
            return cartpole_expert_action(s, cartpole_weights);
          } else {
            return mountaincar_expert_action(s);
          }
        },
        h);
  }
};

}  // namespace cftamer
