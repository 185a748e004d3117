#pragma once

// CartPole and MountainCar with the usual classic-control constants.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

#include "cftamer/rng.hpp"

namespace cftamer {

struct CartPoleState {
  double x = 0.0;
  double x_dot = 0.0;
  double theta = 0.0;
  double theta_dot = 0.0;
  int steps_taken = 0;
  friend bool operator==(const CartPoleState&, const CartPoleState&) = default;
};

struct MountainCarState {
  double position = -0.5;
  double velocity = 0.0;
  int steps_taken = 0;
  friend bool operator==(const MountainCarState&, const MountainCarState&) = default;
};

namespace cartpole {
inline constexpr double kGravity = 9.8;
inline constexpr double kCartMass = 1.0;
inline constexpr double kPoleMass = 0.1;
inline constexpr double kTotalMass = kCartMass + kPoleMass;
inline constexpr double kHalfLength = 0.5;
inline constexpr double kPoleMassLength = kPoleMass * kHalfLength;
inline constexpr double kForce = 10.0;
inline constexpr double kDt = 0.02;
inline constexpr double kXLimit = 2.4;
inline constexpr double kThetaLimit = 12.0 * 2.0 * std::numbers::pi / 360.0;
inline constexpr int kMaxSteps = 500;
inline constexpr int kActions = 2;  // 0 push_left, 1 push_right
}  // namespace cartpole

namespace mountaincar {
inline constexpr double kMinPosition = -1.2;
inline constexpr double kMaxPosition = 0.6;
inline constexpr double kMaxSpeed = 0.07;
inline constexpr double kGoalPosition = 0.5;
inline constexpr double kPower = 0.001;
inline constexpr double kGravity = 0.0025;
inline constexpr int kMaxSteps = 200;
inline constexpr int kActions = 3;  // 0 left, 1 coast, 2 right
}  // namespace mountaincar

inline CartPoleState cartpole_reset(std::uint64_t seed) {
  Rng rng(seed);
  CartPoleState s;
  s.x = rng.uniform(-0.05, 0.05);
  s.x_dot = rng.uniform(-0.05, 0.05);
  s.theta = rng.uniform(-0.05, 0.05);
  s.theta_dot = rng.uniform(-0.05, 0.05);
  return s;
}

struct PhysStepOutcome {
  double reward = 0.0;
  bool done = false;
};

inline bool cartpole_failed(const CartPoleState& s) {
  return std::abs(s.x) > cartpole::kXLimit || std::abs(s.theta) > cartpole::kThetaLimit;
}

// Accelerations from the pre-step state, then explicit Euler on all four
// components using pre-step velocities.
inline PhysStepOutcome cartpole_step(CartPoleState& s, int action) {
  using namespace cartpole;
  if (action < 0 || action >= kActions)
    throw std::out_of_range("cartpole: unknown action " + std::to_string(action));
  const double force = action == 1 ? kForce : -kForce;
  const double cos_t = std::cos(s.theta);
  const double sin_t = std::sin(s.theta);
  const double temp = (force + kPoleMassLength * s.theta_dot * s.theta_dot * sin_t) / kTotalMass;
  const double theta_acc = (kGravity * sin_t - cos_t * temp) /
                           (kHalfLength * (4.0 / 3.0 - kPoleMass * cos_t * cos_t / kTotalMass));
  const double x_acc = temp - kPoleMassLength * theta_acc * cos_t / kTotalMass;

  const CartPoleState prev = s;
  s.x = prev.x + kDt * prev.x_dot;
  s.x_dot = prev.x_dot + kDt * x_acc;
  s.theta = prev.theta + kDt * prev.theta_dot;
  s.theta_dot = prev.theta_dot + kDt * theta_acc;
  s.steps_taken += 1;
  return {1.0, cartpole_failed(s) || s.steps_taken >= kMaxSteps};
}

inline MountainCarState mountaincar_reset(std::uint64_t seed) {
  Rng rng(seed);
  MountainCarState s;
  s.position = rng.uniform(-0.6, -0.4);
  s.velocity = 0.0;
  return s;
}

inline PhysStepOutcome mountaincar_step(MountainCarState& s, int action) {
  using namespace mountaincar;
  if (action < 0 || action >= kActions)
    throw std::out_of_range("mountaincar: unknown action " + std::to_string(action));
  s.velocity += static_cast<double>(action - 1) * kPower - kGravity * std::cos(3.0 * s.position);
  s.velocity = std::clamp(s.velocity, -kMaxSpeed, kMaxSpeed);
  s.position += s.velocity;
  s.position = std::clamp(s.position, kMinPosition, kMaxPosition);
  if (s.position == kMinPosition && s.velocity < 0.0) s.velocity = 0.0;
  s.steps_taken += 1;
  return {-1.0, s.position >= kGoalPosition || s.steps_taken >= kMaxSteps};
}

}  // namespace cftamer
