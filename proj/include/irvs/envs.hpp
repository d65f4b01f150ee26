#pragma once

// Synthetic benchmarks with linear dynamics:
//  * DidacticRoom: four rewarded goals at the corners of [-1, 1]^2; the action
//    is a heading angle and the agent moves a fixed step along it.
//  * NavTask: one-step navigation in D dimensions to the goal whose first
//    coordinate is smallest ("left-most").

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "irvs/ndmath.hpp"

namespace irvs {

using Point2 = Eigen::Vector2d;

struct DidacticRoom {
  std::array<Point2, 4> goals{Point2(-1.0, -1.0), Point2(1.0, -1.0), Point2(-1.0, 1.0), Point2(1.0, 1.0)};
  std::array<double, 4> rewards{-1.0, -0.25, 0.5, 1.0};
  double goal_radius = 0.1;
  int horizon = 50;
  double step_length = 0.1;
  double start_half_width = 0.25;
  double policy_noise = 0.1;  // behavior heading noise, uniform in [-noise, noise]

  void validate() const {
    if (!(goal_radius > 0.0)) throw ArgumentError("goal radius must be positive");
    if (horizon < 1) throw ArgumentError("horizon must be >= 1");
    if (!(step_length > 0.0)) throw ArgumentError("step length must be positive");
  }

  int best_goal() const {
    int best = 0;
    for (int i = 1; i < 4; ++i)
      if (rewards[i] > rewards[best]) best = i;
    return best;
  }
};

struct DidacticStep {
  Point2 pos;
  double reward = 0.0;
  bool done = false;
  int goal = -1;  // goal index reached, -1 if none
};

inline double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  while (a > pi) a -= 2.0 * pi;
  while (a < -pi) a += 2.0 * pi;
  return a;
}

inline int didactic_goal_at(const DidacticRoom& env, const Point2& pos) {
  for (int i = 0; i < 4; ++i) {
    if ((pos - env.goals[i]).norm() <= env.goal_radius) return i;
  }
  return -1;
}

// An agent already inside a goal terminates without moving.
inline DidacticStep didactic_step(const DidacticRoom& env, const Point2& pos, double angle) {
  if (int g = didactic_goal_at(env, pos); g >= 0) return {pos, env.rewards[g], true, g};
  Point2 next = pos + env.step_length * Point2(std::cos(angle), std::sin(angle));
  next = next.cwiseMax(-1.0).cwiseMin(1.0);
  if (int g = didactic_goal_at(env, next); g >= 0) return {next, env.rewards[g], true, g};
  return {next, 0.0, false, -1};
}

inline Point2 didactic_start(const DidacticRoom& env, Rng& rng) {
  const double w = env.start_half_width;
  double x = uniform(rng, -w, w);
  double y = uniform(rng, -w, w);
  return {x, y};
}

inline double didactic_behavior_policy(const DidacticRoom& env, const Point2& pos, int chosen_goal, Rng& rng) {
  if (chosen_goal < 0 || chosen_goal >= 4) throw ArgumentError("goal index out of range");
  Point2 d = env.goals[chosen_goal] - pos;
  double noise = env.policy_noise > 0.0 ? uniform(rng, -env.policy_noise, env.policy_noise) : 0.0;
  return wrap_angle(std::atan2(d.y(), d.x()) + noise);
}

struct TrajectoryStep {
  Vector state;
  Vector action;
  double reward = 0.0;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
  bool terminal = false;
  int goal = -1;

  double total_reward() const {
    double r = 0.0;
    for (const auto& s : steps) r += s.reward;
    return r;
  }
};

// Rolls out `policy(pos) -> angle` from a sampled start.
template <class Policy>
Trajectory didactic_rollout(const DidacticRoom& env, Policy&& policy, Rng& rng) {
  env.validate();
  Trajectory traj;
  Point2 pos = didactic_start(env, rng);
  for (int t = 0; t < env.horizon; ++t) {
    double angle = policy(pos);
    auto st = didactic_step(env, pos, angle);
    traj.steps.push_back({Vector(pos), Vector::Constant(1, angle), st.reward});
    pos = st.pos;
    if (st.done) {
      traj.terminal = true;
      traj.goal = st.goal;
      break;
    }
  }
  return traj;
}

inline Trajectory didactic_behavior_episode(const DidacticRoom& env, Rng& rng) {
  const int goal = std::uniform_int_distribution<int>(0, 3)(rng);
  return didactic_rollout(env, [&](const Point2& p) { return didactic_behavior_policy(env, p, goal, rng); }, rng);
}

// ---------------------------------------------------------------------------
// Navigation

// Success radius is kNavSuccessScale * sqrt(D).
inline constexpr double kNavSuccessScale = 0.01;

struct NavTask {
  int dim = 0;
  Vector agent;
  Vector goal1;
  Vector goal2;
  double epsilon = 0.1;
  std::optional<double> delta;

  // Observation (agent, g1, g2), 3 * dim entries.
  Vector state() const {
    Vector s(3 * dim);
    s << agent, goal1, goal2;
    return s;
  }

  // Left-most goal; exact ties go to goal1.
  int target() const { return goal2[0] < goal1[0] ? 1 : 0; }
  const Vector& target_goal() const { return target() == 0 ? goal1 : goal2; }
  const Vector& other_goal() const { return target() == 0 ? goal2 : goal1; }
};

inline NavTask nav_sample_task(int dim, double epsilon, std::optional<double> delta, Rng& rng) {
  if (dim < 1) throw ArgumentError("navigation dimension must be >= 1");
  if (!(epsilon > 0.0)) throw ArgumentError("goal sampling radius must be positive");
  if (delta && !(*delta >= 0.0)) throw ArgumentError("delta must be non-negative");
  NavTask t;
  t.dim = dim;
  t.epsilon = epsilon;
  t.delta = delta;
  t.agent.resize(dim);
  t.goal1.resize(dim);
  t.goal2.resize(dim);
  for (int i = 0; i < dim; ++i) t.agent[i] = uniform(rng, -1.0, 1.0);
  for (int i = 0; i < dim; ++i) t.goal1[i] = uniform(rng, -epsilon, epsilon);
  for (int i = 0; i < dim; ++i) t.goal2[i] = uniform(rng, -epsilon, epsilon);
  if (delta) t.goal2[0] = t.goal1[0] + (*delta > 0.0 ? uniform(rng, -*delta, *delta) : 0.0);
  return t;
}

inline Vector nav_optimal_action(const NavTask& t) { return t.target_goal() - t.agent; }

// Linear dynamics: the agent moves by the action.
inline Vector nav_step(const NavTask& t, const Vector& action) {
  if (action.size() != t.dim) throw ShapeError("navigation action dim mismatch");
  return t.agent + action;
}

inline bool nav_success(const NavTask& t, const Vector& final_pos, double scale = kNavSuccessScale) {
  if (final_pos.size() != t.dim) throw ShapeError("navigation position dim mismatch");
  const double d_target = (final_pos - t.target_goal()).norm();
  const double d_other = (final_pos - t.other_goal()).norm();
  return d_target <= scale * std::sqrt(static_cast<double>(t.dim)) && d_target < d_other;
}

}  // namespace irvs
