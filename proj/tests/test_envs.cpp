#include <gtest/gtest.h>

#include "irvs/envs.hpp"

using namespace irvs;

TEST(Didactic, StepFromOriginAlongDiagonal) {
  DidacticRoom env;
  auto st = didactic_step(env, Point2(0, 0), std::numbers::pi / 4);
  EXPECT_NEAR(st.pos.x(), 0.0707, 1e-4);
  EXPECT_NEAR(st.pos.y(), 0.0707, 1e-4);
  EXPECT_FALSE(st.done);
  EXPECT_EQ(st.reward, 0.0);
}

TEST(Didactic, ReachingGoalTerminatesWithItsReward) {
  DidacticRoom env;
  auto st = didactic_step(env, Point2(0.95, 0.95), std::numbers::pi / 4);
  EXPECT_TRUE(st.done);
  EXPECT_EQ(st.goal, 3);
  EXPECT_EQ(st.reward, 1.0);
  auto again = didactic_step(env, Point2(-0.98, 0.97), 0.0);
  EXPECT_TRUE(again.done);
  EXPECT_EQ(again.goal, 2);
  EXPECT_EQ(again.pos, Point2(-0.98, 0.97));
  EXPECT_EQ(again.reward, 0.5);
}

TEST(Didactic, PositionsStayInsideRoom) {
  DidacticRoom env;
  auto st = didactic_step(env, Point2(0.0, 0.98), std::numbers::pi / 2);
  EXPECT_EQ(st.pos.y(), 1.0);
  st = didactic_step(env, Point2(-0.97, 0.0), std::numbers::pi);
  EXPECT_EQ(st.pos.x(), -1.0);
}

TEST(Didactic, WrapAngle) {
  EXPECT_NEAR(wrap_angle(3 * std::numbers::pi / 2), -std::numbers::pi / 2, 1e-12);
  EXPECT_NEAR(wrap_angle(-5.0), -5.0 + 2 * std::numbers::pi, 1e-12);
  EXPECT_EQ(wrap_angle(0.3), 0.3);
}

TEST(Didactic, BehaviorHeadsToChosenGoal) {
  DidacticRoom env;
  env.policy_noise = 0.0;
  Rng rng(1);
  EXPECT_NEAR(didactic_behavior_policy(env, Point2(0, 0), 3, rng), std::numbers::pi / 4, 1e-12);
  EXPECT_NEAR(didactic_behavior_policy(env, Point2(0, 0), 0, rng), -3 * std::numbers::pi / 4, 1e-12);
  EXPECT_THROW(didactic_behavior_policy(env, Point2(0, 0), 4, rng), ArgumentError);
}

TEST(Didactic, BehaviorNoiseIsBounded) {
  DidacticRoom env;
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double a = didactic_behavior_policy(env, Point2(0, 0), 1, rng);
    EXPECT_LE(std::abs(a - (-std::numbers::pi / 4)), 0.1 + 1e-12);
  }
}

TEST(Didactic, GoalMarginalIsUniform) {
  DidacticRoom env;
  Rng rng(3);
  std::array<int, 4> hits{};
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    auto tr = didactic_behavior_episode(env, rng);
    ASSERT_TRUE(tr.terminal);
    ASSERT_GE(tr.goal, 0);
    ++hits[tr.goal];
  }
  for (int g = 0; g < 4; ++g) EXPECT_NEAR(hits[g] / double(n), 0.25, 0.03) << "goal " << g;
}

TEST(Didactic, EpisodesEndWithinHorizon) {
  DidacticRoom env;
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    auto tr = didactic_behavior_episode(env, rng);
    EXPECT_LE(static_cast<int>(tr.steps.size()), env.horizon);
    EXPECT_EQ(tr.total_reward(), env.rewards[tr.goal]);
    for (std::size_t k = 0; k + 1 < tr.steps.size(); ++k) EXPECT_EQ(tr.steps[k].reward, 0.0);
  }
}

TEST(Didactic, StandingStillTimesOut) {
  DidacticRoom env;
  env.step_length = 1e-6;
  Rng rng(5);
  auto tr = didactic_rollout(env, [](const Point2&) { return 0.0; }, rng);
  EXPECT_FALSE(tr.terminal);
  EXPECT_EQ(static_cast<int>(tr.steps.size()), env.horizon);
  EXPECT_EQ(tr.goal, -1);
}

TEST(Didactic, StartsInsideCentralSquare) {
  DidacticRoom env;
  Rng rng(6);
  for (int i = 0; i < 1000; ++i) {
    auto p = didactic_start(env, rng);
    EXPECT_LE(p.cwiseAbs().maxCoeff(), 0.25);
  }
  EXPECT_EQ(env.best_goal(), 3);
}

TEST(Didactic, ValidateRejectsBadRoom) {
  DidacticRoom env;
  env.horizon = 0;
  EXPECT_THROW(env.validate(), ArgumentError);
}

namespace {

NavTask task2(Vector agent, Vector g1, Vector g2) {
  NavTask t;
  t.dim = static_cast<int>(agent.size());
  t.agent = std::move(agent);
  t.goal1 = std::move(g1);
  t.goal2 = std::move(g2);
  return t;
}

}  // namespace

TEST(Nav, OptimalActionExample) {
  auto t = task2(Eigen::Vector2d(0.5, 0.5), Eigen::Vector2d(-0.05, 0.0), Eigen::Vector2d(0.05, 0.0));
  Vector a = nav_optimal_action(t);
  EXPECT_NEAR(a[0], -0.55, 1e-15);
  EXPECT_NEAR(a[1], -0.5, 1e-15);
  EXPECT_TRUE(nav_success(t, nav_step(t, a)));
}

TEST(Nav, TieGoesToFirstGoal) {
  auto t = task2(Eigen::Vector2d(0, 0), Eigen::Vector2d(0.02, 0.05), Eigen::Vector2d(0.02, -0.05));
  EXPECT_EQ(t.target(), 0);
  EXPECT_EQ(nav_optimal_action(t), t.goal1);
}

TEST(Nav, OptimalActionLandsOnTarget) {
  Rng rng(7);
  for (int dim : {1, 2, 4, 8}) {
    for (int i = 0; i < 200; ++i) {
      auto t = nav_sample_task(dim, 0.3, std::nullopt, rng);
      Vector end = nav_step(t, nav_optimal_action(t));
      EXPECT_LT((end - t.target_goal()).norm(), 1e-12);
      EXPECT_LE(t.target_goal()[0], t.other_goal()[0]);
    }
  }
}

TEST(Nav, SamplingRanges) {
  Rng rng(8);
  for (int i = 0; i < 500; ++i) {
    auto t = nav_sample_task(3, 0.2, std::nullopt, rng);
    EXPECT_EQ(t.state().size(), 9);
    EXPECT_LE(t.agent.cwiseAbs().maxCoeff(), 1.0);
    EXPECT_LE(t.goal1.cwiseAbs().maxCoeff(), 0.2);
    EXPECT_LE(t.goal2.cwiseAbs().maxCoeff(), 0.2);
  }
}

TEST(Nav, DeltaBoundsFirstCoordinateGap) {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    auto t = nav_sample_task(2, 0.1, 1e-3, rng);
    EXPECT_LE(std::abs(t.goal1[0] - t.goal2[0]), 1e-3);
  }
  auto t = nav_sample_task(2, 0.1, 0.0, rng);
  EXPECT_EQ(t.goal1[0], t.goal2[0]);
  EXPECT_EQ(t.target(), 0);
}

TEST(Nav, SuccessAtTargetFailsAtMidpoint) {
  auto t = task2(Eigen::Vector2d(0.5, 0.5), Eigen::Vector2d(-0.05, 0.0), Eigen::Vector2d(0.05, 0.0));
  EXPECT_TRUE(nav_success(t, t.goal1));
  EXPECT_FALSE(nav_success(t, t.goal2));
  EXPECT_FALSE(nav_success(t, Vector((t.goal1 + t.goal2) / 2)));
  EXPECT_FALSE(nav_success(t, t.agent));
  EXPECT_TRUE(nav_success(t, t.goal1 + Vector::Constant(2, 0.009)));
}

TEST(Nav, OracleSucceedsEverywhere) {
  Rng rng(10);
  int ok = 0;
  for (int i = 0; i < 1000; ++i) {
    auto t = nav_sample_task(2, 0.1, std::nullopt, rng);
    ok += nav_success(t, nav_step(t, nav_optimal_action(t)));
  }
  EXPECT_EQ(ok, 1000);
}

TEST(Nav, BadArguments) {
  Rng rng(11);
  EXPECT_THROW(nav_sample_task(0, 0.1, std::nullopt, rng), ArgumentError);
  EXPECT_THROW(nav_sample_task(2, 0.0, std::nullopt, rng), ArgumentError);
  EXPECT_THROW(nav_sample_task(2, 0.1, -1.0, rng), ArgumentError);
  auto t = nav_sample_task(2, 0.1, std::nullopt, rng);
  EXPECT_THROW(nav_step(t, Vector::Zero(3)), ShapeError);
  EXPECT_THROW(nav_success(t, Vector::Zero(1)), ShapeError);
}
