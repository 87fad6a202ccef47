#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "gmrl/sim/intersection.hpp"
#include "gmrl/sim/trace.hpp"

using namespace gmrl::sim;
using gmrl::Rng;

namespace {

ScenarioConfig default_config() { return ScenarioConfig{}; }

std::vector<ActionIndex> all_actions(const GlobalState& s, int index) {
  return std::vector<ActionIndex>(s.n_agents(), ActionIndex(index));
}

std::vector<ActionIndex> random_actions(const GlobalState& s, Rng& rng) {
  std::vector<ActionIndex> a;
  for (int i = 0; i < s.n_agents(); ++i) a.emplace_back(int(rng.below(3)));
  return a;
}

}  // namespace

TEST(Spawn, SameSeedGivesIdenticalState) {
  Intersection env(default_config(), PreferenceDistribution::uniform(-1, 3));
  EXPECT_EQ(env.spawn(7), env.spawn(7));
  EXPECT_FALSE(env.spawn(7) == env.spawn(8));
}

TEST(Spawn, EmptyTrafficHasEgoOnly) {
  auto cfg = default_config();
  cfg.n_social_per_lane = 0;
  Intersection env(cfg);
  const auto s = env.spawn(1);
  EXPECT_TRUE(s.social.empty());
  EXPECT_EQ(env.observe(s, 0).rows.size(), 1u);
  EXPECT_DOUBLE_EQ(s.ego.position_x, 0.0);
  EXPECT_DOUBLE_EQ(s.ego.position_y, -12.0);
  EXPECT_DOUBLE_EQ(s.ego.speed, 0.0);
}

TEST(Spawn, SameLaneGapsMatchRecordedDraws) {
  auto cfg = default_config();
  cfg.n_social_per_lane = 3;
  Intersection env(cfg);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto s = env.spawn(seed);
    ASSERT_EQ(s.social.size(), 6u);
    ASSERT_EQ(s.spawn_gaps.size(), 4u);
    int draw = 0;
    for (int lane = 0; lane < 2; ++lane) {
      for (int k = 0; k + 1 < 3; ++k) {
        const auto& back = s.social[lane * 3 + k].state;
        const auto& front = s.social[lane * 3 + k + 1].state;
        const double nose_to_tail = std::abs(front.position_x - back.position_x) -
                                    cfg.vehicle_length;
        EXPECT_NEAR(nose_to_tail, s.spawn_gaps[draw], 1e-9);
        EXPECT_GE(s.spawn_gaps[draw], 6.0);
        EXPECT_LE(s.spawn_gaps[draw], 12.0);
        ++draw;
      }
    }
    for (const auto& v : s.social) {
      EXPECT_DOUBLE_EQ(v.state.speed, 3.0);
      EXPECT_GE(v.state.track_progress, cfg.vehicle_length / 2.0);
      EXPECT_LE(v.state.track_progress, cfg.road_length());
    }
    EXPECT_EQ(env.membership(s), std::vector<AgentFlag>(7, AgentFlag::kRunning));
  }
}

TEST(Spawn, InfeasibleConfigurationIsRejected) {
  auto cfg = default_config();
  cfg.n_social_per_lane = 8;
  EXPECT_THROW(Intersection env(cfg), gmrl::ConfigError);
  auto bad_dt = default_config();
  bad_dt.dt = 0.05;
  EXPECT_THROW(Intersection env(bad_dt), gmrl::ConfigError);
}

TEST(Observe, EgoViewHasNoPreferences) {
  Intersection env(default_config(), PreferenceDistribution::uniform(-1, 3));
  const auto s = env.spawn(3);
  const auto o = env.observe(s, 0);
  ASSERT_EQ(o.rows.size(), 7u);
  for (const auto& r : o.rows) EXPECT_FALSE(r.preference.has_value());
  const std::string serialized = nlohmann::json(o).dump();
  EXPECT_EQ(serialized.find("preference"), std::string::npos);
}

TEST(Observe, SocialViewSeesPreferencesAndZeroForEgo) {
  Intersection env(default_config(), PreferenceDistribution::uniform(-1, 3));
  auto s = env.spawn(3);
  s.social[1].preference.beta = 2.5;
  const auto o = env.observe(s, 1);
  EXPECT_EQ(o.viewer_role, Role::kSocial);
  ASSERT_EQ(o.rows.size(), 7u);
  EXPECT_EQ(o.rows[2].preference.value(), 2.5);
  EXPECT_EQ(o.rows[0].preference.value(), 0.0);
  EXPECT_THROW(env.observe(s, 7), gmrl::ContractViolation);
}

TEST(Step, PositionUpdateIsExplicitEuler) {
  Intersection env(default_config());
  VehicleState v = env.vehicle_at(Role::kSocial, Lane::kLower, 40.0, 3.0);
  v.position_x = 10.0;
  v.position_y = 2.0;
  env.advance(v, 3.0);
  EXPECT_DOUBLE_EQ(v.position_x, 10.3);
  EXPECT_DOUBLE_EQ(v.position_y, 2.0);
}

TEST(Step, SpeedChangeIsRateLimited) {
  Intersection env(default_config());
  VehicleState v = env.vehicle_at(Role::kEgo, Lane::kEgoApproach, 0.0, 0.0);
  env.advance(v, 3.0);
  EXPECT_DOUBLE_EQ(v.speed, 0.4);
  EXPECT_DOUBLE_EQ(v.velocity_y, 0.4);
  env.advance(v, 0.0);
  EXPECT_DOUBLE_EQ(v.speed, 0.0);
}

TEST(Step, OverlappingVehiclesBothFail) {
  auto cfg = default_config();
  Intersection env(cfg, PreferenceDistribution::constant(0.0));
  auto s = env.spawn(5);
  // Put social 2 right on top of social 1's rear bumper.
  s.social[1].state = env.vehicle_at(Role::kSocial, Lane::kLower,
                                     s.social[0].state.track_progress + 3.5, 0.0);
  const auto out = env.step(s, all_actions(s, 2));
  EXPECT_EQ(out.flags[1], AgentFlag::kFail);
  EXPECT_EQ(out.flags[2], AgentFlag::kFail);
  EXPECT_DOUBLE_EQ(out.rewards[1], cfg.r_fail);
  EXPECT_DOUBLE_EQ(out.rewards[2], cfg.r_fail);
  EXPECT_FALSE(out.episode_done);
  EXPECT_TRUE(out.respawned[1]);
  EXPECT_TRUE(out.respawned[2]);
  EXPECT_NE(out.next_state.social[0].life_id, s.social[0].life_id);
  EXPECT_EQ(out.next_state.social.size(), s.social.size());
}

TEST(Step, FinishedEpisodeRejectsFurtherSteps) {
  auto cfg = default_config();
  cfg.timeout_steps = 2;
  Intersection env(cfg);
  auto s = env.spawn(1);
  s = env.step(s, all_actions(s, 0)).next_state;
  const auto out = env.step(s, all_actions(s, 0));
  EXPECT_TRUE(out.episode_done);
  EXPECT_EQ(out.flags[0], AgentFlag::kRunning);
  EXPECT_THROW(env.step(out.next_state, all_actions(s, 0)), gmrl::ContractViolation);
  EXPECT_THROW(env.step(s, std::vector<ActionIndex>(2)), gmrl::ContractViolation);
}

TEST(Step, UnobstructedEgoReachesGoal) {
  auto cfg = default_config();
  cfg.n_social_per_lane = 0;
  Intersection env(cfg);
  const double length = env.track(Lane::kEgoApproach).length();
  EXPECT_NEAR(length, 8.0 + 3.0 * std::numbers::pi + 24.0, 1e-12);
  auto s = env.spawn(0);
  StepOutcome out;
  int steps = 0;
  do {
    out = env.step(s, all_actions(s, 2));
    EXPECT_NE(out.flags[0], AgentFlag::kFail) << "off road at step " << steps;
    s = out.next_state;
    ++steps;
  } while (!out.episode_done);
  EXPECT_EQ(out.flags[0], AgentFlag::kGoal);
  EXPECT_DOUBLE_EQ(out.rewards[0], cfg.r_goal);
  EXPECT_LT(steps, cfg.timeout_steps);
  EXPECT_NEAR(s.ego.position_x, -30.0, 0.5);
  EXPECT_NEAR(s.ego.position_y, 2.0, 0.5);
}

TEST(Reward, BaseRewardCases) {
  auto cfg = default_config();
  Intersection env(cfg);
  auto s = env.spawn(2);
  // Cruising.
  EXPECT_DOUBLE_EQ(env.base_reward(s, 1), 0.01 * 3.0);
  // Goal.
  s.social[0].state = env.vehicle_at(Role::kSocial, Lane::kLower, 60.5, 3.0);
  EXPECT_DOUBLE_EQ(env.base_reward(s, 1), 2.0);
  // Collision.
  s.social[0].state = env.vehicle_at(Role::kSocial, Lane::kLower,
                                     s.social[1].state.track_progress - 1.0, 3.0);
  EXPECT_DOUBLE_EQ(env.base_reward(s, 1), -2.0);
}

TEST(Reward, FailTakesPrecedenceOverGoal) {
  Intersection env(default_config());
  auto s = env.spawn(2);
  s.social[0].state = env.vehicle_at(Role::kSocial, Lane::kLower, 61.0, 3.0);
  s.social[1].state = env.vehicle_at(Role::kSocial, Lane::kLower, 59.0, 3.0);
  EXPECT_EQ(env.membership(s)[1], AgentFlag::kFail);
}

TEST(Reward, FinalRewardWeightsEgoRewardByPreference) {
  auto cfg = default_config();
  Intersection env(cfg);
  auto s = env.spawn(2);
  const double ego_length = env.track(Lane::kEgoApproach).length();
  s.ego = env.vehicle_at(Role::kEgo, Lane::kEgoApproach, ego_length + 0.1, 3.0);
  ASSERT_EQ(env.membership(s)[0], AgentFlag::kGoal);
  s.social[3].preference.beta = 2.0;
  EXPECT_NEAR(env.final_reward(s, 4), 4.03, 1e-12);
  s.social[3].preference.beta = -1.0;
  EXPECT_NEAR(env.final_reward(s, 4), -1.97, 1e-12);
  s.social[3].preference.beta = 0.0;
  EXPECT_EQ(env.final_reward(s, 4), env.base_reward(s, 4));
  EXPECT_EQ(env.final_reward(s, 0), env.base_reward(s, 0));
}

// Randomised rollouts checking the transition and reward invariants against
// independent recomputations.
TEST(Properties, RandomRolloutInvariants) {
  auto cfg = default_config();
  Intersection env(cfg, PreferenceDistribution::uniform(-3, 3));
  Rng rng(42);
  const double limit = cfg.max_accel * cfg.dt;
  for (int episode = 0; episode < 20; ++episode) {
    auto s = env.spawn(rng.next_u64());
    int steps = 0;
    while (!s.done) {
      const auto actions = random_actions(s, rng);
      const auto out = env.step(s, actions);
      for (int a = 0; a < s.n_agents(); ++a) {
        if (a > 0 && out.respawned[a]) continue;
        const auto& before = s.vehicle(a);
        const auto& after = out.next_state.vehicle(a);
        EXPECT_LE(std::abs(after.position_x - (before.position_x + before.velocity_x * 0.1)), 1e-12);
        EXPECT_LE(std::abs(after.position_y - (before.position_y + before.velocity_y * 0.1)), 1e-12);
        const double desired = actions[a].desired_speed();
        const double expected =
            before.speed + std::clamp(desired - before.speed, -limit, limit);
        EXPECT_EQ(after.speed, expected);
        EXPECT_GE(after.speed, 0.0);
        EXPECT_LE(after.speed, 3.0);
        EXPECT_LE(std::abs(after.speed - before.speed), limit + 1e-12);
      }
      // Exactly one reward case applies per agent.
      std::vector<double> base(s.n_agents());
      for (int a = 0; a < s.n_agents(); ++a) {
        switch (out.flags[a]) {
          case AgentFlag::kGoal: base[a] = cfg.r_goal; break;
          case AgentFlag::kFail: base[a] = cfg.r_fail; break;
          default: base[a] = cfg.r_speed * out.next_state.vehicle(a).speed;
        }
      }
      EXPECT_NEAR(out.rewards[0], base[0], 1e-12);
      for (int a = 1; a < s.n_agents(); ++a) {
        const double beta = s.social[a - 1].preference.beta;
        EXPECT_NEAR(out.rewards[a], base[a] + beta * base[0], 1e-12);
        EXPECT_LE(std::abs(out.rewards[a]), 2.0 + 3.0 * 2.0 + 1e-12);
      }
      s = out.next_state;
      ++steps;
      ASSERT_LE(steps, cfg.timeout_steps);
    }
  }
}

TEST(Properties, EpisodeTraceIsDeterministicAndReplays) {
  Intersection env(default_config(), PreferenceDistribution::uniform(-1, 3));
  auto run = [&](std::uint64_t seed) {
    std::ostringstream os;
    TraceWriter writer(os, env, seed);
    Rng policy(seed + 100);
    auto s = env.spawn(seed);
    while (!s.done) {
      const auto actions = random_actions(s, policy);
      const auto out = env.step(s, actions);
      writer.write(s, actions, out);
      s = out.next_state;
    }
    return os.str();
  };
  const auto a = run(17), b = run(17);
  EXPECT_EQ(a, b);
  std::vector<std::string> lines;
  std::istringstream is(a);
  for (std::string line; std::getline(is, line);) lines.push_back(line);
  const auto r = replay_trace(lines);
  EXPECT_TRUE(r.matched) << r.detail;
  EXPECT_EQ(r.steps, int(lines.size()) - 1);
  // Corrupt one action and the replay must notice.
  auto corrupted = lines;
  auto step = nlohmann::ordered_json::parse(corrupted[3]);
  step["agents"][0]["action"] = step["agents"][0]["action"].get<int>() == 0 ? 2 : 0;
  corrupted[3] = step.dump();
  EXPECT_FALSE(replay_trace(corrupted).matched);
  auto moved = lines;
  step = nlohmann::ordered_json::parse(moved[3]);
  step["agents"][1]["x"] = step["agents"][1]["x"].get<double>() + 1e-9;
  moved[3] = step.dump();
  EXPECT_EQ(replay_trace(moved).first_mismatch_step, 2);
}
