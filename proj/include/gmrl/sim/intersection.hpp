#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "gmrl/sim/config.hpp"
#include "gmrl/sim/geometry.hpp"
#include "gmrl/sim/types.hpp"

namespace gmrl::sim {

enum class RewardCase { kGoal, kFail, kSpeed };

// Uncontrolled T-intersection game: one left-turning ego and 2n social
// vehicles on a two-lane road. All operations are const; the evolving
// state, including its random stream, lives in GlobalState.
class Intersection {
 public:
  explicit Intersection(ScenarioConfig config,
                        PreferenceDistribution preferences =
                            PreferenceDistribution::constant(0.0))
      : config_(std::move(config)), preferences_(std::move(preferences)) {
    config_.validate();
    const double half = config_.road_half_length;
    const double lane_y = config_.lane_width / 2.0;
    lower_ = Track::straight({-half, -lane_y}, {1.0, 0.0}, config_.road_length());
    upper_ = Track::straight({half, lane_y}, {-1.0, 0.0}, config_.road_length());
    const double approach = (lane_y - config_.turn_radius) - config_.ego_start_y;
    const double exit = half - config_.turn_radius;
    ego_track_ = Track::left_turn({0.0, config_.ego_start_y}, {0.0, 1.0}, approach,
                                  config_.turn_radius, std::numbers::pi / 2.0, exit);
  }

  const ScenarioConfig& config() const { return config_; }
  const PreferenceDistribution& preferences() const { return preferences_; }
  void set_preferences(PreferenceDistribution p) { preferences_ = std::move(p); }

  const Track& track(Lane lane) const {
    switch (lane) {
      case Lane::kLower: return lower_;
      case Lane::kUpper: return upper_;
      default: return ego_track_;
    }
  }

  // Draw order: per lane (lower, then upper) the n-1 gaps, the platoon
  // offset, then per vehicle (upstream first) its preference and style.
  GlobalState spawn(std::uint64_t seed) const {
    GlobalState s;
    s.rng = Rng(seed);
    s.ego = vehicle_at(Role::kEgo, Lane::kEgoApproach, 0.0, 0.0);
    const int n = config_.n_social_per_lane;
    for (Lane lane : {Lane::kLower, Lane::kUpper}) {
      if (n == 0) continue;
      std::vector<double> gaps;
      double extent = n * config_.vehicle_length;
      for (int k = 0; k + 1 < n; ++k) {
        gaps.push_back(s.rng.uniform(config_.spawn_gap_min, config_.spawn_gap_max));
        extent += gaps.back();
      }
      const double slack = std::max(0.0, config_.road_length() - extent);
      double rear = s.rng.uniform(0.0, slack);
      for (int k = 0; k < n; ++k) {
        const double center = rear + config_.vehicle_length / 2.0;
        SocialVehicle v;
        v.state = vehicle_at(Role::kSocial, lane, center,
                               config_.social_initial_speed);
        v.preference.beta = preferences_.sample(s.rng);
        v.conservative = s.rng.bernoulli(config_.conservative_fraction);
        v.life_id = s.next_life_id++;
        s.social.push_back(v);
        if (k + 1 < n) rear += config_.vehicle_length + gaps[k];
      }
      s.spawn_gaps.insert(s.spawn_gaps.end(), gaps.begin(), gaps.end());
    }
    return s;
  }

  // Rows are ordered by agent index (ego first). Ego viewers never receive
  // preferences; social viewers see every social preference and a zero in
  // the ego's slot.
  Observation observe(const GlobalState& s, int viewer) const {
    if (viewer < 0 || viewer >= s.n_agents()) {
      throw ContractViolation("observe: viewer " + std::to_string(viewer) +
                              " out of range");
    }
    Observation o;
    o.viewer = viewer;
    o.viewer_role = viewer == 0 ? Role::kEgo : Role::kSocial;
    o.rows.reserve(s.n_agents());
    for (int a = 0; a < s.n_agents(); ++a) {
      const VehicleState& v = s.vehicle(a);
      ObservationRow row{a, v.role, v.position_x, v.position_y,
                         v.velocity_x, v.velocity_y, std::nullopt};
      if (o.viewer_role == Role::kSocial) {
        row.preference = a == 0 ? 0.0 : s.social[a - 1].preference.beta;
      }
      o.rows.push_back(row);
    }
    return o;
  }

  OrientedBox footprint(const VehicleState& v) const {
    return {{v.position_x, v.position_y}, track(v.lane).tangent(v.track_progress),
            config_.vehicle_length, config_.vehicle_width};
  }

  bool off_road(const VehicleState& v) const {
    const Vec2 on_track = track(v.lane).point(v.track_progress);
    return (Vec2{v.position_x, v.position_y} - on_track).norm() >
           config_.offroad_tolerance;
  }

  bool reached_goal(const VehicleState& v) const {
    return v.track_progress >= track(v.lane).length();
  }

  // Goal/fail membership of every agent in state s. Fail (collision or off
  // road) takes precedence when both hold.
  std::vector<AgentFlag> membership(const GlobalState& s) const {
    const int n = s.n_agents();
    std::vector<OrientedBox> boxes;
    boxes.reserve(n);
    for (int a = 0; a < n; ++a) boxes.push_back(footprint(s.vehicle(a)));
    std::vector<bool> fail(n, false);
    for (int a = 0; a < n; ++a) {
      for (int b = a + 1; b < n; ++b) {
        if (boxes_overlap(boxes[a], boxes[b])) fail[a] = fail[b] = true;
      }
      if (off_road(s.vehicle(a))) fail[a] = true;
    }
    std::vector<AgentFlag> flags(n, AgentFlag::kRunning);
    for (int a = 0; a < n; ++a) {
      if (fail[a]) {
        flags[a] = AgentFlag::kFail;
      } else if (reached_goal(s.vehicle(a))) {
        flags[a] = AgentFlag::kGoal;
      }
    }
    return flags;
  }

  static RewardCase reward_case(AgentFlag f) {
    switch (f) {
      case AgentFlag::kFail: return RewardCase::kFail;
      case AgentFlag::kGoal: return RewardCase::kGoal;
      default: return RewardCase::kSpeed;
    }
  }

  double base_reward_for(AgentFlag flag, const VehicleState& v) const {
    switch (reward_case(flag)) {
      case RewardCase::kFail: return config_.r_fail;
      case RewardCase::kGoal: return config_.r_goal;
      default: return config_.r_speed * std::hypot(v.velocity_x, v.velocity_y);
    }
  }

  double base_reward(const GlobalState& s, int agent) const {
    return base_reward_for(membership(s).at(agent), s.vehicle(agent));
  }

  // Ego: its base reward. Social i: r^i + beta^i * r^0.
  double final_reward(const GlobalState& s, int agent) const {
    const auto flags = membership(s);
    return final_rewards(s, flags).at(agent);
  }

  std::vector<double> final_rewards(const GlobalState& s,
                                    const std::vector<AgentFlag>& flags) const {
    std::vector<double> r(s.n_agents());
    const double ego = base_reward_for(flags[0], s.ego);
    r[0] = ego;
    for (int a = 1; a < s.n_agents(); ++a) {
      r[a] = base_reward_for(flags[a], s.vehicle(a)) +
             s.social[a - 1].preference.beta * ego;
    }
    return r;
  }

  StepOutcome step(const GlobalState& s, std::span<const ActionIndex> actions) const {
    if (s.done) throw ContractViolation("step: episode already finished");
    if (int(actions.size()) != s.n_agents()) {
      throw ContractViolation("step: expected " + std::to_string(s.n_agents()) +
                              " actions, got " + std::to_string(actions.size()));
    }
    StepOutcome out;
    out.next_state = s;
    GlobalState& next = out.next_state;
    for (int a = 0; a < s.n_agents(); ++a) {
      advance(next.vehicle(a), actions[a].desired_speed());
    }
    next.step_index = s.step_index + 1;
    out.flags = membership(next);
    out.rewards = final_rewards(next, out.flags);
    out.episode_done = out.flags[0] != AgentFlag::kRunning ||
                       next.step_index >= config_.timeout_steps;
    out.respawned.assign(s.n_agents(), false);
    if (!out.episode_done) {
      for (int a = 1; a < s.n_agents(); ++a) {
        if (out.flags[a] != AgentFlag::kRunning) {
          respawn(next, a - 1);
          out.respawned[a] = true;
        }
      }
    }
    next.done = out.episode_done;
    return out;
  }

  // Kinematic update of one vehicle: position from the current velocity,
  // then a rate-limited speed change toward the desired speed, with the
  // heading locked to the track tangent at the new progress.
  void advance(VehicleState& v, double desired_speed) const {
    const double dt = config_.dt;
    const double limit = config_.max_accel * dt;
    v.position_x = v.position_x + v.velocity_x * dt;
    v.position_y = v.position_y + v.velocity_y * dt;
    v.track_progress += v.speed * dt;
    const double change = std::clamp(desired_speed - v.speed, -limit, limit);
    v.speed = std::clamp(v.speed + change, 0.0, kMaxSpeed);
    const Vec2 t = track(v.lane).tangent(v.track_progress);
    v.velocity_x = v.speed * t.x;
    v.velocity_y = v.speed * t.y;
  }

  // A vehicle placed exactly on its track at the given progress and speed.
  VehicleState vehicle_at(Role role, Lane lane, double progress, double speed) const {
    const Track& t = track(lane);
    const Vec2 p = t.point(progress);
    const Vec2 d = t.tangent(progress);
    VehicleState v;
    v.role = role;
    v.lane = lane;
    v.position_x = p.x;
    v.position_y = p.y;
    v.speed = speed;
    v.velocity_x = speed * d.x;
    v.velocity_y = speed * d.y;
    v.track_progress = progress;
    return v;
  }

 private:

  // Replaces social[slot] with a new vehicle at the lane entry, queued
  // behind the most upstream vehicle of that lane when the entry is busy.
  void respawn(GlobalState& s, int slot) const {
    const Lane lane = s.social[slot].state.lane;
    double tail = INFINITY;
    for (int k = 0; k < int(s.social.size()); ++k) {
      if (k == slot || s.social[k].state.lane != lane) continue;
      tail = std::min(tail, s.social[k].state.track_progress);
    }
    const double gap = s.rng.uniform(config_.spawn_gap_min, config_.spawn_gap_max);
    double center = config_.vehicle_length / 2.0;
    if (std::isfinite(tail)) {
      center = std::min(center, tail - config_.vehicle_length - gap);
    }
    SocialVehicle v;
    v.state = vehicle_at(Role::kSocial, lane, center, config_.social_initial_speed);
    v.preference.beta = preferences_.sample(s.rng);
    v.conservative = s.rng.bernoulli(config_.conservative_fraction);
    v.life_id = s.next_life_id++;
    s.social[slot] = v;
  }

  ScenarioConfig config_;
  PreferenceDistribution preferences_;
  Track lower_;
  Track upper_;
  Track ego_track_;
};

}  // namespace gmrl::sim
