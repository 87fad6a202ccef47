#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>

#include "gmrl/sim/intersection.hpp"
#include "json.hpp"

namespace gmrl::idm {

struct IdmParams {
  double desired_speed = 3.0;   // v0, m/s
  double time_headway = 1.5;    // T, s
  double min_gap = 3.0;         // s0, m
  double max_accel = 2.0;       // a, m/s^2
  double comfort_decel = 3.0;   // b, m/s^2
  double exponent = 4.0;        // delta
  double emergency_decel = 30.0;  // returned for gap <= 0
  // Horizon over which the acceleration is integrated into a target speed
  // before snapping to the candidate set. Must exceed 0.25 s / max_accel so
  // a stopped vehicle can pick the 0.5 m/s action again.
  double integration_horizon = 1.0;
  bool yields_to_ego = true;

  void validate() const {
    for (double v : {desired_speed, time_headway, min_gap, max_accel,
                     comfort_decel, exponent, emergency_decel,
                     integration_horizon}) {
      if (!(v > 0.0)) throw ConfigError("idm: parameters must be positive");
    }
  }
};

inline IdmParams conservative() {
  IdmParams p;
  p.time_headway = 1.5;
  p.min_gap = 3.0;
  p.yields_to_ego = true;
  return p;
}

inline IdmParams aggressive() {
  IdmParams p;
  p.time_headway = 0.5;
  p.min_gap = 1.5;
  p.yields_to_ego = false;
  return p;
}

inline void to_json(nlohmann::json& j, const IdmParams& p) {
  j = {{"desired_speed", p.desired_speed}, {"time_headway", p.time_headway},
       {"min_gap", p.min_gap},             {"max_accel", p.max_accel},
       {"comfort_decel", p.comfort_decel}, {"exponent", p.exponent},
       {"emergency_decel", p.emergency_decel},
       {"integration_horizon", p.integration_horizon},
       {"yields_to_ego", p.yields_to_ego}};
}

inline void from_json(const nlohmann::json& j, IdmParams& p) {
  p.desired_speed = j.value("desired_speed", p.desired_speed);
  p.time_headway = j.value("time_headway", p.time_headway);
  p.min_gap = j.value("min_gap", p.min_gap);
  p.max_accel = j.value("max_accel", p.max_accel);
  p.comfort_decel = j.value("comfort_decel", p.comfort_decel);
  p.exponent = j.value("exponent", p.exponent);
  p.emergency_decel = j.value("emergency_decel", p.emergency_decel);
  p.integration_horizon = j.value("integration_horizon", p.integration_horizon);
  p.yields_to_ego = j.value("yields_to_ego", p.yields_to_ego);
  p.validate();
}

// Parameter sets addressable by name from config files.
struct IdmLibrary {
  std::map<std::string, IdmParams> sets = {{"idm-conservative", conservative()},
                                           {"idm-aggressive", aggressive()}};

  const IdmParams& at(const std::string& name) const {
    auto it = sets.find(name);
    if (it == sets.end()) throw ConfigError("idm: unknown parameter set '" + name + "'");
    return it->second;
  }
};

// a = a_max [1 - (v/v0)^delta - (s*/s)^2],
// s* = s0 + max(0, v T + v (v - v_lead) / (2 sqrt(a_max b))).
// A missing leader is gap = +inf; gap <= 0 returns -emergency_decel.
inline double idm_accel(double speed, double gap, double leader_speed,
                        const IdmParams& p) {
  const double free_term = std::pow(speed / p.desired_speed, p.exponent);
  if (std::isinf(gap) && gap > 0.0) return p.max_accel * (1.0 - free_term);
  if (!(gap > 0.0)) return -p.emergency_decel;
  const double dv = speed - leader_speed;
  const double dynamic = speed * p.time_headway +
                         speed * dv / (2.0 * std::sqrt(p.max_accel * p.comfort_decel));
  const double s_star = p.min_gap + std::max(0.0, dynamic);
  const double ratio = s_star / gap;
  const double a = p.max_accel * (1.0 - free_term - ratio * ratio);
  return std::max(a, -p.emergency_decel);
}

// Nearest candidate desired speed; ties go to the lower speed.
inline sim::ActionIndex nearest_action(double target_speed) {
  int best = 0;
  double best_d = std::abs(sim::ActionIndex::kDesiredSpeeds[0] - target_speed);
  for (int i = 1; i < sim::ActionIndex::kCount; ++i) {
    const double d = std::abs(sim::ActionIndex::kDesiredSpeeds[i] - target_speed);
    if (d < best_d) {
      best = i;
      best_d = d;
    }
  }
  return sim::ActionIndex(best);
}

struct LeaderInfo {
  double gap = std::numeric_limits<double>::infinity();
  double speed = 0.0;
  bool is_ego = false;
};

// Lane geometry helpers for a social viewer, derived from observation rows.
struct LaneFrame {
  double center_y = 0.0;
  double direction = 1.0;  // +1 for the lower lane (moving +x), -1 upper
  double half_width = 2.0;

  static LaneFrame for_row(const sim::ObservationRow& row,
                           const sim::ScenarioConfig& cfg) {
    LaneFrame f;
    f.half_width = cfg.lane_width / 2.0;
    if (row.y >= 0.0) {
      f.center_y = cfg.lane_width / 2.0;
      f.direction = -1.0;
    } else {
      f.center_y = -cfg.lane_width / 2.0;
      f.direction = 1.0;
    }
    return f;
  }
  bool contains_y(double y) const { return std::abs(y - center_y) < half_width; }
  double along(double x) const { return direction * x; }
};

// Heading of the ego from its velocity, or from the turn geometry when it
// is stationary.
inline sim::Vec2 ego_heading(const sim::ObservationRow& ego,
                             const sim::ScenarioConfig& cfg) {
  const double speed = std::hypot(ego.vx, ego.vy);
  if (speed > 1e-9) return {ego.vx / speed, ego.vy / speed};
  const double upper_y = cfg.lane_width / 2.0;
  const double r = cfg.turn_radius;
  if (ego.y <= upper_y - r) return {0.0, 1.0};
  if (ego.x <= -r) return {-1.0, 0.0};
  const sim::Vec2 radial{ego.x + r, ego.y - (upper_y - r)};
  const double n = radial.norm();
  if (n < 1e-9) return {0.0, 1.0};
  return {-radial.y / n, radial.x / n};
}

inline sim::OrientedBox ego_box(const sim::ObservationRow& ego,
                                const sim::ScenarioConfig& cfg) {
  return {{ego.x, ego.y}, ego_heading(ego, cfg), cfg.vehicle_length,
          cfg.vehicle_width};
}

// True when any part of the ego footprint lies inside the viewer's lane band.
inline bool ego_intrudes_corridor(const sim::ObservationRow& ego,
                                  const LaneFrame& lane,
                                  const sim::ScenarioConfig& cfg) {
  const auto corners = ego_box(ego, cfg).corners();
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& c : corners) {
    lo = std::min(lo, c.y);
    hi = std::max(hi, c.y);
  }
  return hi > lane.center_y - lane.half_width && lo < lane.center_y + lane.half_width;
}

inline LeaderInfo find_leader(const sim::Observation& obs, const IdmParams& params,
                              const sim::ScenarioConfig& cfg) {
  const auto& self = obs.rows.at(obs.viewer);
  const LaneFrame lane = LaneFrame::for_row(self, cfg);
  const double self_along = lane.along(self.x);
  const double self_front = self_along + cfg.vehicle_length / 2.0;
  LeaderInfo best;
  for (const auto& row : obs.rows) {
    if (row.agent == obs.viewer || row.role != sim::Role::kSocial) continue;
    if (!lane.contains_y(row.y)) continue;
    const double along = lane.along(row.x);
    if (along <= self_along) continue;
    const double gap = along - cfg.vehicle_length / 2.0 - self_front;
    if (gap < best.gap) best = {gap, lane.direction * row.vx, false};
  }
  if (params.yields_to_ego) {
    for (const auto& row : obs.rows) {
      if (row.role != sim::Role::kEgo) continue;
      if (!ego_intrudes_corridor(row, lane, cfg)) continue;
      const auto corners = ego_box(row, cfg).corners();
      double near = INFINITY, far = -INFINITY;
      for (const auto& c : corners) {
        near = std::min(near, lane.along(c.x));
        far = std::max(far, lane.along(c.x));
      }
      if (far <= self_front) continue;
      const double gap = near - self_front;
      if (gap < best.gap) best = {gap, lane.direction * row.vx, true};
    }
  }
  return best;
}

// Rule-based social driver: IDM acceleration integrated over the horizon
// and snapped to the nearest candidate desired speed.
inline sim::ActionIndex idm_policy(const sim::Observation& obs,
                                   const IdmParams& params,
                                   const sim::ScenarioConfig& cfg) {
  if (obs.viewer_role != sim::Role::kSocial) {
    throw ContractViolation("idm_policy: viewer must be a social vehicle");
  }
  const auto& self = obs.rows.at(obs.viewer);
  const double speed = std::hypot(self.vx, self.vy);
  const LeaderInfo leader = find_leader(obs, params, cfg);
  const double accel = idm_accel(speed, leader.gap, leader.speed, params);
  const double target = std::max(0.0, speed + accel * params.integration_horizon);
  return nearest_action(target);
}

}  // namespace gmrl::idm
