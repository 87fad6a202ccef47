#pragma once

#include <cstdint>
#include <set>
#include <string>

#include "gmrl/util/errors.hpp"
#include "json.hpp"

namespace gmrl::sim {

// Scenario geometry, dynamics and reward constants.
//
// Road: horizontal, x in [-road_half_length, +road_half_length]. Upper lane
// center y = +lane_width/2 with traffic moving toward -x; lower lane center
// y = -lane_width/2 with traffic moving toward +x. The ego approaches on
// x = 0 from y = ego_start_y, turns left on a quarter circle of radius
// turn_radius into the upper lane and finishes at x = -road_half_length.
struct ScenarioConfig {
  int n_social_per_lane = 3;
  double spawn_gap_min = 6.0;
  double spawn_gap_max = 12.0;
  double road_half_length = 30.0;
  double lane_width = 4.0;
  double vehicle_length = 4.0;
  double vehicle_width = 2.0;
  double ego_start_y = -12.0;
  double turn_radius = 6.0;
  double dt = 0.1;
  int timeout_steps = 400;
  double r_goal = 2.0;
  double r_fail = -2.0;
  double r_speed = 0.01;
  double max_accel = 4.0;
  double offroad_tolerance = 0.5;
  double social_initial_speed = 3.0;
  double conservative_fraction = 0.5;
  std::uint64_t seed = 0;

  int n_social() const { return 2 * n_social_per_lane; }
  double road_length() const { return 2.0 * road_half_length; }

  // Throws ConfigError with a diagnostic when the scenario cannot be built.
  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("scenario: " + m); };
    if (dt != 0.1) fail("dt must be exactly 0.1 s");
    if (n_social_per_lane < 0) fail("n_social_per_lane must be >= 0");
    if (!(spawn_gap_min > 0.0) || spawn_gap_max < spawn_gap_min) {
      fail("spawn gap range must satisfy 0 < min <= max");
    }
    for (double v : {road_half_length, lane_width, vehicle_length, vehicle_width,
                     turn_radius, max_accel, offroad_tolerance}) {
      if (!(v > 0.0)) fail("geometric and dynamic quantities must be positive");
    }
    if (timeout_steps <= 0) fail("timeout_steps must be positive");
    if (social_initial_speed < 0.0 || social_initial_speed > 3.0) {
      fail("social_initial_speed must lie in [0, 3]");
    }
    if (conservative_fraction < 0.0 || conservative_fraction > 1.0) {
      fail("conservative_fraction must lie in [0, 1]");
    }
    if (turn_radius > road_half_length) fail("turn_radius exceeds the road");
    if (ego_start_y >= lane_width / 2.0 - turn_radius) {
      fail("ego_start_y must lie below the start of the turn");
    }
    const int n = n_social_per_lane;
    if (n > 0) {
      const double needed = n * vehicle_length + (n - 1) * spawn_gap_min;
      if (needed > road_length()) {
        fail("cannot fit " + std::to_string(n) + " vehicles per lane: need " +
             std::to_string(needed) + " m with minimum gaps, road is " +
             std::to_string(road_length()) + " m");
      }
    }
  }
};

inline void to_json(nlohmann::json& j, const ScenarioConfig& c) {
  j = nlohmann::json{{"n_social_per_lane", c.n_social_per_lane},
                     {"spawn_gap_range", {c.spawn_gap_min, c.spawn_gap_max}},
                     {"road_half_length", c.road_half_length},
                     {"lane_width", c.lane_width},
                     {"vehicle_length", c.vehicle_length},
                     {"vehicle_width", c.vehicle_width},
                     {"ego_start_y", c.ego_start_y},
                     {"turn_radius", c.turn_radius},
                     {"dt", c.dt},
                     {"timeout_steps", c.timeout_steps},
                     {"r_goal", c.r_goal},
                     {"r_fail", c.r_fail},
                     {"r_speed", c.r_speed},
                     {"max_accel", c.max_accel},
                     {"offroad_tolerance", c.offroad_tolerance},
                     {"social_initial_speed", c.social_initial_speed},
                     {"conservative_fraction", c.conservative_fraction},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ScenarioConfig& c) {
  static const std::set<std::string> known = {
      "n_social_per_lane", "spawn_gap_range", "road_half_length", "lane_width",
      "vehicle_length", "vehicle_width", "ego_start_y", "turn_radius", "dt",
      "timeout_steps", "r_goal", "r_fail", "r_speed", "max_accel",
      "offroad_tolerance", "social_initial_speed", "conservative_fraction", "seed"};
  if (!j.is_object()) throw ConfigError("scenario: expected an object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("scenario: unknown key '" + k + "'");
  }
  try {
    c.n_social_per_lane = j.value("n_social_per_lane", c.n_social_per_lane);
    if (j.contains("spawn_gap_range")) {
      const auto& r = j.at("spawn_gap_range");
      if (!r.is_array() || r.size() != 2) {
        throw ConfigError("scenario: spawn_gap_range must be [min, max]");
      }
      c.spawn_gap_min = r.at(0).get<double>();
      c.spawn_gap_max = r.at(1).get<double>();
    }
    c.road_half_length = j.value("road_half_length", c.road_half_length);
    c.lane_width = j.value("lane_width", c.lane_width);
    c.vehicle_length = j.value("vehicle_length", c.vehicle_length);
    c.vehicle_width = j.value("vehicle_width", c.vehicle_width);
    c.ego_start_y = j.value("ego_start_y", c.ego_start_y);
    c.turn_radius = j.value("turn_radius", c.turn_radius);
    c.dt = j.value("dt", c.dt);
    c.timeout_steps = j.value("timeout_steps", c.timeout_steps);
    c.r_goal = j.value("r_goal", c.r_goal);
    c.r_fail = j.value("r_fail", c.r_fail);
    c.r_speed = j.value("r_speed", c.r_speed);
    c.max_accel = j.value("max_accel", c.max_accel);
    c.offroad_tolerance = j.value("offroad_tolerance", c.offroad_tolerance);
    c.social_initial_speed = j.value("social_initial_speed", c.social_initial_speed);
    c.conservative_fraction = j.value("conservative_fraction", c.conservative_fraction);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
}

}  // namespace gmrl::sim
