#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmrl/util/errors.hpp"
#include "gmrl/util/random.hpp"
#include "json.hpp"

namespace gmrl::sim {

enum class Role : std::uint8_t { kEgo, kSocial };
enum class Lane : std::uint8_t { kLower, kUpper, kEgoApproach };
enum class AgentFlag : std::uint8_t { kRunning, kGoal, kFail };

inline const char* to_string(Role r) { return r == Role::kEgo ? "ego" : "social"; }
inline const char* to_string(Lane l) {
  switch (l) {
    case Lane::kLower: return "lower";
    case Lane::kUpper: return "upper";
    default: return "ego-approach";
  }
}
inline const char* to_string(AgentFlag f) {
  switch (f) {
    case AgentFlag::kGoal: return "goal";
    case AgentFlag::kFail: return "fail";
    default: return "running";
  }
}

inline constexpr double kMaxSpeed = 3.0;

// Discrete action: index into the candidate desired speeds.
struct ActionIndex {
  static constexpr int kCount = 3;
  static constexpr std::array<double, kCount> kDesiredSpeeds = {0.0, 0.5, 3.0};

  int index = 0;

  constexpr ActionIndex() = default;
  constexpr explicit ActionIndex(int i) : index(i) {}

  double desired_speed() const {
    if (index < 0 || index >= kCount) {
      throw ContractViolation("ActionIndex out of range: " + std::to_string(index));
    }
    return kDesiredSpeeds[index];
  }
  bool operator==(const ActionIndex&) const = default;
};

struct Preference {
  double beta = 0.0;
  bool operator==(const Preference&) const = default;
};

struct VehicleState {
  double position_x = 0.0;
  double position_y = 0.0;
  double velocity_x = 0.0;
  double velocity_y = 0.0;
  // Scalar speed tracked by the low-level controller; equals the velocity
  // norm up to rounding.
  double speed = 0.0;
  double track_progress = 0.0;
  Role role = Role::kSocial;
  Lane lane = Lane::kLower;

  bool operator==(const VehicleState&) const = default;
};

struct SocialVehicle {
  VehicleState state;
  Preference preference;
  // Driving style used when this vehicle is IDM-controlled.
  bool conservative = true;
  // Identifies one vehicle lifetime; a respawn gets a fresh id.
  std::uint64_t life_id = 0;

  bool operator==(const SocialVehicle&) const = default;
};

// Preference distribution for spawned social vehicles.
struct PreferenceDistribution {
  enum class Kind { kConstant, kUniform, kDiscrete };
  Kind kind = Kind::kConstant;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> values;

  static PreferenceDistribution constant(double beta) {
    return {Kind::kConstant, beta, beta, {}};
  }
  static PreferenceDistribution uniform(double lo, double hi) {
    return {Kind::kUniform, lo, hi, {}};
  }
  static PreferenceDistribution discrete(std::vector<double> values) {
    if (values.empty()) throw ConfigError("discrete preference set is empty");
    return {Kind::kDiscrete, 0.0, 0.0, std::move(values)};
  }

  double sample(Rng& rng) const {
    switch (kind) {
      case Kind::kUniform: return rng.uniform(lo, hi);
      case Kind::kDiscrete: return values[rng.below(values.size())];
      default: return lo;
    }
  }
};

inline void to_json(nlohmann::json& j, const PreferenceDistribution& d) {
  switch (d.kind) {
    case PreferenceDistribution::Kind::kUniform:
      j = {{"kind", "uniform"}, {"range", {d.lo, d.hi}}};
      break;
    case PreferenceDistribution::Kind::kDiscrete:
      j = {{"kind", "discrete"}, {"values", d.values}};
      break;
    default:
      j = {{"kind", "constant"}, {"beta", d.lo}};
  }
}

inline void from_json(const nlohmann::json& j, PreferenceDistribution& d) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "uniform") {
    d = PreferenceDistribution::uniform(j.at("range").at(0).get<double>(),
                                        j.at("range").at(1).get<double>());
  } else if (kind == "discrete") {
    d = PreferenceDistribution::discrete(j.at("values").get<std::vector<double>>());
  } else if (kind == "constant") {
    d = PreferenceDistribution::constant(j.at("beta").get<double>());
  } else {
    throw ConfigError("unknown preference distribution kind '" + kind + "'");
  }
}

// Agent index convention: 0 is the ego, i >= 1 is social[i - 1].
struct GlobalState {
  VehicleState ego;
  std::vector<SocialVehicle> social;
  int step_index = 0;
  bool done = false;
  Rng rng;
  std::uint64_t next_life_id = 1;
  // Nose-to-tail gaps drawn at spawn, lower lane first, upstream to
  // downstream within each lane.
  std::vector<double> spawn_gaps;

  int n_agents() const { return 1 + int(social.size()); }
  const VehicleState& vehicle(int agent) const {
    return agent == 0 ? ego : social.at(agent - 1).state;
  }
  VehicleState& vehicle(int agent) {
    return agent == 0 ? ego : social.at(agent - 1).state;
  }
  bool operator==(const GlobalState&) const = default;
};

struct ObservationRow {
  int agent = 0;
  Role role = Role::kSocial;
  double x = 0.0;
  double y = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  // Only populated for social viewers.
  std::optional<double> preference;
};

struct Observation {
  int viewer = 0;
  Role viewer_role = Role::kEgo;
  std::vector<ObservationRow> rows;
};

inline void to_json(nlohmann::json& j, const Observation& o) {
  j = nlohmann::json::object();
  j["viewer"] = o.viewer;
  j["viewer_role"] = to_string(o.viewer_role);
  auto rows = nlohmann::json::array();
  for (const auto& r : o.rows) {
    nlohmann::json row = {{"agent", r.agent}, {"role", to_string(r.role)},
                          {"x", r.x}, {"y", r.y}, {"vx", r.vx}, {"vy", r.vy}};
    if (r.preference) row["preference"] = *r.preference;
    rows.push_back(std::move(row));
  }
  j["rows"] = std::move(rows);
}

struct StepOutcome {
  GlobalState next_state;
  std::vector<double> rewards;
  std::vector<AgentFlag> flags;
  // Social slots whose vehicle finished and was replaced in next_state
  // (index 0 unused, always false).
  std::vector<bool> respawned;
  bool episode_done = false;
};

}  // namespace gmrl::sim
