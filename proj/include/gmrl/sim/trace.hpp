#pragma once

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gmrl/sim/intersection.hpp"
#include "json.hpp"

namespace gmrl::sim {

// Episode trace, JSON Lines. The first line is a header
//   {"trace":"gmrl-episode-v1","seed":..,"scenario":{..},"preferences":{..}}
// followed by one line per step with keys in this fixed order:
//   {"step": t, "agents": [{"id","role","lane","x","y","vx","vy","speed",
//    "progress","beta"(social only),"action","reward","flag"}, ...]}
// Agent fields describe the state the action was taken in; reward and flag
// are the result of that action.
inline constexpr const char* kTraceFormat = "gmrl-episode-v1";

inline nlohmann::ordered_json trace_header(const Intersection& env,
                                           std::uint64_t seed) {
  nlohmann::ordered_json h;
  h["trace"] = kTraceFormat;
  h["seed"] = seed;
  h["scenario"] = nlohmann::json(env.config());
  h["preferences"] = nlohmann::json(env.preferences());
  return h;
}

inline nlohmann::ordered_json trace_step(const GlobalState& s,
                                         std::span<const ActionIndex> actions,
                                         const StepOutcome& out) {
  nlohmann::ordered_json line;
  line["step"] = s.step_index;
  auto agents = nlohmann::ordered_json::array();
  for (int a = 0; a < s.n_agents(); ++a) {
    const VehicleState& v = s.vehicle(a);
    nlohmann::ordered_json row;
    row["id"] = a;
    row["role"] = to_string(v.role);
    row["lane"] = to_string(v.lane);
    row["x"] = v.position_x;
    row["y"] = v.position_y;
    row["vx"] = v.velocity_x;
    row["vy"] = v.velocity_y;
    row["speed"] = v.speed;
    row["progress"] = v.track_progress;
    if (a > 0) row["beta"] = s.social[a - 1].preference.beta;
    row["action"] = actions[a].index;
    row["reward"] = out.rewards[a];
    row["flag"] = to_string(out.flags[a]);
    agents.push_back(std::move(row));
  }
  line["agents"] = std::move(agents);
  return line;
}

class TraceWriter {
 public:
  TraceWriter(std::ostream& out, const Intersection& env, std::uint64_t seed)
      : out_(out) {
    out_ << trace_header(env, seed).dump() << "\n";
  }
  void write(const GlobalState& s, std::span<const ActionIndex> actions,
             const StepOutcome& outcome) {
    out_ << trace_step(s, actions, outcome).dump() << "\n";
  }

 private:
  std::ostream& out_;
};

struct ReplayResult {
  int steps = 0;
  bool matched = true;
  int first_mismatch_step = -1;
  std::string detail;
  AgentFlag ego_flag = AgentFlag::kRunning;
};

// Re-simulates a trace from its header and recorded actions and checks
// every recorded line matches the regenerated one exactly.
inline ReplayResult replay_trace(const std::vector<std::string>& lines) {
  ReplayResult r;
  if (lines.empty()) throw ConfigError("replay: empty trace");
  const auto header = nlohmann::json::parse(lines.front());
  if (header.value("trace", "") != kTraceFormat) {
    throw ConfigError("replay: not a gmrl episode trace");
  }
  ScenarioConfig cfg = header.at("scenario").get<ScenarioConfig>();
  PreferenceDistribution prefs = header.at("preferences").get<PreferenceDistribution>();
  const auto seed = header.at("seed").get<std::uint64_t>();
  Intersection env(cfg, prefs);
  GlobalState s = env.spawn(seed);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto recorded = nlohmann::ordered_json::parse(lines[i]);
    std::vector<ActionIndex> actions;
    for (const auto& a : recorded.at("agents")) {
      actions.emplace_back(a.at("action").get<int>());
    }
    if (s.done) {
      r.matched = false;
      r.first_mismatch_step = int(i - 1);
      r.detail = "trace continues after the episode ended";
      return r;
    }
    const StepOutcome out = env.step(s, actions);
    const auto regenerated = trace_step(s, actions, out);
    if (regenerated.dump() != recorded.dump()) {
      r.matched = false;
      r.first_mismatch_step = s.step_index;
      r.detail = "state mismatch at step " + std::to_string(s.step_index);
      return r;
    }
    r.ego_flag = out.flags[0];
    s = out.next_state;
    ++r.steps;
  }
  return r;
}

}  // namespace gmrl::sim
