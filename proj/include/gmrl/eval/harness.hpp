#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gmrl/rl/pipeline.hpp"

namespace gmrl::eval {

using rl::Config;
using rl::EgoControl;
using rl::HeadMode;
using rl::Runner;
using rl::RunnerOptions;
namespace fs = std::filesystem;

inline constexpr std::int64_t kMinKlSamples = 1000;

// Evenly spaced preferences lo, lo + step, ..., hi.
inline std::vector<double> preference_grid(double lo, double hi, double step) {
  const int n = int(std::lround((hi - lo) / step)) + 1;
  std::vector<double> g;
  for (int k = 0; k < n; ++k) g.push_back(lo + step * k);
  return g;
}

// Frozen ego controller shared by every evaluation.
struct EgoPolicy {
  std::string name;
  const nets::PolicyNet<float>* net = nullptr;
  const nets::TrajectoryAutoencoder<float>* ae = nullptr;
  std::vector<std::string> trained_against;  // social families seen in training
};

struct Summary {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::int64_t samples = 0;
};

// Mean and standard error. `cluster` groups correlated samples (e.g. one
// episode); the error is the cluster-robust estimate over groups.
inline Summary summarize(const std::vector<double>& x, const std::vector<std::int64_t>& cluster) {
  Summary s;
  s.samples = std::int64_t(x.size());
  if (x.empty()) return s;
  double sum = 0.0;
  for (double v : x) sum += v;
  s.mean = sum / double(x.size());
  std::map<std::int64_t, double> resid;
  for (std::size_t i = 0; i < x.size(); ++i) resid[cluster[i]] += x[i] - s.mean;
  const double g = double(resid.size());
  if (g < 2) return s;
  double ss = 0.0;
  for (const auto& [k, r] : resid) ss += r * r;
  s.stderr_ = std::sqrt(ss * g / (g - 1.0)) / double(x.size());
  return s;
}

// ---------------------------------------------------------------------------
// KL between a social policy and the guiding heads.

struct KlPoint {
  std::string policy;
  double beta = 0.0;
  double anchor = 0.0;  // nearest anchor whose guiding head is the reference
  double mean = 0.0;
  double stderr_ = 0.0;
  std::int64_t samples = 0;
  bool low_sample_warning = false;
};

// Mean KL(guide_{nearest anchor}(.|o) || policy(.|o, beta)) over states
// visited by `policy` at preference `beta` against the frozen ego.
inline KlPoint estimate_kl(const Config& c, const std::string& name,
                           const nets::PolicyNet<float>& policy, HeadMode mode,
                           const nets::PolicyNet<float>& guide, const EgoPolicy& ego,
                           double beta, std::int64_t n_samples, std::uint64_t seed) {
  if (n_samples < 1) throw ConfigError("estimate_kl: n_samples must be positive");
  sim::Intersection env(c.scenario, sim::PreferenceDistribution::constant(beta));
  RunnerOptions o;
  o.envs = c.eval.envs;
  o.workers = c.workers;
  o.ego_net = ego.net;
  o.ego_ae = ego.ae;
  o.social_net = &policy;
  o.head_mode = mode;
  o.guide_net = &guide;
  o.guide_nearest = true;
  o.anchors = &c.anchors;
  o.neural_fraction = 1.0;
  Runner runner(env, o, seed);
  std::vector<double> kl;
  std::vector<std::int64_t> cluster;
  std::vector<std::int64_t> episode(o.envs, 0);
  std::int64_t next_episode = o.envs;
  for (int i = 0; i < o.envs; ++i) episode[i] = i;
  while (std::int64_t(kl.size()) < n_samples) {
    const auto out = runner.step();
    for (int i = 0; i < int(out.size()); ++i) {
      for (const auto& a : out[i].agents) {
        if (!a.has_guide || std::int64_t(kl.size()) >= n_samples) continue;
        double d = 0.0;
        for (int j = 0; j < 3; ++j) {
          if (a.guide[j] > 0.0) d += a.guide[j] * std::log(a.guide[j] / std::max(a.probs[j], 1e-30));
        }
        kl.push_back(std::max(d, 0.0));
        cluster.push_back(episode[i]);
      }
      if (out[i].episode_done) episode[i] = next_episode++;
    }
  }
  const auto s = summarize(kl, cluster);
  KlPoint p;
  p.policy = name;
  p.beta = beta;
  p.anchor = c.anchors.anchors[c.anchors.nearest(beta)];
  p.mean = s.mean;
  p.stderr_ = s.stderr_;
  p.samples = s.samples;
  p.low_sample_warning = n_samples < kMinKlSamples;
  return p;
}

// ---------------------------------------------------------------------------
// Reward of the social policy as a function of preference.

struct SweepPoint {
  std::string policy;
  double beta = 0.0;
  double mean = 0.0;
  double stderr_ = 0.0;
  std::int64_t samples = 0;
  std::int64_t episodes = 0;
};

// Mean per-step final reward of neural social vehicles that all share
// preference `beta`, over `n_samples` vehicle-steps. The standard error is
// clustered by episode.
inline SweepPoint sweep_point(const Config& c, const std::string& name,
                              const nets::PolicyNet<float>& policy, const EgoPolicy& ego,
                              double beta, std::int64_t n_samples, std::uint64_t seed) {
  sim::Intersection env(c.scenario, sim::PreferenceDistribution::constant(beta));
  RunnerOptions o;
  o.envs = c.eval.envs;
  o.workers = c.workers;
  o.ego_net = ego.net;
  o.ego_ae = ego.ae;
  o.social_net = &policy;
  o.neural_fraction = 1.0;
  Runner runner(env, o, seed);
  std::vector<double> r;
  std::vector<std::int64_t> cluster;
  std::vector<std::int64_t> episode(o.envs);
  for (int i = 0; i < o.envs; ++i) episode[i] = i;
  std::int64_t next_episode = o.envs;
  while (std::int64_t(r.size()) < n_samples) {
    const auto out = runner.step();
    for (int i = 0; i < int(out.size()); ++i) {
      if (out[i].faulted) continue;
      for (const auto& a : out[i].agents) {
        if (a.agent == 0 || std::int64_t(r.size()) >= n_samples) continue;
        r.push_back(a.reward);
        cluster.push_back(episode[i]);
      }
      if (out[i].episode_done) episode[i] = next_episode++;
    }
  }
  const auto s = summarize(r, cluster);
  std::map<std::int64_t, int> distinct;
  for (auto k : cluster) distinct[k] = 1;
  return {name, beta, s.mean, s.stderr_, s.samples, std::int64_t(distinct.size())};
}

// ---------------------------------------------------------------------------
// Action probe at a scripted merge.

inline constexpr int kProbeWarmupFrames = 10;

// Frame k of the scripted merge (k = kProbeWarmupFrames is the probe
// moment): the ego reaches the start of its turn while the probed social
// vehicle approaches in the upper lane and would reach the merge point
// about half a second after the ego. Both drive at 3 m/s.
inline sim::GlobalState probe_state(const sim::Intersection& env, double beta, int frame) {
  const auto& cfg = env.config();
  const double speed = 3.0, step = speed * cfg.dt;
  const double back = step * (kProbeWarmupFrames - frame);
  const double straight = (cfg.lane_width / 2.0 - cfg.turn_radius) - cfg.ego_start_y;
  const double arc = 0.5 * std::numbers::pi * cfg.turn_radius;
  const double merge_x = -cfg.turn_radius;
  const double social_x = merge_x + arc + speed * 0.5;
  sim::GlobalState s;
  s.ego = env.vehicle_at(sim::Role::kEgo, sim::Lane::kEgoApproach, straight - back, speed);
  sim::SocialVehicle v;
  v.state = env.vehicle_at(sim::Role::kSocial, sim::Lane::kUpper,
                           cfg.road_half_length - social_x - back, speed);
  v.preference.beta = beta;
  s.social.push_back(v);
  s.step_index = frame;
  return s;
}

struct ProbePoint {
  std::string policy;
  std::string head;
  double beta = 0.0;
  int action = 0;
  double desired_speed = 0.0;
  std::array<double, 3> probs{};
};

// Greedy desired speed of `head` after the warm-up frames of the probe.
inline ProbePoint probe_action(const sim::Intersection& env, const std::string& name,
                               const nets::PolicyNet<float>& net, std::size_t head,
                               double beta) {
  ad::NoGradGuard guard;
  ad::Tensor<float> h(1, net.hidden_width());
  typename nets::SetEncoder<float>::Output enc;
  for (int k = 0; k <= kProbeWarmupFrames; ++k) {
    const auto s = probe_state(env, beta, k);
    nets::SetBatch batch(nets::kSocialRowWidth);
    batch.append(nets::social_rows(env.observe(s, 1)), 1);
    enc = net.encode(batch, h);
    h = enc.hidden.value();
  }
  const auto out = net.head(head, enc.hidden, nets::PolicyNet<float>::beta_column({beta}));
  ProbePoint p;
  p.policy = name;
  p.head = net.head_spec(head).name;
  p.beta = beta;
  p.probs = rl::softmax3(out.logits.value().data());
  p.action = rl::argmax3(p.probs);
  p.desired_speed = sim::ActionIndex(p.action).desired_speed();
  return p;
}

// ---------------------------------------------------------------------------
// Cross-evaluation of ego policies against social families.

struct SocialFamily {
  std::string name;
  const nets::PolicyNet<float>* net = nullptr;  // null: IDM socials
  sim::PreferenceDistribution preferences;
};

struct CrossCell {
  std::string ego;
  std::string family;
  std::vector<std::uint64_t> seeds;
  int episodes = 0;
  int success = 0;
  int collision = 0;
  int timeout = 0;
  bool ood = false;
  std::vector<std::uint64_t> episode_seeds;

  double success_rate() const { return double(success) / episodes; }
  double collision_rate() const { return double(collision) / episodes; }
  double timeout_rate() const { return double(timeout) / episodes; }
};

// Runs `episodes` complete episodes of one (ego, family, seed) cell. Each
// environment slot contributes a fixed quota of episodes and episode seeds
// depend only on the family and seed, so every ego policy meets the same
// initial traffic. Traces go to trace_dir when given.
inline CrossCell cross_cell(const Config& c, const EgoPolicy& ego, const SocialFamily& family,
                            int episodes, std::uint64_t seed,
                            const std::optional<fs::path>& trace_dir) {
  sim::Intersection env(c.scenario, family.preferences);
  RunnerOptions o;
  o.envs = std::min(c.eval.envs, episodes);
  o.workers = c.workers;
  o.ego_net = ego.net;
  o.ego_ae = ego.ae;
  o.social_net = family.net;
  o.neural_fraction = family.net ? 1.0 : 0.0;
  o.conservative = c.conservative;
  o.aggressive = c.aggressive;
  o.capture_states = trace_dir.has_value();
  Runner runner(env, o, rl::sub_seed(rl::fnv1a(family.name), seed));
  rl::TraceRecorder recorder(env, o.envs);
  CrossCell cell;
  cell.ego = ego.name;
  cell.family = family.name;
  cell.seeds = {seed};
  cell.ood = std::find(ego.trained_against.begin(), ego.trained_against.end(), family.name) ==
             ego.trained_against.end();
  std::vector<int> quota(o.envs, episodes / o.envs), done(o.envs, 0);
  for (int i = 0; i < episodes % o.envs; ++i) ++quota[i];
  while (cell.episodes < episodes) {
    const auto out = runner.step();
    for (int i = 0; i < int(out.size()); ++i) {
      const auto& e = out[i];
      if (done[i] >= quota[i]) continue;
      std::optional<std::vector<std::string>> trace;
      if (trace_dir) trace = recorder.add(i, e);
      if (!e.episode_done || e.faulted) continue;
      switch (e.ego_flag) {
        case sim::AgentFlag::kGoal: ++cell.success; break;
        case sim::AgentFlag::kFail: ++cell.collision; break;
        default: ++cell.timeout;
      }
      if (trace) {
        rl::write_lines(*trace_dir / ("episode" + std::to_string(cell.episodes) + ".jsonl"),
                        *trace);
      }
      cell.episode_seeds.push_back(e.episode_seed);
      ++cell.episodes;
      ++done[i];
    }
  }
  return cell;
}

// ---------------------------------------------------------------------------
// Report serialization.

inline nlohmann::json to_json(const KlPoint& p) {
  return {{"policy", p.policy}, {"beta", p.beta}, {"anchor", p.anchor}, {"mean", p.mean},
          {"stderr", p.stderr_}, {"samples", p.samples},
          {"low_sample_warning", p.low_sample_warning}};
}

inline nlohmann::json to_json(const SweepPoint& p) {
  return {{"policy", p.policy}, {"beta", p.beta},      {"mean", p.mean},
          {"stderr", p.stderr_}, {"samples", p.samples}, {"episodes", p.episodes}};
}

inline nlohmann::json to_json(const ProbePoint& p) {
  return {{"policy", p.policy}, {"head", p.head}, {"beta", p.beta}, {"action", p.action},
          {"desired_speed", p.desired_speed}, {"probs", p.probs}};
}

inline nlohmann::json to_json(const CrossCell& c) {
  return {{"ego", c.ego},
          {"family", c.family},
          {"seeds", c.seeds},
          {"episodes", c.episodes},
          {"success", c.success},
          {"collision", c.collision},
          {"timeout", c.timeout},
          {"success_rate", c.success_rate()},
          {"collision_rate", c.collision_rate()},
          {"timeout_rate", c.timeout_rate()},
          {"ood", c.ood},
          {"episode_seeds", c.episode_seeds}};
}

inline std::string kl_csv(const std::vector<KlPoint>& v) {
  std::string s = "policy,beta,anchor,mean_kl,stderr,samples,low_sample_warning\n";
  for (const auto& p : v) {
    s += p.policy + "," + rl::fmt(p.beta) + "," + rl::fmt(p.anchor) + "," + rl::fmt(p.mean) +
         "," + rl::fmt(p.stderr_) + "," + std::to_string(p.samples) + "," +
         (p.low_sample_warning ? "1" : "0") + "\n";
  }
  return s;
}

inline std::string sweep_csv(const std::vector<SweepPoint>& v) {
  std::string s = "policy,beta,mean_reward,stderr,samples,episodes\n";
  for (const auto& p : v) {
    s += p.policy + "," + rl::fmt(p.beta) + "," + rl::fmt(p.mean) + "," + rl::fmt(p.stderr_) +
         "," + std::to_string(p.samples) + "," + std::to_string(p.episodes) + "\n";
  }
  return s;
}

inline std::string probe_csv(const std::vector<ProbePoint>& v) {
  std::string s = "policy,head,beta,action,desired_speed,p0,p1,p2\n";
  for (const auto& p : v) {
    s += p.policy + "," + p.head + "," + rl::fmt(p.beta) + "," + std::to_string(p.action) + "," +
         rl::fmt(p.desired_speed) + "," + rl::fmt(p.probs[0]) + "," + rl::fmt(p.probs[1]) + "," +
         rl::fmt(p.probs[2]) + "\n";
  }
  return s;
}

// Sums per-seed cells into one cell per (ego, family), keeping order of
// first appearance.
inline std::vector<CrossCell> aggregate(const std::vector<CrossCell>& cells) {
  std::vector<CrossCell> out;
  for (const auto& c : cells) {
    auto it = std::find_if(out.begin(), out.end(), [&](const CrossCell& o) {
      return o.ego == c.ego && o.family == c.family;
    });
    if (it == out.end()) {
      out.push_back(c);
      continue;
    }
    it->seeds.insert(it->seeds.end(), c.seeds.begin(), c.seeds.end());
    it->episodes += c.episodes;
    it->success += c.success;
    it->collision += c.collision;
    it->timeout += c.timeout;
    it->episode_seeds.insert(it->episode_seeds.end(), c.episode_seeds.begin(),
                             c.episode_seeds.end());
  }
  return out;
}

inline std::string cross_csv(const std::vector<CrossCell>& v) {
  std::string s =
      "ego,family,seeds,episodes,success,collision,timeout,success_rate,collision_rate,"
      "timeout_rate,ood\n";
  for (const auto& c : v) {
    std::string seeds;
    for (auto k : c.seeds) seeds += (seeds.empty() ? "" : ";") + std::to_string(k);
    s += c.ego + "," + c.family + "," + seeds + "," +
         std::to_string(c.episodes) + "," + std::to_string(c.success) + "," +
         std::to_string(c.collision) + "," + std::to_string(c.timeout) + "," +
         rl::fmt(c.success_rate()) + "," + rl::fmt(c.collision_rate()) + "," +
         rl::fmt(c.timeout_rate()) + "," + (c.ood ? "1" : "0") + "\n";
  }
  return s;
}

}  // namespace gmrl::eval
