#pragma once

#include <array>
#include <cmath>
#include <deque>
#include <iostream>
#include <thread>
#include <vector>

#include "gmrl/idm/idm.hpp"
#include "gmrl/nets/features.hpp"
#include "gmrl/nets/networks.hpp"
#include "gmrl/rl/anchors.hpp"
#include "gmrl/sim/intersection.hpp"

namespace gmrl::rl {

enum class EgoControl { kNeural, kRandom, kStopped };
// kSingle: every neural social uses head 0. kByAnchor: head = index of the
// vehicle's preference in the anchor set.
enum class HeadMode { kSingle, kByAnchor };

struct RunnerOptions {
  int envs = 8;
  int workers = 1;
  EgoControl ego = EgoControl::kNeural;
  const nets::PolicyNet<float>* ego_net = nullptr;
  const nets::TrajectoryAutoencoder<float>* ego_ae = nullptr;
  const nets::PolicyNet<float>* social_net = nullptr;
  HeadMode head_mode = HeadMode::kSingle;
  // Probability that an episode's social vehicles are neural rather than IDM.
  double neural_fraction = 1.0;
  // Frozen guiding network; when set, matched social vehicles also report
  // the guiding head's distribution for their anchor.
  const nets::PolicyNet<float>* guide_net = nullptr;
  const PreferenceAnchors* anchors = nullptr;
  // Evaluate the guide at the nearest anchor for every vehicle instead of
  // only for matched ones.
  bool guide_nearest = false;
  // Copy each environment's pre-step state into EnvStep (for traces).
  bool capture_states = false;
  bool record_ego_inputs = false;
  bool record_social_inputs = false;
  bool greedy = false;
  idm::IdmParams conservative = idm::conservative();
  idm::IdmParams aggressive = idm::aggressive();
};

// Everything one agent did during one lockstep step.
struct AgentStep {
  int agent = 0;
  bool neural = false;
  // Network inputs at decision time (only when recorded).
  std::vector<float> rows;
  int viewer = 0;
  std::vector<float> hidden;
  double beta = 0.0;
  int head = 0;
  // Decision.
  int action = 0;
  std::array<double, 3> probs{};
  double log_prob = 0.0;
  double value = 0.0;
  int anchor = -1;
  bool has_guide = false;
  std::array<double, 3> guide{};
  // Outcome.
  double reward = 0.0;
  sim::AgentFlag flag = sim::AgentFlag::kRunning;
  bool done = false;  // this agent's life ended (own flag or episode end)
  std::uint64_t life_id = 0;
};

struct EnvStep {
  std::vector<AgentStep> agents;
  bool episode_done = false;
  bool neural_socials = false;
  sim::AgentFlag ego_flag = sim::AgentFlag::kRunning;
  int episode_steps = 0;
  std::uint64_t episode_seed = 0;
  bool faulted = false;
  sim::GlobalState pre_state;  // only with capture_states
};

inline std::array<double, 3> softmax3(const float* logits) {
  const double m = std::max({double(logits[0]), double(logits[1]), double(logits[2])});
  std::array<double, 3> p{};
  double z = 0.0;
  for (int j = 0; j < 3; ++j) {
    p[j] = std::exp(double(logits[j]) - m);
    z += p[j];
  }
  for (auto& v : p) v /= z;
  return p;
}

inline int argmax3(const std::array<double, 3>& p) {
  int best = 0;
  for (int j = 1; j < 3; ++j) {
    if (p[j] > p[best]) best = j;
  }
  return best;
}

// Steps a set of environments in lockstep with batched network evaluation.
// Every environment owns its random stream, so results do not depend on
// how environments are split across workers.
class Runner {
 public:
  Runner(const sim::Intersection& env, RunnerOptions options, std::uint64_t seed)
      : env_(env), opt_(options) {
    if (opt_.envs <= 0) throw ConfigError("runner: envs must be positive");
    if (opt_.ego == EgoControl::kNeural && (!opt_.ego_net || !opt_.ego_ae)) {
      throw ContractViolation("runner: neural ego needs a policy and an inference network");
    }
    if (opt_.neural_fraction > 0.0 && !opt_.social_net) {
      throw ContractViolation("runner: neural socials need a policy");
    }
    if ((opt_.head_mode == HeadMode::kByAnchor || opt_.guide_net) && !opt_.anchors) {
      throw ContractViolation("runner: anchors required");
    }
    Rng root(seed);
    for (int i = 0; i < opt_.envs; ++i) {
      Slot s;
      s.rng = root.split();
      s.episode_rng = root.split();
      slots_.push_back(std::move(s));
    }
  }

  const RunnerOptions& options() const { return opt_; }
  const sim::Intersection& env() const { return env_; }
  int env_count() const { return int(slots_.size()); }
  const sim::GlobalState& state(int i) const { return slots_.at(i).state; }

  std::vector<EnvStep> step() {
    std::vector<EnvStep> out(slots_.size());
    const int workers = std::max(1, std::min(opt_.workers, int(slots_.size())));
    if (workers == 1) {
      step_range(0, int(slots_.size()), out);
    } else {
      std::vector<std::thread> pool;
      const int n = int(slots_.size());
      for (int w = 0; w < workers; ++w) {
        const int lo = n * w / workers, hi = n * (w + 1) / workers;
        pool.emplace_back([this, lo, hi, &out] { step_range(lo, hi, out); });
      }
      for (auto& t : pool) t.join();
    }
    return out;
  }

  // Values of the current states for agents whose inputs are recorded,
  // without advancing anything. Indexed [env][agent]; NaN where unused.
  std::vector<std::vector<double>> peek_values() {
    ad::NoGradGuard guard;
    std::vector<std::vector<double>> out(slots_.size());
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      out[i].assign(slots_[i].active ? slots_[i].state.n_agents() : 0,
                    std::numeric_limits<double>::quiet_NaN());
    }
    if (opt_.record_ego_inputs) {
      const auto d = ego_forward(0, int(slots_.size()));
      for (std::size_t k = 0; k < d.env.size(); ++k) out[d.env[k]][0] = d.value[k];
    }
    if (opt_.record_social_inputs) {
      const auto d = social_forward(0, int(slots_.size()), false);
      for (std::size_t k = 0; k < d.env.size(); ++k) out[d.env[k]][d.agent[k]] = d.value[k];
    }
    return out;
  }

  // History windows of every social vehicle with a full history, as seen by
  // the ego (one row of H*4 features each), plus the vehicles' preferences.
  void full_histories(std::vector<float>& rows, std::vector<double>& betas) const {
    const std::size_t h = history_length();
    for (const auto& s : slots_) {
      if (!s.active) continue;
      for (std::size_t k = 0; k < s.social.size(); ++k) {
        if (s.social[k].history.size() < h) continue;
        const std::vector<nets::HistoryPoint> hist(s.social[k].history.begin(),
                                                   s.social[k].history.end());
        const auto f = nets::history_features(hist, h);
        rows.insert(rows.end(), f.begin(), f.end());
        betas.push_back(s.state.social[k].preference.beta);
      }
    }
  }

 private:
  struct SocialMemory {
    std::uint64_t life_id = ~0ULL;
    std::vector<float> hidden;
    std::vector<float> guide_hidden;
    std::deque<nets::HistoryPoint> history;
  };

  struct Slot {
    sim::GlobalState state;
    Rng rng;          // action sampling
    Rng episode_rng;  // episode seeds and controller draws
    bool active = false;
    bool neural = false;
    std::uint64_t seed = 0;
    std::vector<float> ego_hidden;
    std::vector<SocialMemory> social;
  };

  struct Forward {
    std::vector<int> env, agent;
    std::vector<std::vector<float>> rows, hidden, next_hidden;
    std::vector<int> viewer, head;
    std::vector<double> beta, value;
    std::vector<std::array<double, 3>> probs;
  };

  std::size_t history_length() const {
    return opt_.ego_ae ? opt_.ego_ae->config().history : 10;
  }

  void start_episode(Slot& s) {
    s.seed = s.episode_rng.next_u64();
    const double u = s.episode_rng.uniform();
    s.neural = u < opt_.neural_fraction;
    s.state = env_.spawn(s.seed);
    s.active = true;
    s.ego_hidden.assign(opt_.ego_net ? opt_.ego_net->hidden_width() : 0, 0.0f);
    s.social.assign(s.state.social.size(), SocialMemory{});
    refresh_memories(s, std::vector<bool>(s.state.n_agents(), false));
  }

  // Resets memories of new lives and appends the current point to every
  // social history.
  void refresh_memories(Slot& s, const std::vector<bool>& respawned) {
    const std::size_t h = history_length();
    for (std::size_t k = 0; k < s.state.social.size(); ++k) {
      auto& m = s.social[k];
      const auto& v = s.state.social[k];
      if (m.life_id != v.life_id || respawned[k + 1]) {
        m.life_id = v.life_id;
        m.hidden.assign(opt_.social_net ? opt_.social_net->hidden_width() : 0, 0.0f);
        m.guide_hidden.assign(opt_.guide_net ? opt_.guide_net->hidden_width() : 0, 0.0f);
        m.history.clear();
      }
      m.history.push_back({v.state.position_x, v.state.position_y, v.state.velocity_x,
                           v.state.velocity_y});
      while (m.history.size() > h) m.history.pop_front();
    }
  }

  Forward ego_forward(int lo, int hi) const {
    Forward f;
    const auto& cfg = opt_.ego_net->config();
    const std::size_t L = cfg.latent, H = cfg.history;
    // Latents for every social with a full history, batched.
    std::vector<float> hist_rows;
    std::vector<std::pair<int, int>> hist_owner;
    for (int i = lo; i < hi; ++i) {
      const auto& s = slots_[i];
      if (!s.active) continue;
      for (std::size_t k = 0; k < s.social.size(); ++k) {
        if (s.social[k].history.size() < H) continue;
        const std::vector<nets::HistoryPoint> hist(s.social[k].history.begin(),
                                                   s.social[k].history.end());
        const auto feat = nets::history_features(hist, H);
        hist_rows.insert(hist_rows.end(), feat.begin(), feat.end());
        hist_owner.push_back({i, int(k)});
      }
    }
    std::vector<std::vector<float>> latents(slots_.size());
    for (int i = lo; i < hi; ++i) latents[i].assign(slots_[i].state.n_agents() * L, 0.0f);
    if (!hist_owner.empty()) {
      const auto width = opt_.ego_ae->input_width();
      ad::Tensor<float> x(hist_owner.size(), width, std::move(hist_rows));
      const auto z = opt_.ego_ae->encode(ad::Var<float>::constant(std::move(x))).value();
      for (std::size_t r = 0; r < hist_owner.size(); ++r) {
        const auto [env, k] = hist_owner[r];
        for (std::size_t j = 0; j < L; ++j) latents[env][(k + 1) * L + j] = z(r, j);
      }
    }
    nets::SetBatch batch(nets::ego_row_width(cfg));
    std::vector<float> hidden;
    for (int i = lo; i < hi; ++i) {
      const auto& s = slots_[i];
      if (!s.active) continue;
      const auto obs = env_.observe(s.state, 0);
      auto rows = nets::ego_rows(obs, latents[i], L);
      batch.append(rows, 0);
      hidden.insert(hidden.end(), s.ego_hidden.begin(), s.ego_hidden.end());
      f.env.push_back(i);
      f.agent.push_back(0);
      f.rows.push_back(std::move(rows));
      f.viewer.push_back(0);
      f.hidden.push_back(s.ego_hidden);
      f.head.push_back(0);
      f.beta.push_back(0.0);
    }
    if (f.env.empty()) return f;
    const auto& net = *opt_.ego_net;
    ad::Tensor<float> h(f.env.size(), net.hidden_width(), std::move(hidden));
    const auto enc = net.encode(batch, h);
    const auto out = net.head(0, enc.hidden, {});
    fill_outputs(f, enc.hidden.value(), out, {});
    return f;
  }

  void fill_outputs(Forward& f, const ad::Tensor<float>& next_hidden,
                    const nets::HeadOutput<float>& out, const std::vector<int>& rows) const {
    const std::size_t n = rows.empty() ? f.env.size() : rows.size();
    if (f.probs.size() != f.env.size()) {
      f.probs.resize(f.env.size());
      f.value.resize(f.env.size());
      f.next_hidden.resize(f.env.size());
    }
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t k = rows.empty() ? r : std::size_t(rows[r]);
      f.probs[k] = softmax3(out.logits.value().data() + r * 3);
      f.value[k] = double(out.value.value()[r]);
      const auto row = next_hidden.row(k);
      f.next_hidden[k].assign(row.begin(), row.end());
    }
  }

  Forward social_forward(int lo, int hi, bool guide) const {
    Forward f;
    const nets::PolicyNet<float>& net = guide ? *opt_.guide_net : *opt_.social_net;
    nets::SetBatch batch(nets::kSocialRowWidth);
    std::vector<float> hidden;
    for (int i = lo; i < hi; ++i) {
      const auto& s = slots_[i];
      if (!s.active || !s.neural) continue;
      for (std::size_t k = 0; k < s.state.social.size(); ++k) {
        const double beta = s.state.social[k].preference.beta;
        int head = 0;
        if (guide) {
          head = opt_.guide_nearest ? opt_.anchors->nearest(beta) : opt_.anchors->match(beta);
          if (head < 0) continue;
        } else if (opt_.head_mode == HeadMode::kByAnchor) {
          head = opt_.anchors->index_of(beta);
          if (head < 0) {
            throw ContractViolation("runner: preference " + std::to_string(beta) +
                                    " is not an anchor");
          }
        }
        const int agent = int(k) + 1;
        const auto obs = env_.observe(s.state, agent);
        auto rows = nets::social_rows(obs);
        batch.append(rows, agent);
        const auto& mem = guide ? s.social[k].guide_hidden : s.social[k].hidden;
        hidden.insert(hidden.end(), mem.begin(), mem.end());
        f.env.push_back(i);
        f.agent.push_back(agent);
        f.rows.push_back(std::move(rows));
        f.viewer.push_back(agent);
        f.hidden.push_back(mem);
        f.head.push_back(head);
        f.beta.push_back(beta);
      }
    }
    if (f.env.empty()) return f;
    ad::Tensor<float> h(f.env.size(), net.hidden_width(), std::move(hidden));
    const auto enc = net.encode(batch, h);
    const auto beta_col = nets::PolicyNet<float>::beta_column(f.beta);
    for (std::size_t head = 0; head < net.head_count(); ++head) {
      std::vector<int> rows;
      for (std::size_t k = 0; k < f.head.size(); ++k) {
        if (f.head[k] == int(head)) rows.push_back(int(k));
      }
      if (rows.empty()) continue;
      const bool all = rows.size() == f.head.size();
      const auto feat = all ? enc.hidden : ad::gather_rows(enc.hidden, rows);
      const auto beta = all ? beta_col : ad::gather_rows(beta_col, rows);
      const auto out = net.head(head, feat, beta);
      fill_outputs(f, enc.hidden.value(), out, rows);
    }
    return f;
  }

  int choose(Rng& rng, const std::array<double, 3>& p) const {
    if (opt_.greedy) return argmax3(p);
    return rng.categorical(std::span<const double>(p.data(), 3));
  }

  void step_range(int lo, int hi, std::vector<EnvStep>& out) {
    ad::NoGradGuard guard;
    for (int i = lo; i < hi; ++i) {
      if (!slots_[i].active) start_episode(slots_[i]);
    }
    for (int i = lo; i < hi; ++i) {
      auto& s = slots_[i];
      auto& e = out[i];
      e.neural_socials = s.neural;
      e.episode_seed = s.seed;
      if (opt_.capture_states) e.pre_state = s.state;
      e.agents.resize(s.state.n_agents());
      for (int a = 0; a < s.state.n_agents(); ++a) {
        e.agents[a].agent = a;
        e.agents[a].life_id = a == 0 ? 0 : s.state.social[a - 1].life_id;
        if (a > 0) e.agents[a].beta = s.state.social[a - 1].preference.beta;
      }
    }
    // Ego decisions.
    if (opt_.ego == EgoControl::kNeural) {
      auto f = ego_forward(lo, hi);
      for (std::size_t k = 0; k < f.env.size(); ++k) {
        auto& s = slots_[f.env[k]];
        auto& a = out[f.env[k]].agents[0];
        apply_decision(a, f, k, s.rng, opt_.record_ego_inputs);
        a.neural = true;
        s.ego_hidden = std::move(f.next_hidden[k]);
      }
    } else {
      for (int i = lo; i < hi; ++i) {
        auto& a = out[i].agents[0];
        a.action = opt_.ego == EgoControl::kRandom ? int(slots_[i].rng.below(3)) : 0;
        a.probs = {0.0, 0.0, 0.0};
        a.probs[a.action] = 1.0;
      }
    }
    // Social decisions.
    if (opt_.neural_fraction > 0.0) {
      auto f = social_forward(lo, hi, false);
      for (std::size_t k = 0; k < f.env.size(); ++k) {
        auto& s = slots_[f.env[k]];
        auto& a = out[f.env[k]].agents[f.agent[k]];
        apply_decision(a, f, k, s.rng, opt_.record_social_inputs);
        a.neural = true;
        s.social[f.agent[k] - 1].hidden = std::move(f.next_hidden[k]);
      }
      if (opt_.guide_net) {
        auto g = social_forward(lo, hi, true);
        for (std::size_t k = 0; k < g.env.size(); ++k) {
          auto& s = slots_[g.env[k]];
          auto& a = out[g.env[k]].agents[g.agent[k]];
          a.anchor = g.head[k];
          a.has_guide = true;
          a.guide = g.probs[k];
          s.social[g.agent[k] - 1].guide_hidden = std::move(g.next_hidden[k]);
        }
      }
    }
    for (int i = lo; i < hi; ++i) {
      auto& s = slots_[i];
      if (s.neural) continue;
      const auto& cfg = env_.config();
      for (int a = 1; a < s.state.n_agents(); ++a) {
        const auto& p = s.state.social[a - 1].conservative ? opt_.conservative : opt_.aggressive;
        auto& ag = out[i].agents[a];
        ag.action = idm::idm_policy(env_.observe(s.state, a), p, cfg).index;
        ag.probs = {0.0, 0.0, 0.0};
        ag.probs[ag.action] = 1.0;
      }
    }
    // Environment transitions.
    for (int i = lo; i < hi; ++i) {
      auto& s = slots_[i];
      auto& e = out[i];
      std::vector<sim::ActionIndex> actions;
      for (const auto& a : e.agents) actions.emplace_back(a.action);
      sim::StepOutcome o;
      try {
        o = env_.step(s.state, actions);
      } catch (const std::exception& ex) {
        std::cerr << "runner: environment fault in episode " << s.seed << ": " << ex.what()
                  << "; episode discarded\n";
        e.faulted = true;
        e.episode_done = true;
        s.active = false;
        continue;
      }
      for (int a = 0; a < s.state.n_agents(); ++a) {
        e.agents[a].reward = o.rewards[a];
        e.agents[a].flag = o.flags[a];
        e.agents[a].done = o.episode_done || (a > 0 && o.flags[a] != sim::AgentFlag::kRunning);
      }
      e.episode_done = o.episode_done;
      e.ego_flag = o.flags[0];
      e.episode_steps = o.next_state.step_index;
      s.state = std::move(o.next_state);
      if (o.episode_done) {
        s.active = false;
      } else {
        refresh_memories(s, o.respawned);
      }
    }
  }

  void apply_decision(AgentStep& a, Forward& f, std::size_t k, Rng& rng, bool record) const {
    a.probs = f.probs[k];
    a.action = choose(rng, a.probs);
    a.log_prob = std::log(std::max(a.probs[a.action], 1e-30));
    a.value = f.value[k];
    a.head = f.head[k];
    if (record) {
      a.rows = std::move(f.rows[k]);
      a.viewer = f.viewer[k];
      a.hidden = std::move(f.hidden[k]);
    }
  }

  const sim::Intersection& env_;
  RunnerOptions opt_;
  std::vector<Slot> slots_;
};

}  // namespace gmrl::rl
