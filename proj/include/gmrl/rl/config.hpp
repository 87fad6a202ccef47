#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "gmrl/idm/idm.hpp"
#include "gmrl/nets/networks.hpp"
#include "gmrl/rl/anchors.hpp"
#include "gmrl/rl/losses.hpp"
#include "gmrl/sim/config.hpp"
#include "json.hpp"

namespace gmrl::rl {

inline void check_keys(const nlohmann::json& j, const std::string& section,
                       const std::set<std::string>& known) {
  if (!j.is_object()) throw ConfigError(section + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      throw ConfigError(section + ": unknown key '" + it.key() + "'");
    }
  }
}

struct PpoSettings {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  int epochs = 4;
  int minibatch = 256;
  double lr = 1e-4;
  double max_grad_norm = 0.5;

  PpoConfig loss() const { return {clip, value_coef, entropy_coef}; }

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("ppo: gamma must lie in (0, 1)");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("ppo: lambda must lie in [0, 1]");
    if (!(clip > 0.0)) throw ConfigError("ppo: clip must be > 0");
    if (epochs < 1 || minibatch < 1) throw ConfigError("ppo: epochs and minibatch must be >= 1");
    if (!(lr >= 0.0)) throw ConfigError("ppo: lr must be >= 0");
    if (value_coef < 0.0 || entropy_coef < 0.0 || max_grad_norm < 0.0) {
      throw ConfigError("ppo: coefficients must be >= 0");
    }
  }
};

struct RolloutSettings {
  int social_envs = 8;
  int social_steps = 64;
  int ego_envs = 16;
  int ego_steps = 128;

  void validate() const {
    if (social_envs < 1 || social_steps < 1 || ego_envs < 1 || ego_steps < 1) {
      throw ConfigError("rollout: sizes must be >= 1");
    }
  }
};

// Budgets count learning-agent samples (one per learning agent per step).
struct Budgets {
  std::int64_t ego_initial = 500000;
  std::int64_t guiding_per_anchor = 200000;
  std::int64_t meta = 500000;
  std::int64_t ego_final = 500000;

  void validate() const {
    if (ego_initial < 1 || guiding_per_anchor < 1 || meta < 1 || ego_final < 1) {
      throw ConfigError("budgets: must be >= 1");
    }
  }
};

struct InferenceSettings {
  int pretrain_episodes = 48;
  int epochs = 20;
  int minibatch = 256;
  double lr = 1e-3;
  // Refit the warm-started autoencoder on mixed traffic before ego-final.
  bool refit_in_ego_final = true;

  void validate() const {
    if (pretrain_episodes < 1 || epochs < 1 || minibatch < 1 || !(lr >= 0.0)) {
      throw ConfigError("inference: invalid settings");
    }
  }
};

struct EvalSettings {
  int kl_samples = 10000;
  double grid_step = 0.5;
  int sweep_steps = 100000;
  int cross_episodes = 200;
  std::vector<std::uint64_t> cross_seeds{0, 1, 2, 3, 4};
  int envs = 16;

  void validate() const {
    if (kl_samples < 1 || !(grid_step > 0.0) || sweep_steps < 1 || cross_episodes < 1 ||
        envs < 1 || cross_seeds.empty()) {
      throw ConfigError("eval: invalid settings");
    }
  }
};

struct Config {
  sim::ScenarioConfig scenario;
  nets::EncoderConfig network;
  PreferenceAnchors anchors;
  PpoSettings ppo;
  RolloutSettings rollout;
  Budgets budgets;
  InferenceSettings inference;
  EvalSettings eval;
  double idm_fraction = 0.5;  // ego-final: P(episode uses IDM socials)
  bool warm_start = false;    // ego-final starts from the ego-initial policy
  double meta_beta_lo = -1.0, meta_beta_hi = 3.0;
  double ood_beta_lo = -3.0, ood_beta_hi = 3.0;
  idm::IdmParams conservative = idm::conservative();
  idm::IdmParams aggressive = idm::aggressive();
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const {
    scenario.validate();
    network.validate();
    anchors.validate();
    ppo.validate();
    rollout.validate();
    budgets.validate();
    inference.validate();
    eval.validate();
    conservative.validate();
    aggressive.validate();
    if (!(idm_fraction >= 0.0 && idm_fraction <= 1.0)) {
      throw ConfigError("mixing: idm_fraction must lie in [0, 1]");
    }
    if (!(meta_beta_hi > meta_beta_lo) || !(ood_beta_hi > ood_beta_lo)) {
      throw ConfigError("preferences: empty range");
    }
    if (workers < 1) throw ConfigError("workers must be >= 1");
  }
};

inline nlohmann::json to_config_json(const Config& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["scenario"] = c.scenario;
  j["network"] = c.network;
  j["anchors"] = c.anchors;
  j["ppo"] = {{"gamma", c.ppo.gamma},         {"lambda", c.ppo.lambda},
              {"clip", c.ppo.clip},           {"value_coef", c.ppo.value_coef},
              {"entropy_coef", c.ppo.entropy_coef}, {"epochs", c.ppo.epochs},
              {"minibatch", c.ppo.minibatch}, {"lr", c.ppo.lr},
              {"max_grad_norm", c.ppo.max_grad_norm}};
  j["rollout"] = {{"social_envs", c.rollout.social_envs},
                  {"social_steps", c.rollout.social_steps},
                  {"ego_envs", c.rollout.ego_envs},
                  {"ego_steps", c.rollout.ego_steps}};
  j["budgets"] = {{"ego_initial", c.budgets.ego_initial},
                  {"guiding_per_anchor", c.budgets.guiding_per_anchor},
                  {"meta", c.budgets.meta},
                  {"ego_final", c.budgets.ego_final}};
  j["inference"] = {{"pretrain_episodes", c.inference.pretrain_episodes},
                    {"epochs", c.inference.epochs},
                    {"minibatch", c.inference.minibatch},
                    {"lr", c.inference.lr},
                    {"refit_in_ego_final", c.inference.refit_in_ego_final}};
  j["eval"] = {{"kl_samples", c.eval.kl_samples}, {"grid_step", c.eval.grid_step},
               {"sweep_steps", c.eval.sweep_steps},
               {"cross_episodes", c.eval.cross_episodes},
               {"cross_seeds", c.eval.cross_seeds}, {"envs", c.eval.envs}};
  j["mixing"] = {{"idm_fraction", c.idm_fraction}, {"warm_start", c.warm_start}};
  j["preferences"] = {{"meta", {c.meta_beta_lo, c.meta_beta_hi}},
                      {"ood", {c.ood_beta_lo, c.ood_beta_hi}}};
  j["idm"] = {{"idm-conservative", c.conservative}, {"idm-aggressive", c.aggressive}};
  return j;
}

namespace detail {

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

// Parses a config. Unknown keys and type errors raise ConfigError. A
// "stage_overrides" object maps stage names to JSON merge patches applied
// by `for_stage`.
inline Config from_config_json(const nlohmann::json& j) {
  Config c;
  try {
    check_keys(j, "config", {"seed", "workers", "scenario", "network", "anchors", "ppo",
                             "rollout", "budgets", "inference", "eval", "mixing",
                             "preferences", "idm", "stage_overrides"});
    detail::read(j, "seed", c.seed);
    detail::read(j, "workers", c.workers);
    if (j.contains("scenario")) c.scenario = j.at("scenario").get<sim::ScenarioConfig>();
    if (j.contains("network")) c.network = j.at("network").get<nets::EncoderConfig>();
    if (j.contains("anchors")) c.anchors = j.at("anchors").get<PreferenceAnchors>();
    if (j.contains("ppo")) {
      const auto& p = j.at("ppo");
      check_keys(p, "ppo", {"gamma", "lambda", "clip", "value_coef", "entropy_coef", "epochs",
                            "minibatch", "lr", "max_grad_norm"});
      detail::read(p, "gamma", c.ppo.gamma);
      detail::read(p, "lambda", c.ppo.lambda);
      detail::read(p, "clip", c.ppo.clip);
      detail::read(p, "value_coef", c.ppo.value_coef);
      detail::read(p, "entropy_coef", c.ppo.entropy_coef);
      detail::read(p, "epochs", c.ppo.epochs);
      detail::read(p, "minibatch", c.ppo.minibatch);
      detail::read(p, "lr", c.ppo.lr);
      detail::read(p, "max_grad_norm", c.ppo.max_grad_norm);
    }
    if (j.contains("rollout")) {
      const auto& r = j.at("rollout");
      check_keys(r, "rollout", {"social_envs", "social_steps", "ego_envs", "ego_steps"});
      detail::read(r, "social_envs", c.rollout.social_envs);
      detail::read(r, "social_steps", c.rollout.social_steps);
      detail::read(r, "ego_envs", c.rollout.ego_envs);
      detail::read(r, "ego_steps", c.rollout.ego_steps);
    }
    if (j.contains("budgets")) {
      const auto& b = j.at("budgets");
      check_keys(b, "budgets", {"ego_initial", "guiding_per_anchor", "meta", "ego_final"});
      detail::read(b, "ego_initial", c.budgets.ego_initial);
      detail::read(b, "guiding_per_anchor", c.budgets.guiding_per_anchor);
      detail::read(b, "meta", c.budgets.meta);
      detail::read(b, "ego_final", c.budgets.ego_final);
    }
    if (j.contains("inference")) {
      const auto& n = j.at("inference");
      check_keys(n, "inference",
                 {"pretrain_episodes", "epochs", "minibatch", "lr", "refit_in_ego_final"});
      detail::read(n, "pretrain_episodes", c.inference.pretrain_episodes);
      detail::read(n, "epochs", c.inference.epochs);
      detail::read(n, "minibatch", c.inference.minibatch);
      detail::read(n, "lr", c.inference.lr);
      detail::read(n, "refit_in_ego_final", c.inference.refit_in_ego_final);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      check_keys(e, "eval", {"kl_samples", "grid_step", "sweep_steps", "cross_episodes",
                             "cross_seeds", "envs"});
      detail::read(e, "kl_samples", c.eval.kl_samples);
      detail::read(e, "grid_step", c.eval.grid_step);
      detail::read(e, "sweep_steps", c.eval.sweep_steps);
      detail::read(e, "cross_episodes", c.eval.cross_episodes);
      detail::read(e, "cross_seeds", c.eval.cross_seeds);
      detail::read(e, "envs", c.eval.envs);
    }
    if (j.contains("mixing")) {
      check_keys(j.at("mixing"), "mixing", {"idm_fraction", "warm_start"});
      detail::read(j.at("mixing"), "idm_fraction", c.idm_fraction);
      detail::read(j.at("mixing"), "warm_start", c.warm_start);
    }
    if (j.contains("preferences")) {
      const auto& p = j.at("preferences");
      check_keys(p, "preferences", {"meta", "ood"});
      if (p.contains("meta")) {
        c.meta_beta_lo = p.at("meta").at(0).get<double>();
        c.meta_beta_hi = p.at("meta").at(1).get<double>();
      }
      if (p.contains("ood")) {
        c.ood_beta_lo = p.at("ood").at(0).get<double>();
        c.ood_beta_hi = p.at("ood").at(1).get<double>();
      }
    }
    if (j.contains("idm")) {
      const auto& i = j.at("idm");
      check_keys(i, "idm", {"idm-conservative", "idm-aggressive"});
      if (i.contains("idm-conservative")) c.conservative = i.at("idm-conservative").get<idm::IdmParams>();
      if (i.contains("idm-aggressive")) c.aggressive = i.at("idm-aggressive").get<idm::IdmParams>();
    }
    if (j.contains("stage_overrides") && !j.at("stage_overrides").is_object()) {
      throw ConfigError("stage_overrides: expected an object");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

// Effective config of one stage: the base document with that stage's
// override patch applied.
inline Config for_stage(const nlohmann::json& document, const std::string& stage) {
  nlohmann::json base = document;
  nlohmann::json patch;
  if (base.contains("stage_overrides")) {
    const auto& o = base.at("stage_overrides");
    if (o.is_object() && o.contains(stage)) patch = o.at(stage);
    base.erase("stage_overrides");
  }
  if (!patch.is_null()) base.merge_patch(patch);
  return from_config_json(base);
}

}  // namespace gmrl::rl
