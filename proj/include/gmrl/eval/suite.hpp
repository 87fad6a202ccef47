#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "gmrl/eval/harness.hpp"

namespace gmrl::eval {

inline constexpr const char* kGuidedMeta = "meta";
inline constexpr const char* kAblationMeta = "meta-wo-g";

// Checkpoints of a run directory, loaded on demand.
class RunArtifacts {
 public:
  explicit RunArtifacts(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const { return root_; }

  bool has(const std::string& stage) const {
    const auto* info = rl::find_stage(stage);
    return info && rl::stage_complete(root_ / stage, *info);
  }

  const nets::PolicyNet<float>& policy(const std::string& stage) {
    auto& p = policies_[stage];
    if (!p) p = rl::load_policy(rl::require_stage(root_, stage) / rl::kPolicyFile);
    return *p;
  }

  const nets::TrajectoryAutoencoder<float>& inference(const std::string& stage) {
    auto& p = inferences_[stage];
    if (!p) p = rl::load_inference(rl::require_stage(root_, stage) / rl::kInferenceFile);
    return *p;
  }

  EgoPolicy ego(const std::string& stage) {
    EgoPolicy e;
    e.name = stage;
    e.net = &policy(stage);
    e.ae = &inference(stage);
    if (stage == "ego-final") {
      e.trained_against = {"idm", "meta-rl"};
    } else if (stage == "ego-final-wo-g") {
      e.trained_against = {"idm", "meta-rl-wo-g"};
    } else {
      e.trained_against = {"idm"};
    }
    return e;
  }

  std::string config_hash(const std::string& stage) const {
    return rl::read_manifest(root_ / stage).value("config_hash", "");
  }

 private:
  fs::path root_;
  std::map<std::string, std::unique_ptr<nets::PolicyNet<float>>> policies_;
  std::map<std::string, std::unique_ptr<nets::TrajectoryAutoencoder<float>>> inferences_;
};

// Social policies to evaluate: the guided meta-policy and the ablation,
// whichever exist. At least one is required.
inline std::vector<std::string> meta_policies(RunArtifacts& runs) {
  std::vector<std::string> out;
  for (const char* s : {kGuidedMeta, kAblationMeta}) {
    if (runs.has(s)) out.push_back(s);
  }
  if (out.empty()) rl::require_stage(runs.root(), kGuidedMeta);
  return out;
}

inline std::uint64_t eval_seed(const Config& c, const std::string& kind, std::uint64_t k) {
  return rl::sub_seed(rl::stage_seed(c.seed, "eval-" + kind), k);
}

inline std::vector<KlPoint> kl_report(const Config& c, RunArtifacts& runs,
                                      std::int64_t samples, const std::vector<double>& betas) {
  const auto policies = meta_policies(runs);
  const auto& guide = runs.policy("guiding");
  const auto ego = runs.ego("ego-initial");
  std::vector<KlPoint> out;
  for (const auto& p : policies) {
    for (std::size_t k = 0; k < betas.size(); ++k) {
      out.push_back(estimate_kl(c, p, runs.policy(p), HeadMode::kSingle, guide, ego, betas[k],
                                samples, eval_seed(c, "kl", k)));
    }
  }
  return out;
}

inline std::vector<SweepPoint> sweep_report(const Config& c, RunArtifacts& runs,
                                            std::int64_t samples,
                                            const std::vector<double>& betas) {
  const auto policies = meta_policies(runs);
  const auto ego = runs.ego("ego-initial");
  std::vector<SweepPoint> out;
  for (const auto& p : policies) {
    for (std::size_t k = 0; k < betas.size(); ++k) {
      out.push_back(
          sweep_point(c, p, runs.policy(p), ego, betas[k], samples, eval_seed(c, "sweep", k)));
    }
  }
  return out;
}

// Guiding heads at their own anchors, then every meta-policy over `betas`.
inline std::vector<ProbePoint> probe_report(const Config& c, RunArtifacts& runs,
                                            const std::vector<double>& betas) {
  sim::Intersection env(c.scenario, sim::PreferenceDistribution::constant(0.0));
  std::vector<ProbePoint> out;
  const auto& guide = runs.policy("guiding");
  for (std::size_t k = 0; k < guide.head_count() && k < c.anchors.anchors.size(); ++k) {
    out.push_back(probe_action(env, "guiding", guide, k, c.anchors.anchors[k]));
  }
  for (const char* p : {kGuidedMeta, kAblationMeta}) {
    if (!runs.has(p)) continue;
    for (double b : betas) out.push_back(probe_action(env, p, runs.policy(p), 0, b));
  }
  return out;
}

struct CrossPlan {
  std::vector<std::string> egos;
  std::vector<SocialFamily> families;
  std::vector<std::string> skipped;
};

// Ego policies {ego-initial, ego-final, ego-final-wo-g} against families
// {idm, meta-rl, meta-rl-wo-g, meta-rl-u33}; missing optional checkpoints
// are skipped and listed.
inline CrossPlan cross_plan(const Config& c, RunArtifacts& runs) {
  CrossPlan plan;
  rl::require_stage(runs.root(), "ego-initial");
  rl::require_stage(runs.root(), kGuidedMeta);
  for (const char* e : {"ego-initial", "ego-final", "ego-final-wo-g"}) {
    (runs.has(e) ? plan.egos : plan.skipped).push_back(e);
  }
  const auto meta = sim::PreferenceDistribution::uniform(c.meta_beta_lo, c.meta_beta_hi);
  const auto ood = sim::PreferenceDistribution::uniform(c.ood_beta_lo, c.ood_beta_hi);
  plan.families.push_back({"idm", nullptr, meta});
  plan.families.push_back({"meta-rl", &runs.policy(kGuidedMeta), meta});
  if (runs.has(kAblationMeta)) {
    plan.families.push_back({"meta-rl-wo-g", &runs.policy(kAblationMeta), meta});
  } else {
    plan.skipped.push_back("meta-rl-wo-g");
  }
  plan.families.push_back({"meta-rl-u33", &runs.policy(kGuidedMeta), ood});
  return plan;
}

// Per-seed cells in (ego, family, seed) order.
inline std::vector<CrossCell> cross_report(const Config& c, RunArtifacts& runs, int episodes,
                                           const std::vector<std::uint64_t>& seeds,
                                           const std::optional<fs::path>& trace_root,
                                           std::vector<std::string>* skipped = nullptr) {
  const auto plan = cross_plan(c, runs);
  if (skipped) *skipped = plan.skipped;
  std::vector<CrossCell> out;
  for (const auto& e : plan.egos) {
    const auto ego = runs.ego(e);
    for (const auto& f : plan.families) {
      for (auto seed : seeds) {
        std::optional<fs::path> dir;
        if (trace_root) dir = *trace_root / e / f.name / ("seed" + std::to_string(seed));
        out.push_back(cross_cell(c, ego, f, episodes, eval_seed(c, "cross", seed), dir));
        out.back().seeds = {seed};
      }
    }
  }
  return out;
}

// Writes report.json, the CSV files and the manifest of one evaluation.
inline void write_eval_dir(const fs::path& dir, const std::string& kind, const Config& c,
                           const RunArtifacts& runs, const nlohmann::json& report,
                           const std::map<std::string, std::string>& csv, double seconds) {
  fs::create_directories(dir);
  fs::remove(dir / rl::kManifestFile);
  std::ofstream(dir / "report.json") << report.dump(2) << "\n";
  nlohmann::json outputs = {{"report", "report.json"}};
  for (const auto& [name, text] : csv) {
    std::ofstream(dir / name) << text;
    outputs[name] = name;
  }
  nlohmann::json checkpoints = nlohmann::json::object();
  for (const auto& s : rl::stages()) {
    if (runs.has(s.name)) {
      checkpoints[s.name] = {{"path", (runs.root() / s.name).string()},
                             {"config_hash", runs.config_hash(s.name)}};
    }
  }
  const nlohmann::json manifest = {{"stage", "eval-" + kind},
                                   {"seed", c.seed},
                                   {"config_hash", rl::config_hash(c)},
                                   {"code_version", rl::kCodeVersion},
                                   {"outputs", outputs},
                                   {"checkpoints", checkpoints},
                                   {"wall_clock_seconds", seconds},
                                   {"effective_config", rl::to_config_json(c)}};
  std::ofstream(dir / rl::kManifestFile) << manifest.dump(2) << "\n";
}

}  // namespace gmrl::eval
