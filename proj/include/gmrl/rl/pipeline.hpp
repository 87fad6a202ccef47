#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gmrl/ad/checkpoint.hpp"
#include "gmrl/rl/trainer.hpp"
#include "gmrl/sim/trace.hpp"

#ifndef GMRL_CODE_VERSION
#define GMRL_CODE_VERSION "0.2.0"
#endif

namespace gmrl::rl {

namespace fs = std::filesystem;

inline constexpr const char* kCodeVersion = GMRL_CODE_VERSION;
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kPolicyFile = "policy.json";
inline constexpr const char* kInferenceFile = "inference.json";
inline constexpr const char* kTraceFile = "trace.jsonl";

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string config_hash(const Config& c) {
  return hex64(fnv1a(to_config_json(c).dump()));
}

// Shortest-ish fixed formatting for CSV cells; non-finite values are empty.
inline std::string fmt(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Training stages. "meta-wo-g" and "ego-final-wo-g" are the ablations
// without guidance; they reuse the seed streams of their guided twins.
struct StageInfo {
  std::string name;
  std::vector<std::string> prerequisites;
  std::string seed_name;
  bool ego = false;
};

inline const std::vector<StageInfo>& stages() {
  static const std::vector<StageInfo> s = {
      {"ego-initial", {}, "ego-initial", true},
      {"guiding", {"ego-initial"}, "guiding", false},
      {"meta", {"ego-initial", "guiding"}, "meta", false},
      {"meta-wo-g", {"ego-initial"}, "meta", false},
      {"ego-final", {"ego-initial", "meta"}, "ego-final", true},
      {"ego-final-wo-g", {"ego-initial", "meta-wo-g"}, "ego-final", true}};
  return s;
}

inline const StageInfo* find_stage(const std::string& name) {
  for (const auto& s : stages()) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

inline std::uint64_t stage_seed(std::uint64_t seed, const std::string& seed_name) {
  return Rng::mix(seed ^ fnv1a(seed_name));
}

inline std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t k) { return Rng::mix(seed + k); }

// ---------------------------------------------------------------------------
// Checkpoints.

inline nlohmann::json policy_metadata(const nets::PolicyNet<float>& net,
                                      const std::string& stage) {
  nlohmann::json heads = nlohmann::json::array();
  for (std::size_t k = 0; k < net.head_count(); ++k) {
    heads.push_back({{"name", net.head_spec(k).name}, {"uses_beta", net.head_spec(k).uses_beta}});
  }
  return {{"kind", "policy"},
          {"stage", stage},
          {"row_width", net.row_width()},
          {"network", net.config()},
          {"heads", heads}};
}

inline void save_policy(const nets::PolicyNet<float>& net, const std::string& stage,
                        const fs::path& path) {
  ad::save_checkpoint(net.store(), policy_metadata(net, stage), path);
}

inline std::unique_ptr<nets::PolicyNet<float>> load_policy(const fs::path& path) {
  const auto j = ad::read_json_file(path);
  const auto& m = j.at("metadata");
  if (m.value("kind", "") != "policy") {
    throw std::runtime_error(path.string() + " is not a policy checkpoint");
  }
  std::vector<nets::HeadSpec> heads;
  for (const auto& h : m.at("heads")) {
    heads.push_back({h.at("name").get<std::string>(), h.at("uses_beta").get<bool>()});
  }
  auto net = std::make_unique<nets::PolicyNet<float>>(
      m.at("row_width").get<std::size_t>(), m.at("network").get<nets::EncoderConfig>(), heads, 0);
  ad::load_checkpoint(net->store(), j);
  return net;
}

inline void save_inference(const nets::TrajectoryAutoencoder<float>& ae, const fs::path& path) {
  ad::save_checkpoint(ae.store(), {{"kind", "inference"}, {"network", ae.config()}}, path);
}

inline std::unique_ptr<nets::TrajectoryAutoencoder<float>> load_inference(const fs::path& path) {
  const auto j = ad::read_json_file(path);
  const auto& m = j.at("metadata");
  if (m.value("kind", "") != "inference") {
    throw std::runtime_error(path.string() + " is not an inference checkpoint");
  }
  auto ae = std::make_unique<nets::TrajectoryAutoencoder<float>>(
      m.at("network").get<nets::EncoderConfig>(), 0);
  ad::load_checkpoint(ae->store(), j);
  return ae;
}

// Clears Adam moments and the step counter so a warm-started network gets
// a fresh optimizer.
template <typename T>
void reset_optimizer(ad::ParamStore<T>& store) {
  for (auto& e : store.entries()) {
    const auto& v = e.param.value();
    e.first_moment = Tensor<T>(v.rows(), v.cols());
    e.second_moment = Tensor<T>(v.rows(), v.cols());
  }
  store.set_step(0);
}

// ---------------------------------------------------------------------------
// Episode traces.

// Buffers per-environment trace lines and hands back complete episodes.
class TraceRecorder {
 public:
  TraceRecorder(const sim::Intersection& env, int envs) : env_(env), lines_(envs) {}

  std::optional<std::vector<std::string>> add(int i, const EnvStep& e) {
    auto& buf = lines_.at(i);
    if (e.faulted) {
      buf.clear();
      return std::nullopt;
    }
    if (buf.empty()) buf.push_back(sim::trace_header(env_, e.episode_seed).dump());
    std::vector<sim::ActionIndex> actions;
    sim::StepOutcome o;
    for (const auto& a : e.agents) {
      actions.emplace_back(a.action);
      o.rewards.push_back(a.reward);
      o.flags.push_back(a.flag);
    }
    buf.push_back(sim::trace_step(e.pre_state, actions, o).dump());
    if (!e.episode_done) return std::nullopt;
    auto done = std::move(buf);
    buf.clear();
    return done;
  }

 private:
  const sim::Intersection& env_;
  std::vector<std::vector<std::string>> lines_;
};

inline void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& l : lines) out << l << "\n";
}

// Runs one episode with the given controllers and returns its trace.
inline std::vector<std::string> record_episode(const sim::Intersection& env, RunnerOptions o,
                                               std::uint64_t seed) {
  o.envs = 1;
  o.workers = 1;
  o.capture_states = true;
  o.record_ego_inputs = false;
  o.record_social_inputs = false;
  Runner runner(env, o, seed);
  TraceRecorder rec(env, 1);
  for (int attempt = 0; attempt < 100; ++attempt) {
    while (true) {
      const auto out = runner.step();
      if (auto t = rec.add(0, out[0])) return *t;
      if (out[0].faulted) break;
    }
  }
  throw std::runtime_error("record_episode: every attempt faulted");
}

// ---------------------------------------------------------------------------
// Metrics.

inline const char* metrics_header() {
  return "step,stage,iteration,policy_loss,value_loss,entropy,reg_loss,approx_kl,"
         "clip_fraction,grad_norm,lr,mean_return,mean_kl,episodes,idm_episodes,"
         "neural_episodes,ego_success,ego_collision,ego_timeout,spawned,matched,"
         "discarded,skipped";
}

// Mean KL(guide || behaviour policy) over records that carry a guide.
inline double mean_guide_kl(const RolloutBatch& b) {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : b.records) {
    if (!r.has_guide) continue;
    for (int j = 0; j < 3; ++j) {
      if (r.guide[j] > 0.0) sum += r.guide[j] * std::log(r.guide[j] / std::max(r.probs[j], 1e-30));
    }
    ++n;
  }
  return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

inline std::string metrics_line(std::int64_t samples, const std::string& stage, int iteration,
                                const RolloutBatch& b, const UpdateStats& u) {
  std::string s = std::to_string(samples) + "," + stage + "," + std::to_string(iteration);
  for (double v : {u.policy_loss, u.value_loss, u.entropy, u.reg_loss, u.approx_kl,
                   u.clip_fraction, u.grad_norm, u.lr, mean_of(b.returns), mean_guide_kl(b)}) {
    s += "," + fmt(v);
  }
  for (int v : {b.episodes, b.idm_episodes, b.neural_episodes, b.ego_goal, b.ego_fail,
                b.ego_timeout, b.spawned_vehicles, b.matched_vehicles, b.discarded_episodes,
                u.skipped}) {
    s += "," + std::to_string(v);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Stage execution.

struct StageOptions {
  fs::path out_root = "runs";   // stage outputs go to out_root/<stage>
  fs::path runs_root = "runs";  // where prerequisite stages are looked up
  bool verbose = false;
};

struct StageResult {
  fs::path dir;
  int iterations = 0;
  std::int64_t samples = 0;
  std::int64_t env_steps = 0;
  double seconds = 0.0;
  std::string config_hash;
};

inline bool stage_complete(const fs::path& dir, const StageInfo& info) {
  if (!fs::exists(dir / kManifestFile) || !fs::exists(dir / kPolicyFile)) return false;
  return !info.ego || fs::exists(dir / kInferenceFile);
}

inline fs::path require_stage(const fs::path& runs_root, const std::string& name) {
  const fs::path dir = runs_root / name;
  if (!stage_complete(dir, *find_stage(name))) {
    throw MissingPrerequisite(name, "no completed checkpoint in " + dir.string());
  }
  return dir;
}

namespace detail {

inline int iterations_for(std::int64_t budget, std::int64_t per_iteration) {
  return int(std::max<std::int64_t>(1, (budget + per_iteration - 1) / per_iteration));
}

inline std::int64_t updates_for(int iterations, std::int64_t records, const PpoSettings& p) {
  return std::int64_t(iterations) * p.epochs * ((records + p.minibatch - 1) / p.minibatch);
}

struct LoopSpec {
  std::string stage;
  Learner learner;
  int iterations;
  int steps;
  bool verbose;
};

inline std::int64_t ppo_loop(Runner& runner, PpoTrainer& trainer, const PpoSettings& ppo,
                             const LoopSpec& spec, std::ostream& metrics) {
  Collector collector(runner, spec.learner, ppo);
  std::int64_t samples = 0;
  for (int it = 0; it < spec.iterations; ++it) {
    auto batch = collector.collect(spec.steps);
    samples += std::int64_t(batch.records.size());
    const auto stats = trainer.update(batch);
    metrics << metrics_line(samples, spec.stage, it, batch, stats) << "\n";
    if (spec.verbose) {
      std::fprintf(stderr, "[%s] iter %d/%d samples %lld return %s kl %s entropy %.3f\n",
                   spec.stage.c_str(), it + 1, spec.iterations,
                   static_cast<long long>(samples), fmt(mean_of(batch.returns)).c_str(),
                   fmt(mean_guide_kl(batch)).c_str(), stats.entropy);
    }
  }
  metrics.flush();
  return samples;
}

// Fits the trajectory autoencoder on histories gathered with a random ego.
inline double pretrain_inference(const Config& c, const sim::Intersection& env,
                                 nets::TrajectoryAutoencoder<float>& ae,
                                 const nets::PolicyNet<float>* social, double neural_fraction,
                                 std::uint64_t seed, bool verbose) {
  RunnerOptions o;
  o.envs = c.rollout.ego_envs;
  o.workers = c.workers;
  o.ego = EgoControl::kRandom;
  o.ego_ae = &ae;
  o.social_net = social;
  o.neural_fraction = social ? neural_fraction : 0.0;
  Runner runner(env, o, sub_seed(seed, 1));
  std::vector<float> windows;
  std::vector<double> betas;
  int episodes = 0;
  while (episodes < c.inference.pretrain_episodes) {
    for (const auto& e : runner.step()) episodes += e.episode_done && !e.faulted;
    runner.full_histories(windows, betas);
  }
  const double loss = train_autoencoder(ae, windows, c.inference, sub_seed(seed, 2));
  if (verbose) {
    std::fprintf(stderr, "[inference] %zu windows, reconstruction loss %.5f\n",
                 windows.size() / ae.input_width(), loss);
  }
  return loss;
}

}  // namespace detail

inline sim::PreferenceDistribution meta_preferences(const Config& c) {
  return sim::PreferenceDistribution::uniform(c.meta_beta_lo, c.meta_beta_hi);
}

inline nlohmann::json read_manifest(const fs::path& stage_dir) {
  return ad::read_json_file(stage_dir / kManifestFile);
}

// Runs one training stage and writes its directory. `document` is the full
// config document (with stage overrides); the effective config is derived
// from it and recorded in the manifest.
inline StageResult run_stage(const std::string& stage, const nlohmann::json& document,
                             const StageOptions& opt) {
  const StageInfo* info = find_stage(stage);
  if (!info) throw ConfigError("unknown stage '" + stage + "'");
  const Config c = for_stage(document, stage);
  std::map<std::string, fs::path> prereq;
  for (const auto& p : info->prerequisites) prereq[p] = require_stage(opt.runs_root, p);

  const auto start = std::chrono::steady_clock::now();
  const fs::path dir = opt.out_root / stage;
  fs::create_directories(dir);
  fs::remove(dir / kManifestFile);
  std::ofstream metrics(dir / kMetricsFile);
  metrics << metrics_header() << "\n";

  const std::uint64_t seed = stage_seed(c.seed, info->seed_name);
  StageResult result;
  result.dir = dir;
  result.config_hash = config_hash(c);
  nlohmann::json outputs = {{"metrics", kMetricsFile}, {"policy", kPolicyFile},
                            {"trace", kTraceFile}};

  RunnerOptions trace_opts;
  std::unique_ptr<sim::Intersection> env;
  std::unique_ptr<nets::PolicyNet<float>> ego, social, guide;
  std::unique_ptr<nets::TrajectoryAutoencoder<float>> ae;

  if (info->ego) {
    const bool initial = stage == "ego-initial";
    const double neural_fraction = initial ? 0.0 : 1.0 - c.idm_fraction;
    if (initial || !c.warm_start) {
      ego = std::make_unique<nets::PolicyNet<float>>(nets::ego_row_width(c.network), c.network,
                                                     nets::ego_heads(), sub_seed(seed, 4));
      ae = std::make_unique<nets::TrajectoryAutoencoder<float>>(c.network, sub_seed(seed, 5));
    } else {
      ego = load_policy(prereq["ego-initial"] / kPolicyFile);
      ae = load_inference(prereq["ego-initial"] / kInferenceFile);
      reset_optimizer(ego->store());
      reset_optimizer(ae->store());
    }
    if (!initial) {
      social = load_policy(prereq[stage == "ego-final" ? "meta" : "meta-wo-g"] / kPolicyFile);
    }
    env = std::make_unique<sim::Intersection>(c.scenario, meta_preferences(c));
    if (initial || !c.warm_start || c.inference.refit_in_ego_final) {
      detail::pretrain_inference(c, *env, *ae, social.get(), neural_fraction, seed, opt.verbose);
    }

    RunnerOptions o;
    o.envs = c.rollout.ego_envs;
    o.workers = c.workers;
    o.ego_net = ego.get();
    o.ego_ae = ae.get();
    o.social_net = social.get();
    o.neural_fraction = neural_fraction;
    o.record_ego_inputs = true;
    o.conservative = c.conservative;
    o.aggressive = c.aggressive;
    const std::int64_t budget = initial ? c.budgets.ego_initial : c.budgets.ego_final;
    const std::int64_t per_iter = std::int64_t(c.rollout.ego_envs) * c.rollout.ego_steps;
    result.iterations = detail::iterations_for(budget, per_iter);
    Runner runner(*env, o, sub_seed(seed, 6));
    PpoTrainer trainer(*ego, c.ppo, detail::updates_for(result.iterations, per_iter, c.ppo),
                       sub_seed(seed, 7));
    result.samples = detail::ppo_loop(
        runner, trainer, c.ppo,
        {stage, Learner::kEgo, result.iterations, c.rollout.ego_steps, opt.verbose}, metrics);
    result.env_steps = std::int64_t(result.iterations) * per_iter;
    save_policy(*ego, stage, dir / kPolicyFile);
    save_inference(*ae, dir / kInferenceFile);
    outputs["inference"] = kInferenceFile;
    trace_opts = o;
  } else {
    ego = load_policy(prereq["ego-initial"] / kPolicyFile);
    ae = load_inference(prereq["ego-initial"] / kInferenceFile);
    const bool guiding = stage == "guiding";
    const bool guided = stage == "meta";
    const auto heads = guiding ? nets::guide_heads(c.anchors.anchors.size()) : nets::meta_heads();
    social = std::make_unique<nets::PolicyNet<float>>(nets::kSocialRowWidth, c.network, heads,
                                                      sub_seed(seed, 4));
    if (guided) guide = load_policy(prereq["guiding"] / kPolicyFile);
    if (guide && guide->head_count() != c.anchors.anchors.size()) {
      throw ConfigError("guiding checkpoint has " + std::to_string(guide->head_count()) +
                        " heads but the config lists " +
                        std::to_string(c.anchors.anchors.size()) + " anchors");
    }
    env = std::make_unique<sim::Intersection>(
        c.scenario, guiding ? sim::PreferenceDistribution::discrete(c.anchors.anchors)
                            : meta_preferences(c));
    RunnerOptions o;
    o.envs = c.rollout.social_envs;
    o.workers = c.workers;
    o.ego_net = ego.get();
    o.ego_ae = ae.get();
    o.social_net = social.get();
    o.head_mode = guiding ? HeadMode::kByAnchor : HeadMode::kSingle;
    o.guide_net = guide.get();
    o.anchors = &c.anchors;
    o.neural_fraction = 1.0;
    o.record_social_inputs = true;
    const std::int64_t budget =
        guiding ? c.budgets.guiding_per_anchor * std::int64_t(c.anchors.anchors.size())
                : c.budgets.meta;
    // Budgets count environment steps; each step yields one record per
    // social vehicle.
    const std::int64_t steps_per_iter =
        std::int64_t(c.rollout.social_envs) * c.rollout.social_steps;
    const std::int64_t records = steps_per_iter * c.scenario.n_social();
    if (records == 0) throw ConfigError("social stages need at least one social vehicle");
    result.iterations = detail::iterations_for(budget, steps_per_iter);
    Runner runner(*env, o, sub_seed(seed, 6));
    PpoTrainer trainer(*social, c.ppo, detail::updates_for(result.iterations, records, c.ppo),
                       sub_seed(seed, 7), guided, guided ? c.anchors.reg_weight : 0.0, guiding);
    result.samples = detail::ppo_loop(
        runner, trainer, c.ppo,
        {stage, Learner::kSocial, result.iterations, c.rollout.social_steps, opt.verbose},
        metrics);
    result.env_steps = std::int64_t(result.iterations) * steps_per_iter;
    save_policy(*social, stage, dir / kPolicyFile);
    trace_opts = o;
  }
  metrics.close();
  write_lines(dir / kTraceFile, record_episode(*env, trace_opts, sub_seed(seed, 8)));

  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  nlohmann::json prereq_json = nlohmann::json::object();
  for (const auto& [name, path] : prereq) {
    prereq_json[name] = {{"path", path.string()},
                         {"config_hash", read_manifest(path).value("config_hash", "")}};
  }
  nlohmann::json manifest = {{"stage", stage},
                             {"seed", c.seed},
                             {"stage_seed", seed},
                             {"config_hash", result.config_hash},
                             {"code_version", kCodeVersion},
                             {"outputs", outputs},
                             {"prerequisites", prereq_json},
                             {"iterations", result.iterations},
                             {"samples", result.samples},
                             {"env_steps", result.env_steps},
                             {"wall_clock_seconds", result.seconds},
                             {"effective_config", to_config_json(c)}};
  std::ofstream(dir / kManifestFile) << manifest.dump(2) << "\n";
  return result;
}

// Reuses a completed stage whose manifest matches the effective config, the
// code version and the current prerequisite manifests; otherwise runs it.
// Prerequisites are ensured first, under the same root.
inline StageResult ensure_stage(const std::string& stage, const nlohmann::json& document,
                                const StageOptions& opt) {
  const StageInfo* info = find_stage(stage);
  if (!info) throw ConfigError("unknown stage '" + stage + "'");
  StageOptions inner = opt;
  inner.runs_root = opt.out_root;
  std::map<std::string, std::string> prereq_hashes;
  for (const auto& p : info->prerequisites) {
    prereq_hashes[p] = ensure_stage(p, document, inner).config_hash;
  }
  const fs::path dir = opt.out_root / stage;
  const std::string hash = config_hash(for_stage(document, stage));
  if (stage_complete(dir, *info)) {
    const auto m = read_manifest(dir);
    bool fresh = m.value("config_hash", "") == hash && m.value("code_version", "") == kCodeVersion;
    for (const auto& [p, h] : prereq_hashes) {
      const auto& recorded = m.value("prerequisites", nlohmann::json::object());
      fresh = fresh && recorded.contains(p) && recorded[p].value("config_hash", "") == h;
    }
    if (fresh) {
      StageResult r;
      r.dir = dir;
      r.iterations = m.value("iterations", 0);
      r.samples = m.value("samples", std::int64_t(0));
      r.config_hash = hash;
      return r;
    }
  }
  return run_stage(stage, document, inner);
}

}  // namespace gmrl::rl
