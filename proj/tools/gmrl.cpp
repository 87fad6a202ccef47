#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "gmrl/eval/suite.hpp"

namespace {

using namespace gmrl;
namespace fs = std::filesystem;

constexpr int kExitRuntime = 1;
constexpr int kExitUnknownCommand = 2;
constexpr int kExitInvalidConfig = 3;
constexpr int kExitMissingPrerequisite = 4;
constexpr int kExitTraceMismatch = 5;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<double> budget_scale;
  std::vector<std::string> overrides;
  std::string out;
  std::string runs;
  bool verbose = false;
  // train
  std::string stage;
  std::string from_manifest;
  // eval
  std::optional<std::int64_t> samples;
  std::optional<int> episodes;
  std::optional<int> seeds;
  std::vector<double> betas;
  bool traces = false;
  bool print = false;
  // replay
  std::string trace;
};

// Thrown for command-line problems that map to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path default_out_root() {
  const char* env = std::getenv("GMRL_OUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

nlohmann::json parse_value(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    return text;
  }
}

// Sets a dotted path such as "ppo.lr" in a JSON document.
void set_path(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not KEY.PATH=VALUE");
  }
  nlohmann::json* node = &doc;
  std::stringstream path(assignment.substr(0, eq));
  std::string key;
  std::vector<std::string> keys;
  while (std::getline(path, key, '.')) keys.push_back(key);
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override '" + assignment + "': not an object");
    node = &(*node)[keys[i]];
  }
  (*node)[keys.back()] = parse_value(assignment.substr(eq + 1));
}

void scale_budgets(nlohmann::json& budgets, double scale) {
  for (auto& [k, v] : budgets.items()) {
    if (!v.is_number()) throw ConfigError("budgets." + k + " must be a number");
    v = std::max<std::int64_t>(1, std::llround(v.get<double>() * scale));
  }
}

// Config document after flags: file (or defaults), --set overrides, then
// --seed, --workers and --budget-scale. Validates every stage's view.
nlohmann::json load_document(const Options& o) {
  nlohmann::json doc;
  try {
    if (!o.config.empty()) {
      doc = ad::read_json_file(o.config);
    } else {
      doc = rl::to_config_json(rl::Config{});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  if (!doc.is_object()) throw ConfigError("config: expected a JSON object");
  nlohmann::json overrides = doc.contains("stage_overrides") ? doc["stage_overrides"]
                                                             : nlohmann::json();
  doc.erase("stage_overrides");
  doc = rl::to_config_json(rl::from_config_json(doc));
  for (const auto& s : o.overrides) set_path(doc, s);
  if (o.seed) doc["seed"] = *o.seed;
  if (o.workers) doc["workers"] = *o.workers;
  if (o.budget_scale) {
    if (!(*o.budget_scale > 0.0)) throw ConfigError("--budget-scale must be positive");
    scale_budgets(doc["budgets"], *o.budget_scale);
    if (overrides.is_object()) {
      for (auto& [stage, patch] : overrides.items()) {
        if (patch.is_object() && patch.contains("budgets")) {
          scale_budgets(patch["budgets"], *o.budget_scale);
        }
      }
    }
  }
  if (!overrides.is_null()) doc["stage_overrides"] = overrides;
  rl::from_config_json(doc);
  for (const auto& s : rl::stages()) rl::for_stage(doc, s.name);
  return doc;
}

fs::path out_root(const Options& o) { return o.out.empty() ? default_out_root() : fs::path(o.out); }
fs::path runs_root(const Options& o) { return o.runs.empty() ? out_root(o) : fs::path(o.runs); }

int cmd_validate(const Options& o) {
  const auto doc = load_document(o);
  if (o.print) {
    std::cout << doc.dump(2) << "\n";
    return 0;
  }
  nlohmann::json hashes;
  for (const auto& s : rl::stages()) hashes[s.name] = rl::config_hash(rl::for_stage(doc, s.name));
  std::cout << nlohmann::json{{"valid", true}, {"config_hashes", hashes}}.dump() << "\n";
  return 0;
}

int cmd_train(const Options& o) {
  if (!rl::find_stage(o.stage)) throw UsageError("unknown stage '" + o.stage + "'");
  nlohmann::json doc;
  if (!o.from_manifest.empty()) {
    const auto m = ad::read_json_file(o.from_manifest);
    if (m.value("stage", "") != o.stage) {
      throw ConfigError("manifest " + o.from_manifest + " describes stage '" +
                        m.value("stage", "") + "'");
    }
    doc = m.at("effective_config");
    if (o.workers) doc["workers"] = *o.workers;
    rl::from_config_json(doc);
  } else {
    doc = load_document(o);
  }
  const auto r = rl::run_stage(o.stage, doc, {out_root(o), runs_root(o), o.verbose});
  std::cout << nlohmann::json{{"stage", o.stage},
                              {"dir", r.dir.string()},
                              {"iterations", r.iterations},
                              {"samples", r.samples},
                              {"env_steps", r.env_steps},
                              {"config_hash", r.config_hash},
                              {"wall_clock_seconds", r.seconds}}
                   .dump()
            << "\n";
  return 0;
}

std::vector<double> eval_betas(const Options& o, const rl::Config& c) {
  if (!o.betas.empty()) return o.betas;
  return eval::preference_grid(c.meta_beta_lo, c.meta_beta_hi, c.eval.grid_step);
}

int cmd_eval(const std::string& kind, const Options& o) {
  const auto start = std::chrono::steady_clock::now();
  const auto doc = load_document(o);
  const rl::Config c = rl::from_config_json(
      [&] {
        auto d = doc;
        d.erase("stage_overrides");
        return d;
      }());
  eval::RunArtifacts runs(runs_root(o));
  const fs::path dir = out_root(o) / ("eval-" + kind);
  nlohmann::json report = {{"kind", kind}, {"runs", runs.root().string()}};
  std::map<std::string, std::string> csv;
  if (kind == "kl") {
    const auto samples = o.samples.value_or(c.eval.kl_samples);
    const auto points = eval::kl_report(c, runs, samples, eval_betas(o, c));
    report["state_sampling"] = "rollouts of the evaluated policy against the frozen ego-initial";
    report["points"] = nlohmann::json::array();
    for (const auto& p : points) report["points"].push_back(eval::to_json(p));
    csv["kl.csv"] = eval::kl_csv(points);
  } else if (kind == "sweep") {
    const auto samples = o.samples.value_or(c.eval.sweep_steps);
    const auto points = eval::sweep_report(c, runs, samples, eval_betas(o, c));
    report["points"] = nlohmann::json::array();
    for (const auto& p : points) report["points"].push_back(eval::to_json(p));
    csv["sweep.csv"] = eval::sweep_csv(points);
  } else if (kind == "probe") {
    const auto points = eval::probe_report(c, runs, eval_betas(o, c));
    report["points"] = nlohmann::json::array();
    for (const auto& p : points) report["points"].push_back(eval::to_json(p));
    csv["probe.csv"] = eval::probe_csv(points);
  } else if (kind == "cross") {
    const int episodes = o.episodes.value_or(c.eval.cross_episodes);
    if (episodes < 1) throw ConfigError("--episodes must be positive");
    std::vector<std::uint64_t> seeds = c.eval.cross_seeds;
    if (o.seeds) {
      if (*o.seeds < 1) throw ConfigError("--seeds must be positive");
      seeds.clear();
      for (int k = 0; k < *o.seeds; ++k) seeds.push_back(std::uint64_t(k));
    }
    std::optional<fs::path> traces;
    if (o.traces) traces = dir / "traces";
    std::vector<std::string> skipped;
    const auto cells = eval::cross_report(c, runs, episodes, seeds, traces, &skipped);
    const auto cells_agg = eval::aggregate(cells);
    report["cells"] = nlohmann::json::array();
    for (const auto& cell : cells_agg) report["cells"].push_back(eval::to_json(cell));
    report["per_seed"] = nlohmann::json::array();
    for (const auto& cell : cells) report["per_seed"].push_back(eval::to_json(cell));
    report["skipped"] = skipped;
    csv["cross.csv"] = eval::cross_csv(cells_agg);
    csv["cross_per_seed.csv"] = eval::cross_csv(cells);
  } else {
    throw UsageError("unknown eval kind '" + kind + "'");
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  eval::write_eval_dir(dir, kind, c, runs, report, csv, seconds);
  std::cout << nlohmann::json{{"eval", kind}, {"dir", dir.string()}, {"wall_clock_seconds", seconds}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_replay(const Options& o) {
  std::ifstream in(o.trace);
  if (!in) throw std::runtime_error("cannot open trace " + o.trace);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  const auto r = sim::replay_trace(lines);
  std::cout << nlohmann::json{{"matched", r.matched},
                              {"steps", r.steps},
                              {"ego_flag", sim::to_string(r.ego_flag)},
                              {"first_mismatch_step", r.first_mismatch_step},
                              {"detail", r.detail}}
                   .dump()
            << "\n";
  if (!r.matched) {
    std::cerr << "error: trace-mismatch: " << r.detail << "\n";
    return kExitTraceMismatch;
  }
  return 0;
}

int fail(const char* error_class, const std::string& message, int code) {
  std::string line = message;
  std::replace(line.begin(), line.end(), '\n', ' ');
  std::cerr << "error: " << error_class << ": " << line << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Guided meta-policy training and evaluation for an unsignalized intersection"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config, "JSON config file (defaults when omitted)");
  app.add_option("--seed", o.seed, "Override the config seed");
  app.add_option("--out", o.out, "Output root (default: $GMRL_OUT_ROOT or ./runs)");
  app.add_option("--runs", o.runs, "Root holding prerequisite stages (default: --out)");
  app.add_option("--workers", o.workers, "Rollout worker threads");
  app.add_option("--budget-scale", o.budget_scale, "Multiply every training budget");
  app.add_option("--set", o.overrides, "Config override KEY.PATH=JSON_VALUE (repeatable)");
  app.add_flag("-v,--verbose", o.verbose, "Progress on stderr");

  auto* train = app.add_subcommand("train", "Run one training stage");
  train->add_option("stage", o.stage,
                    "ego-initial | guiding | meta | meta-wo-g | ego-final | ego-final-wo-g")
      ->required();
  train->add_option("--from-manifest", o.from_manifest,
                    "Rerun with the effective config of an existing manifest");

  auto* ev = app.add_subcommand("eval", "Evaluate trained stages");
  ev->require_subcommand(1);
  std::string eval_kind;
  for (const char* kind : {"kl", "sweep", "probe", "cross"}) {
    auto* sub = ev->add_subcommand(kind);
    sub->callback([&eval_kind, kind] { eval_kind = kind; });
    if (std::string(kind) != "probe" && std::string(kind) != "cross") {
      sub->add_option("--samples", o.samples, "Samples per preference point");
    }
    if (std::string(kind) != "cross") {
      sub->add_option("--betas", o.betas, "Preference points (default: the config grid)");
    }
    if (std::string(kind) == "cross") {
      sub->add_option("--episodes", o.episodes, "Episodes per cell and seed");
      sub->add_option("--seeds", o.seeds, "Use seeds 0..N-1");
      sub->add_flag("--traces", o.traces, "Archive every episode trace");
    }
  }

  auto* replay = app.add_subcommand("replay", "Re-simulate an episode trace");
  replay->add_option("trace", o.trace, "Trace file (JSON Lines)")->required();
  auto* validate = app.add_subcommand("validate-config", "Check a config file");
  validate->add_flag("--print", o.print, "Print the effective config document");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("unknown-command", e.what(), kExitUnknownCommand);
  }

  try {
    if (*train) return cmd_train(o);
    if (*ev) return cmd_eval(eval_kind, o);
    if (*replay) return cmd_replay(o);
    if (*validate) return cmd_validate(o);
    return fail("unknown-command", "no command given", kExitUnknownCommand);
  } catch (const UsageError& e) {
    return fail("unknown-command", e.what(), kExitUnknownCommand);
  } catch (const ConfigError& e) {
    return fail("invalid-config", e.what(), kExitInvalidConfig);
  } catch (const MissingPrerequisite& e) {
    return fail("missing-prerequisite", e.what(), kExitMissingPrerequisite);
  } catch (const TrainingDiverged& e) {
    return fail("training-diverged", e.what(), kExitRuntime);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), kExitRuntime);
  }
}
