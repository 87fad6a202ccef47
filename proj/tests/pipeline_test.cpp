#include <gtest/gtest.h>
#include <unistd.h>

#include <fstream>
#include <sstream>

#include "gmrl/rl/pipeline.hpp"

using namespace gmrl;
using namespace gmrl::rl;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// Default config with every budget at 1% and a short autoencoder fit.
nlohmann::json dry_run_config() {
  Config c;
  c.budgets.ego_initial /= 100;
  c.budgets.guiding_per_anchor /= 100;
  c.budgets.meta /= 100;
  c.budgets.ego_final /= 100;
  c.inference.pretrain_episodes = 8;
  c.inference.epochs = 2;
  c.seed = 17;
  return to_config_json(c);
}

fs::path temp_root(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() /
                     ("gmrl_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

class DryRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = temp_root("dry_run");
    StageOptions o{root_, root_, false};
    for (const char* s : {"ego-initial", "guiding", "meta", "ego-final"}) {
      run_stage(s, dry_run_config(), o);
    }
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }
  static fs::path root_;
};

fs::path DryRun::root_;

}  // namespace

TEST(Stages, RegistryAndSeeds) {
  ASSERT_EQ(stages().size(), 6u);
  EXPECT_EQ(find_stage("meta")->prerequisites,
            (std::vector<std::string>{"ego-initial", "guiding"}));
  EXPECT_EQ(find_stage("bogus"), nullptr);
  EXPECT_EQ(stage_seed(3, find_stage("meta")->seed_name),
            stage_seed(3, find_stage("meta-wo-g")->seed_name));
  EXPECT_NE(stage_seed(3, "meta"), stage_seed(4, "meta"));
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Stages, MissingPrerequisiteNamesTheStage) {
  const fs::path root = temp_root("missing");
  StageOptions o{root, root, false};
  try {
    run_stage("meta", dry_run_config(), o);
    FAIL() << "expected MissingPrerequisite";
  } catch (const MissingPrerequisite& e) {
    EXPECT_EQ(e.stage(), "ego-initial");
  }
  EXPECT_THROW(run_stage("nonsense", dry_run_config(), o), ConfigError);
  fs::remove_all(root);
}

TEST_F(DryRun, EmitsFourCheckpoints) {
  for (const char* s : {"ego-initial", "guiding", "meta", "ego-final"}) {
    const fs::path dir = root_ / s;
    EXPECT_TRUE(fs::exists(dir / kPolicyFile)) << s;
    const auto m = read_manifest(dir);
    EXPECT_EQ(m.at("stage"), s);
    EXPECT_EQ(m.at("seed"), 17);
    EXPECT_EQ(m.at("code_version"), kCodeVersion);
    EXPECT_EQ(m.at("config_hash"), config_hash(from_config_json(m.at("effective_config"))));
    EXPECT_GT(m.at("samples").get<int>(), 0);
  }
  EXPECT_TRUE(fs::exists(root_ / "ego-initial" / kInferenceFile));
  const auto guide = load_policy(root_ / "guiding" / kPolicyFile);
  EXPECT_EQ(guide->head_count(), 5u);
  EXPECT_EQ(load_policy(root_ / "meta" / kPolicyFile)->head_names(),
            std::vector<std::string>{"meta"});
}

TEST_F(DryRun, MetaWithoutGuidingNamesGuiding) {
  const fs::path other = temp_root("no_guiding");
  fs::create_directories(other);
  fs::copy(root_ / "ego-initial", other / "ego-initial", fs::copy_options::recursive);
  try {
    run_stage("meta", dry_run_config(), {other, other, false});
    FAIL() << "expected MissingPrerequisite";
  } catch (const MissingPrerequisite& e) {
    EXPECT_EQ(e.stage(), "guiding");
    EXPECT_NE(std::string(e.what()).find("guiding"), std::string::npos);
  }
  fs::remove_all(other);
}

TEST_F(DryRun, EgoFinalSeesBothEpisodeTypes) {
  const auto lines = lines_of(root_ / "ego-final" / kMetricsFile);
  ASSERT_GT(lines.size(), 1u);
  EXPECT_EQ(lines[0], metrics_header());
  int idm = 0, neural = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::vector<std::string> cells;
    std::stringstream ss(lines[i]);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    ASSERT_GE(cells.size(), 16u);
    idm += std::stoi(cells[14]);
    neural += std::stoi(cells[15]);
  }
  EXPECT_GT(idm, 0);
  EXPECT_GT(neural, 0);
}

TEST_F(DryRun, GuidingRecordsAreAllMatched) {
  const auto lines = lines_of(root_ / "guiding" / kMetricsFile);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::vector<std::string> cells;
    std::stringstream ss(lines[i]);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    EXPECT_EQ(cells[19], cells[20]) << "spawned vs matched in line " << i;
  }
}

TEST_F(DryRun, StageTracesReplay) {
  for (const char* s : {"ego-initial", "guiding", "meta", "ego-final"}) {
    const auto r = sim::replay_trace(lines_of(root_ / s / kTraceFile));
    EXPECT_TRUE(r.matched) << s << ": " << r.detail;
    EXPECT_GT(r.steps, 0);
  }
}

TEST_F(DryRun, RerunIsByteIdentical) {
  const fs::path other = temp_root("rerun");
  fs::create_directories(other);
  fs::copy(root_ / "ego-initial", other / "ego-initial", fs::copy_options::recursive);
  const auto doc = read_manifest(root_ / "guiding").at("effective_config");
  run_stage("guiding", doc, {other, other, false});
  for (const char* f : {kMetricsFile, kTraceFile, kPolicyFile}) {
    EXPECT_EQ(slurp(root_ / "guiding" / f), slurp(other / "guiding" / f)) << f;
  }
  fs::remove_all(other);
}

TEST_F(DryRun, EnsureStageReusesMatchingArtifacts) {
  const auto before = slurp(root_ / "meta" / kManifestFile);
  const auto r = ensure_stage("meta", dry_run_config(), {root_, root_, false});
  EXPECT_EQ(r.seconds, 0.0);
  EXPECT_EQ(slurp(root_ / "meta" / kManifestFile), before);
}

// Meta-stage training with reg weight 0 equals the ablation stage.
TEST_F(DryRun, ZeroRegWeightMetaEqualsAblation) {
  const fs::path other = temp_root("ablation");
  fs::create_directories(other);
  for (const char* s : {"ego-initial", "guiding"}) {
    fs::copy(root_ / s, other / s, fs::copy_options::recursive);
  }
  auto doc = dry_run_config();
  doc["budgets"]["meta"] = 3 * 8 * 64;
  doc["anchors"]["reg_weight"] = 0.0;
  run_stage("meta", doc, {other, other, false});
  run_stage("meta-wo-g", doc, {other, other, false});
  const auto a = ad::read_json_file(other / "meta" / kPolicyFile);
  const auto b = ad::read_json_file(other / "meta-wo-g" / kPolicyFile);
  EXPECT_EQ(read_manifest(other / "meta").at("iterations"), 3);
  EXPECT_EQ(a.at("params").dump(), b.at("params").dump());
  fs::remove_all(other);
}
