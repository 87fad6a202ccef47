#include <gtest/gtest.h>
#include <unistd.h>

#include <fstream>

#include "gmrl/eval/harness.hpp"

using namespace gmrl;
using namespace gmrl::eval;

namespace {

nets::EncoderConfig small_network() {
  nets::EncoderConfig c;
  c.embed = 8;
  c.pooled = 8;
  c.hidden = 8;
  c.head_hidden = 8;
  return c;
}

class Harness : public ::testing::Test {
 protected:
  Harness() {
    cfg.network = small_network();
    cfg.eval.envs = 4;
  }
  rl::Config cfg;
  nets::PolicyNet<float> ego_net{nets::ego_row_width(small_network()), small_network(),
                                 nets::ego_heads(), 1};
  nets::TrajectoryAutoencoder<float> ae{small_network(), 2};
  nets::PolicyNet<float> guide{nets::kSocialRowWidth, small_network(), nets::guide_heads(5), 3};
  nets::PolicyNet<float> meta{nets::kSocialRowWidth, small_network(), nets::meta_heads(), 4};
  EgoPolicy ego{"ego-initial", &ego_net, &ae, {"idm"}};
};

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Grid, HalfStepOverMetaRangeHasNinePoints) {
  const auto g = preference_grid(-1.0, 3.0, 0.5);
  ASSERT_EQ(g.size(), 9u);
  EXPECT_EQ(g.front(), -1.0);
  EXPECT_EQ(g.back(), 3.0);
  EXPECT_EQ(g[2], 0.0);
}

TEST(Summary, ClusteredStandardError) {
  // Two clusters {1,1} and {3,3}: mean 2, residual sums -2 and 2.
  const auto s = summarize({1, 1, 3, 3}, {0, 0, 1, 1});
  EXPECT_DOUBLE_EQ(s.mean, 2.0);
  EXPECT_DOUBLE_EQ(s.stderr_, std::sqrt(8.0 * 2.0) / 4.0);
  // Singleton clusters give the usual sqrt(n/(n-1)) * sd / sqrt(n).
  const auto t = summarize({1, 2, 3, 4}, {0, 1, 2, 3});
  EXPECT_NEAR(t.stderr_, std::sqrt(5.0 / 3.0) / 2.0, 1e-12);
}

TEST_F(Harness, SelfKlIsZero) {
  const auto p = estimate_kl(cfg, "guide", guide, HeadMode::kByAnchor, guide, ego, 1.0, 1200, 5);
  EXPECT_LT(p.mean, 1e-6);
  EXPECT_EQ(p.samples, 1200);
  EXPECT_FALSE(p.low_sample_warning);
  EXPECT_EQ(p.anchor, 1.0);
}

TEST_F(Harness, KlIsNonNegativeAndWarnsOnFewSamples) {
  const auto p = estimate_kl(cfg, "meta", meta, HeadMode::kSingle, guide, ego, -0.5, 300, 5);
  EXPECT_GT(p.mean, 0.0);
  EXPECT_GE(p.stderr_, 0.0);
  EXPECT_TRUE(p.low_sample_warning);
  EXPECT_EQ(p.anchor, -1.0);
  const auto q = estimate_kl(cfg, "meta", meta, HeadMode::kSingle, guide, ego, -0.5, 300, 5);
  EXPECT_EQ(p.mean, q.mean);
}

TEST_F(Harness, SweepIsDeterministic) {
  const auto a = sweep_point(cfg, "meta", meta, ego, -1.0, 2000, 9);
  const auto b = sweep_point(cfg, "meta", meta, ego, -1.0, 2000, 9);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.stderr_, b.stderr_);
  EXPECT_EQ(a.samples, 2000);
  EXPECT_GT(a.stderr_, 0.0);
}

// At beta = 0 the final reward is the base reward; every sample is one of
// the base reward values so the mean lies in their range.
TEST_F(Harness, SweepAtZeroIsBaseReward) {
  const auto a = sweep_point(cfg, "meta", meta, ego, 0.0, 3000, 9);
  EXPECT_GE(a.mean, cfg.scenario.r_fail);
  EXPECT_LE(a.mean, cfg.scenario.r_goal);
}

TEST_F(Harness, ProbeStatesAreCollisionFree) {
  sim::Intersection env(cfg.scenario, sim::PreferenceDistribution::constant(0.0));
  for (int k = 0; k <= kProbeWarmupFrames; ++k) {
    const auto s = probe_state(env, 0.0, k);
    for (auto f : env.membership(s)) EXPECT_EQ(f, sim::AgentFlag::kRunning) << k;
  }
  const auto s = probe_state(env, 0.0, kProbeWarmupFrames);
  EXPECT_NEAR(s.ego.position_x, 0.0, 1e-12);
  EXPECT_NEAR(s.ego.position_y, cfg.scenario.lane_width / 2 - cfg.scenario.turn_radius, 1e-12);
  EXPECT_GT(s.social[0].state.position_x, 0.0);
  EXPECT_LT(s.social[0].state.velocity_x, 0.0);
}

TEST_F(Harness, ProbeOutputsAreDesiredSpeeds) {
  sim::Intersection env(cfg.scenario, sim::PreferenceDistribution::constant(0.0));
  for (double beta : preference_grid(-1.0, 3.0, 0.5)) {
    const auto p = probe_action(env, "meta", meta, 0, beta);
    EXPECT_TRUE(p.desired_speed == 0.0 || p.desired_speed == 0.5 || p.desired_speed == 3.0);
    EXPECT_EQ(p.desired_speed, sim::ActionIndex::kDesiredSpeeds[p.action]);
    EXPECT_EQ(p.head, "meta");
  }
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(probe_action(env, "guiding", guide, k, cfg.anchors.anchors[k]).head,
              nets::guide_head_name(k));
  }
}

// Counting oracle: outcomes recounted from the emitted traces by replay
// match the cell, and the rates partition the episodes.
TEST_F(Harness, CrossCellCountsMatchReplayedTraces) {
  const fs::path dir = fs::temp_directory_path() / ("gmrl_cross_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  const SocialFamily idm{"idm", nullptr, sim::PreferenceDistribution::uniform(-1, 3)};
  const SocialFamily ood{"meta-rl-u33", &meta, sim::PreferenceDistribution::uniform(-3, 3)};
  for (const auto& fam : {idm, ood}) {
    const auto cell = cross_cell(cfg, ego, fam, 10, 1, dir / fam.name);
    EXPECT_EQ(cell.episodes, 10);
    EXPECT_EQ(cell.success + cell.collision + cell.timeout, 10);
    EXPECT_EQ(cell.success_rate() + cell.collision_rate() + cell.timeout_rate(), 1.0);
    EXPECT_EQ(cell.ood, fam.name != "idm");
    EXPECT_EQ(cell.episode_seeds.size(), 10u);
    int goal = 0, fail = 0, timeout = 0;
    for (int e = 0; e < 10; ++e) {
      const auto r = sim::replay_trace(lines_of(dir / fam.name / ("episode" + std::to_string(e) + ".jsonl")));
      ASSERT_TRUE(r.matched) << r.detail;
      if (r.ego_flag == sim::AgentFlag::kGoal) ++goal;
      else if (r.ego_flag == sim::AgentFlag::kFail) ++fail;
      else ++timeout;
    }
    EXPECT_EQ(goal, cell.success);
    EXPECT_EQ(fail, cell.collision);
    EXPECT_EQ(timeout, cell.timeout);
  }
  fs::remove_all(dir);
}

TEST_F(Harness, CrossCellSeedsAreSharedAcrossEgoPolicies) {
  nets::PolicyNet<float> other(nets::ego_row_width(small_network()), small_network(),
                               nets::ego_heads(), 99);
  EgoPolicy ego2{"ego-final", &other, &ae, {"idm", "meta-rl"}};
  const SocialFamily idm{"idm", nullptr, sim::PreferenceDistribution::uniform(-1, 3)};
  const auto a = cross_cell(cfg, ego, idm, 8, 2, std::nullopt);
  const auto b = cross_cell(cfg, ego2, idm, 8, 2, std::nullopt);
  auto sa = a.episode_seeds, sb = b.episode_seeds;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  EXPECT_EQ(sa, sb);
}

TEST(Report, CsvRowsPerCell) {
  CrossCell c;
  c.ego = "ego-final";
  c.family = "idm";
  c.episodes = 4;
  c.success = 1;
  c.collision = 2;
  c.timeout = 1;
  c.seeds = {0};
  auto d = c;
  d.seeds = {1};
  d.success = 2;
  d.timeout = 0;
  const auto csv = cross_csv({c, d});
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_NE(csv.find("ego-final,idm,0,4,1,2,1,0.25,0.5,0.25,0"), std::string::npos);
  EXPECT_EQ(to_json(c).at("timeout_rate"), 0.25);
  const auto agg = aggregate({c, d});
  ASSERT_EQ(agg.size(), 1u);
  EXPECT_EQ(agg[0].episodes, 8);
  EXPECT_EQ(agg[0].success, 3);
  EXPECT_NE(cross_csv(agg).find("ego-final,idm,0;1,8,3,4,1,"), std::string::npos);
}
