#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "gmrl/nets/networks.hpp"
#include "gmrl/sim/intersection.hpp"
#include "support/gradcheck.hpp"

using namespace gmrl;
using namespace gmrl::nets;
using ad::Tensor;
using ad::Var;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.embed = 8;
  c.pooled = 6;
  c.hidden = 7;
  c.head_hidden = 5;
  c.latent = 3;
  c.history = 4;
  c.traj_hidden = 5;
  return c;
}

std::vector<sim::Observation> random_observations(int count, std::uint64_t seed,
                                                  bool ego_view) {
  sim::Intersection env(sim::ScenarioConfig{},
                        sim::PreferenceDistribution::uniform(-1.0, 3.0));
  Rng rng(seed);
  std::vector<sim::Observation> out;
  auto s = env.spawn(seed);
  while (int(out.size()) < count) {
    std::vector<sim::ActionIndex> a;
    for (int i = 0; i < s.n_agents(); ++i) a.emplace_back(int(rng.below(3)));
    const auto step = env.step(s, a);
    s = step.episode_done ? env.spawn(rng.next_u64()) : step.next_state;
    out.push_back(env.observe(s, ego_view ? 0 : 1 + int(rng.below(s.social.size()))));
  }
  return out;
}

SetBatch social_batch(const std::vector<sim::Observation>& obs) {
  SetBatch b(kSocialRowWidth);
  for (const auto& o : obs) b.append(social_rows(o), o.viewer);
  return b;
}

std::vector<float> random_latents(std::size_t rows, std::size_t dim, Rng& rng) {
  std::vector<float> out(rows * dim);
  for (auto& v : out) v = float(rng.uniform(-1.0, 1.0));
  return out;
}

template <typename T>
Tensor<T> random_state(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor<T> t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = T(rng.uniform(-0.8, 0.8));
  return t;
}

// Swaps rows a and b (not the viewer) of a single-set batch.
SetBatch swap_rows(const SetBatch& in, int a, int b) {
  SetBatch out = in;
  for (std::size_t k = 0; k < in.width; ++k) {
    std::swap(out.rows[a * in.width + k], out.rows[b * in.width + k]);
  }
  return out;
}

// Scalar loss that touches every output of a head: a weighted sum of
// log-probabilities plus a squared value term.
template <typename T>
Var<T> head_loss(const HeadOutput<T>& out, const Tensor<T>& weights) {
  const Var<T> logp = ad::log_softmax_rows(out.logits);
  const Var<T> policy_term = ad::sum_all(ad::mul(logp, Var<T>::constant(weights)));
  return ad::add(policy_term, ad::mean_all(ad::square(out.value)));
}

}  // namespace

TEST(Encoder, SwappingSocialRowsGivesIdenticalOutput) {
  PolicyNet<float> net(kSocialRowWidth, EncoderConfig{}, meta_heads(), 11);
  Rng rng(1);
  const auto obs = random_observations(20, 4, false);
  for (const auto& o : obs) {
    SetBatch b = social_batch({o});
    std::vector<int> others;
    for (int r = 1; r < int(o.rows.size()); ++r) {
      if (r != o.viewer) others.push_back(r);
    }
    const int a = others[rng.below(others.size())];
    const int c = others[rng.below(others.size())];
    const auto h = random_state<float>(1, net.hidden_width(), rng);
    const auto beta = PolicyNet<float>::beta_column({0.5});
    const auto x = net.encode(b, h);
    const auto y = net.encode(swap_rows(b, a, c), h);
    EXPECT_EQ(x.hidden.value(), y.hidden.value());
    EXPECT_EQ(net.head(0, x.hidden, beta).logits.value(),
              net.head(0, y.hidden, beta).logits.value());
    // Swapping the ego row with a social row is also a permutation.
    const auto z = net.encode(swap_rows(b, 0, a), h);
    EXPECT_EQ(x.hidden.value(), z.hidden.value());
  }
}

TEST(Encoder, SingleRowPoolsToItsOwnEmbedding) {
  PolicyNet<float> net(kSocialRowWidth, EncoderConfig{}, meta_heads(), 3);
  SetBatch b(kSocialRowWidth);
  const std::vector<float> row{0.1f, -0.2f, 0.9f, 0.0f, 0.0f, 0.0f, 0.0f, 1.5f};
  b.append(row, 0);
  const auto out = net.encode(b, Tensor<float>(1, net.hidden_width()));
  EXPECT_EQ(out.pooled.value(), out.own.value());
}

TEST(Encoder, RecurrentStateEvolvesOnRepeatedObservation) {
  PolicyNet<float> net(kSocialRowWidth, EncoderConfig{}, meta_heads(), 5);
  const auto obs = random_observations(1, 9, false);
  const SetBatch b = social_batch(obs);
  const auto first = net.encode(b, Tensor<float>(1, net.hidden_width()));
  const auto second = net.encode(b, first.hidden.value());
  EXPECT_EQ(first.pooled.value(), second.pooled.value());
  EXPECT_NE(first.hidden.value(), second.hidden.value());
}

TEST(Encoder, BatchedEvaluationMatchesPerSetEvaluation) {
  PolicyNet<float> net(kSocialRowWidth, EncoderConfig{}, meta_heads(), 5);
  Rng rng(8);
  const auto obs = random_observations(9, 2, false);
  const auto h = random_state<float>(obs.size(), net.hidden_width(), rng);
  const auto batched = net.encode(social_batch(obs), h);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    Tensor<float> hi(1, net.hidden_width());
    for (std::size_t k = 0; k < hi.size(); ++k) hi[k] = h(i, k);
    const auto single = net.encode(social_batch({obs[i]}), hi);
    for (std::size_t k = 0; k < net.hidden_width(); ++k) {
      EXPECT_EQ(single.hidden.value()(0, k), batched.hidden.value()(i, k));
    }
  }
}

TEST(Heads, ProbabilitiesAreNormalised) {
  PolicyNet<float> meta(kSocialRowWidth, EncoderConfig{}, meta_heads(), 1);
  PolicyNet<float> guide(kSocialRowWidth, EncoderConfig{}, guide_heads(5), 2);
  Rng rng(3);
  const auto obs = random_observations(64, 6, false);
  const auto b = social_batch(obs);
  std::vector<double> betas;
  for (std::size_t i = 0; i < obs.size(); ++i) betas.push_back(rng.uniform(-3.0, 3.0));
  const auto beta = PolicyNet<float>::beta_column(betas);
  auto check = [](const Var<float>& logits) {
    const auto p = ad::softmax_rows(logits).value();
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < p.cols(); ++j) {
        EXPECT_GE(p(i, j), 0.0f);
        sum += p(i, j);
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  };
  const auto hm = meta.encode(b, random_state<float>(obs.size(), 64, rng));
  check(meta.head(0, hm.hidden, beta).logits);
  const auto hg = guide.encode(b, random_state<float>(obs.size(), 64, rng));
  for (std::size_t k = 0; k < guide.head_count(); ++k) {
    check(guide.head(k, hg.hidden, Var<float>()).logits);
  }
}

TEST(Heads, MetaHeadIsContinuousInPreference) {
  PolicyNet<double> net(kSocialRowWidth, EncoderConfig{}, meta_heads(), 4);
  Rng rng(2);
  const auto obs = random_observations(16, 1, false);
  const auto enc = net.encode(social_batch(obs), random_state<double>(obs.size(), 64, rng));
  for (double beta : {-1.0, 0.0, 0.73, 3.0}) {
    const auto a = ad::softmax_rows(
        net.head(0, enc.hidden, PolicyNet<double>::beta_column(std::vector<double>(obs.size(), beta)))
            .logits).value();
    const auto b = ad::softmax_rows(
        net.head(0, enc.hidden,
                 PolicyNet<double>::beta_column(std::vector<double>(obs.size(), beta + 1e-9)))
            .logits).value();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LT(std::abs(a[i] - b[i]), 1e-6);
  }
}

TEST(Heads, BackboneSizeDoesNotDependOnHeadCount) {
  PolicyNet<float> one(kSocialRowWidth, EncoderConfig{}, guide_heads(1), 1);
  PolicyNet<float> five(kSocialRowWidth, EncoderConfig{}, guide_heads(5), 1);
  EXPECT_EQ(one.store().parameter_count("backbone"), five.store().parameter_count("backbone"));
  EXPECT_EQ(five.store().parameter_count("guide"), 5 * one.store().parameter_count("guide"));
  EXPECT_GT(one.store().parameter_count("backbone"), 0u);
}

TEST(Heads, UnknownHeadIsRejected) {
  PolicyNet<float> net(kSocialRowWidth, EncoderConfig{}, guide_heads(2), 1);
  EXPECT_EQ(net.head_index("guide1"), 1u);
  EXPECT_THROW(net.head_index("meta"), std::out_of_range);
  const auto obs = random_observations(2, 1, false);
  PolicyNet<float> meta(kSocialRowWidth, EncoderConfig{}, meta_heads(), 1);
  const auto enc = meta.encode(social_batch(obs), Tensor<float>(2, 64));
  EXPECT_THROW(meta.head(0, enc.hidden, Var<float>()), std::invalid_argument);
}

TEST(Heads, ValueAndPolicyGradientsAreIsolated) {
  PolicyNet<double> net(kSocialRowWidth, small_config(), meta_heads(), 7);
  const auto obs = random_observations(6, 3, false);
  Rng rng(5);
  const auto h = random_state<double>(obs.size(), 7, rng);
  const auto beta = PolicyNet<double>::beta_column(std::vector<double>(obs.size(), 1.0));
  auto grad_norm = [&](const std::string& prefix) {
    double sq = 0.0;
    for (const auto& e : net.store().entries()) {
      if (e.name.rfind(prefix, 0) != 0) continue;
      for (double g : e.param.grad().values()) sq += g * g;
    }
    return sq;
  };
  net.store().zero_grad();
  auto out = net.head(0, net.encode(social_batch(obs), h).hidden, beta);
  ad::backward(ad::mean_all(ad::square(out.value)));
  EXPECT_EQ(grad_norm("meta/pi"), 0.0);
  EXPECT_GT(grad_norm("meta/v"), 0.0);
  net.store().zero_grad();
  out = net.head(0, net.encode(social_batch(obs), h).hidden, beta);
  ad::backward(ad::sum_all(ad::log_softmax_rows(out.logits)));
  EXPECT_EQ(grad_norm("meta/v"), 0.0);
  EXPECT_GT(grad_norm("meta/pi"), 0.0);
}

TEST(Heads, UpdatingOneGuideLeavesOthersUnchanged) {
  PolicyNet<float> net(kSocialRowWidth, EncoderConfig{}, guide_heads(5), 9);
  const auto obs = random_observations(32, 7, false);
  const auto b = social_batch(obs);
  const Tensor<float> h(obs.size(), 64);
  auto outputs = [&]() {
    std::vector<Tensor<float>> out;
    const auto enc = net.encode(b, h);
    for (std::size_t k = 0; k < 5; ++k) out.push_back(net.head(k, enc.hidden, {}).logits.value());
    return out;
  };
  const auto before = outputs();
  net.store().zero_grad();
  const auto enc = net.encode(b, h);
  ad::backward(ad::sum_all(ad::log_softmax_rows(net.head(2, enc.hidden, {}).logits)));
  ad::adam_step(net.store(), 1e-2, {}, [](const std::string& n) {
    return n.rfind("guide2/", 0) == 0;
  });
  const auto after = outputs();
  for (std::size_t k = 0; k < 5; ++k) {
    if (k == 2) {
      EXPECT_NE(before[k], after[k]);
    } else {
      EXPECT_EQ(before[k], after[k]) << "head " << k;
    }
  }
}

TEST(EgoNet, PermutingSocialRowsWithLatentsGivesIdenticalOutput) {
  const EncoderConfig c;
  PolicyNet<float> net(ego_row_width(c), c, ego_heads(), 2);
  Rng rng(4);
  const auto obs = random_observations(10, 5, true);
  for (const auto& o : obs) {
    const auto lat = random_latents(o.rows.size(), c.latent, rng);
    SetBatch b(ego_row_width(c));
    b.append(ego_rows(o, lat, c.latent), 0);
    // Permute socials 1 and 3 together with their latents.
    sim::Observation p = o;
    std::swap(p.rows[1], p.rows[3]);
    auto plat = lat;
    for (std::size_t k = 0; k < c.latent; ++k) std::swap(plat[1 * c.latent + k], plat[3 * c.latent + k]);
    SetBatch pb(ego_row_width(c));
    pb.append(ego_rows(p, plat, c.latent), 0);
    const Tensor<float> h(1, c.hidden);
    const auto x = net.head(0, net.encode(b, h).hidden, {});
    const auto y = net.head(0, net.encode(pb, h).hidden, {});
    EXPECT_EQ(x.logits.value(), y.logits.value());
    EXPECT_EQ(x.value.value(), y.value.value());
    const auto p_sum = ad::softmax_rows(x.logits).value();
    EXPECT_NEAR(p_sum[0] + p_sum[1] + p_sum[2], 1.0, 1e-6);
  }
}

TEST(EgoNet, LatentBlockMustMatchRows) {
  const auto obs = random_observations(1, 5, true);
  std::vector<float> lat(3);
  EXPECT_THROW(ego_rows(obs[0], lat, 4), std::invalid_argument);
  EXPECT_THROW(social_rows(obs[0]), std::invalid_argument);
}

TEST(History, ShortHistoriesArePaddedWithEarliestPoint) {
  std::vector<HistoryPoint> h{{1.0, 2.0, 3.0, 0.0}, {1.3, 2.0, 3.0, 0.0}};
  const auto f = history_features(h, 4);
  ASSERT_EQ(f.size(), 16u);
  for (int k = 0; k < 3; ++k) EXPECT_FLOAT_EQ(f[k * 4], float(-0.3 / 10.0));
  EXPECT_FLOAT_EQ(f[12], 0.0f);
  EXPECT_FLOAT_EQ(f[14], 1.0f);
  EXPECT_THROW(history_features(std::vector<HistoryPoint>{}, 4), std::invalid_argument);
}

TEST(Autoencoder, EncoderIsDeterministicAndLossNonNegative) {
  TrajectoryAutoencoder<float> ae(EncoderConfig{}, 3);
  Rng rng(1);
  const auto x = Var<float>::constant(random_state<float>(12, ae.input_width(), rng));
  EXPECT_EQ(ae.encode(x).value(), ae.encode(x).value());
  EXPECT_EQ(ae.encode(x).cols(), 4u);
  EXPECT_GE(ae.recon_loss(x).item(), 0.0f);
  // A perfect reconstruction has zero loss.
  const auto recon = ae.decode(ae.encode(x));
  EXPECT_EQ(ad::mean_all(ad::square(ad::sub(recon, recon))).item(), 0.0f);
}

TEST(Autoencoder, TrainingReducesLossOnConstantVelocityHistories) {
  const EncoderConfig c;
  TrajectoryAutoencoder<float> ae(c, 5);
  Rng rng(6);
  Tensor<float> data(64, ae.input_width());
  for (std::size_t i = 0; i < data.rows(); ++i) {
    const double v = rng.uniform(0.0, 3.0);
    std::vector<HistoryPoint> h;
    for (std::size_t t = 0; t < c.history; ++t) h.push_back({v * 0.1 * double(t), -2.0, v, 0.0});
    const auto f = history_features(h, c.history);
    std::copy(f.begin(), f.end(), data.row(i).begin());
  }
  const auto x = Var<float>::constant(data);
  const float untrained = ae.recon_loss(x).item();
  for (int step = 0; step < 300; ++step) {
    ae.store().zero_grad();
    ad::backward(ae.recon_loss(x));
    ad::adam_step(ae.store(), 3e-3);
  }
  EXPECT_LT(ae.recon_loss(x).item(), 0.5f * untrained);
}

// Finite-difference checks of every network in double precision.
class GradientSuite : public ::testing::Test {
 protected:
  static constexpr int kCoordinates = 30;
  Rng rng{2024};

  template <typename Net>
  void expect_gradients(ad::ParamStore<double>& store, const std::function<Var<double>()>& loss,
                        const std::string& prefix) {
    // Move every parameter off zero so no ReLU input sits exactly on its
    // kink, where central differences are meaningless.
    for (auto& e : store.entries()) {
      for (double& v : e.param.mutable_value().values()) v += rng.uniform(-0.05, 0.05);
    }
    store.zero_grad();
    ad::backward(loss());
    const auto analytic = gmrl::testing::snapshot_grads(store);
    const auto r = gmrl::testing::finite_difference_check(
        store, [&] { return loss().item(); }, analytic, kCoordinates, rng, 1e-5, prefix);
    EXPECT_EQ(r.checked, kCoordinates);
    EXPECT_LT(r.worst_relative_error, 1e-3) << r.worst_name << "[" << r.worst_index << "]";
  }
};

TEST_F(GradientSuite, MetaNetwork) {
  PolicyNet<double> net(kSocialRowWidth, small_config(), meta_heads(), 1);
  const auto obs = random_observations(5, 2, false);
  const auto b = social_batch(obs);
  const auto h = random_state<double>(obs.size(), 7, rng);
  const auto w = random_state<double>(obs.size(), 3, rng);
  const auto beta = PolicyNet<double>::beta_column({-1.0, 0.2, 1.0, 2.5, 3.0});
  auto loss = [&] { return head_loss(net.head(0, net.encode(b, h).hidden, beta), w); };
  expect_gradients<void>(net.store(), loss, "backbone");
  expect_gradients<void>(net.store(), loss, "meta");
}

TEST_F(GradientSuite, GuidingHeads) {
  PolicyNet<double> net(kSocialRowWidth, small_config(), guide_heads(5), 2);
  const auto obs = random_observations(5, 3, false);
  const auto b = social_batch(obs);
  const auto h = random_state<double>(obs.size(), 7, rng);
  const auto w = random_state<double>(obs.size(), 3, rng);
  auto loss = [&] {
    const auto enc = net.encode(b, h);
    Var<double> total = head_loss(net.head(0, enc.hidden, {}), w);
    for (std::size_t k = 1; k < 5; ++k) total = ad::add(total, head_loss(net.head(k, enc.hidden, {}), w));
    return total;
  };
  expect_gradients<void>(net.store(), loss, "backbone");
  expect_gradients<void>(net.store(), loss, "guide");
}

TEST_F(GradientSuite, EgoNetwork) {
  const auto c = small_config();
  PolicyNet<double> net(ego_row_width(c), c, ego_heads(), 3);
  const auto obs = random_observations(4, 4, true);
  SetBatch b(ego_row_width(c));
  for (const auto& o : obs) b.append(ego_rows(o, random_latents(o.rows.size(), c.latent, rng), c.latent), 0);
  const auto h = random_state<double>(obs.size(), 7, rng);
  const auto w = random_state<double>(obs.size(), 3, rng);
  auto loss = [&] { return head_loss(net.head(0, net.encode(b, h).hidden, {}), w); };
  expect_gradients<void>(net.store(), loss, "backbone");
  expect_gradients<void>(net.store(), loss, "ego");
}

TEST_F(GradientSuite, TrajectoryAutoencoder) {
  TrajectoryAutoencoder<double> ae(small_config(), 4);
  const auto x = Var<double>::constant(random_state<double>(6, ae.input_width(), rng));
  auto loss = [&] { return ae.recon_loss(x); };
  expect_gradients<void>(ae.store(), loss, "traj/enc");
  expect_gradients<void>(ae.store(), loss, "traj/dec");
  expect_gradients<void>(ae.store(), loss, "traj/latent");
}
