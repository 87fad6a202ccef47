#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>
#include <vector>

#include "gmrl/ad/param_store.hpp"
#include "gmrl/rl/config.hpp"
#include "gmrl/rl/gae.hpp"
#include "gmrl/rl/losses.hpp"
#include "gmrl/rl/runner.hpp"

namespace gmrl::rl {

enum class Learner { kEgo, kSocial };

// One decision of a learning agent.
struct Record {
  std::vector<float> rows;
  int viewer = 0;
  std::vector<float> hidden;
  double beta = 0.0;
  int head = 0;
  int action = 0;
  double log_prob = 0.0;
  double value = 0.0;
  double reward = 0.0;
  bool done = false;
  int anchor = -1;
  bool has_guide = false;
  std::array<double, 3> guide{};
  std::array<double, 3> probs{};
  double advantage = 0.0;
  double target = 0.0;
};

struct RolloutBatch {
  std::vector<Record> records;
  std::vector<double> returns;  // completed learner trajectories (lives)
  int episodes = 0;
  int idm_episodes = 0;
  int neural_episodes = 0;
  int ego_goal = 0, ego_fail = 0, ego_timeout = 0;
  int discarded_episodes = 0;
  int spawned_vehicles = 0;
  int matched_vehicles = 0;
};

// Turns runner steps into learner records, cutting trajectories at the end
// of every collection with a bootstrap value.
class Collector {
 public:
  Collector(Runner& runner, Learner learner, const PpoSettings& ppo)
      : runner_(runner), learner_(learner), ppo_(ppo) {}

  RolloutBatch collect(int steps) {
    RolloutBatch batch;
    std::map<std::pair<int, int>, std::vector<std::size_t>> open;
    for (int t = 0; t < steps; ++t) {
      const auto out = runner_.step();
      for (int i = 0; i < int(out.size()); ++i) {
        const auto& e = out[i];
        if (e.faulted) {
          ++batch.discarded_episodes;
          for (auto it = open.begin(); it != open.end();) {
            if (it->first.first == i) {
              for (std::size_t r : it->second) batch.records[r].rows.clear();
              it = open.erase(it);
            } else {
              ++it;
            }
          }
          clear_returns(i);
          continue;
        }
        for (const auto& a : e.agents) {
          if (!is_learner(a)) continue;
          const auto key = std::make_pair(i, a.agent);
          if (learner_ == Learner::kSocial) {
            auto& seen = lives_[key];
            if (seen != a.life_id + 1) {
              seen = a.life_id + 1;
              ++batch.spawned_vehicles;
              if (runner_.options().anchors &&
                  runner_.options().anchors->match(a.beta) >= 0) {
                ++batch.matched_vehicles;
              }
            }
          }
          Record r;
          r.rows = a.rows;
          r.viewer = a.viewer;
          r.hidden = a.hidden;
          r.beta = a.beta;
          r.head = a.head;
          r.action = a.action;
          r.log_prob = a.log_prob;
          r.value = a.value;
          r.reward = a.reward;
          r.done = a.done;
          r.anchor = a.anchor;
          r.has_guide = a.has_guide;
          r.guide = a.guide;
          r.probs = a.probs;
          open[key].push_back(batch.records.size());
          batch.records.push_back(std::move(r));
          running_return_[key] += a.reward;
          if (a.done) {
            finish(batch, open, key, 0.0);
            batch.returns.push_back(running_return_[key]);
            running_return_.erase(key);
          }
        }
        if (e.episode_done) {
          ++batch.episodes;
          (e.neural_socials ? batch.neural_episodes : batch.idm_episodes) += 1;
          switch (e.ego_flag) {
            case sim::AgentFlag::kGoal: ++batch.ego_goal; break;
            case sim::AgentFlag::kFail: ++batch.ego_fail; break;
            default: ++batch.ego_timeout;
          }
          for (auto it = lives_.begin(); it != lives_.end();) {
            it = it->first.first == i ? lives_.erase(it) : std::next(it);
          }
        }
      }
    }
    if (!open.empty()) {
      const auto values = runner_.peek_values();
      while (!open.empty()) {
        const auto key = open.begin()->first;
        const double v = values.at(key.first).at(key.second);
        finish(batch, open, key, std::isfinite(v) ? v : 0.0);
      }
    }
    // Drop records of discarded episodes.
    std::vector<Record> kept;
    kept.reserve(batch.records.size());
    for (auto& r : batch.records) {
      if (!r.rows.empty()) kept.push_back(std::move(r));
    }
    batch.records = std::move(kept);
    return batch;
  }

 private:
  bool is_learner(const AgentStep& a) const {
    return learner_ == Learner::kEgo ? a.agent == 0 : (a.agent > 0 && a.neural);
  }

  void clear_returns(int env) {
    for (auto it = running_return_.begin(); it != running_return_.end();) {
      it = it->first.first == env ? running_return_.erase(it) : std::next(it);
    }
    for (auto it = lives_.begin(); it != lives_.end();) {
      it = it->first.first == env ? lives_.erase(it) : std::next(it);
    }
  }

  void finish(RolloutBatch& batch, std::map<std::pair<int, int>, std::vector<std::size_t>>& open,
              const std::pair<int, int>& key, double bootstrap) {
    auto it = open.find(key);
    if (it == open.end()) return;
    std::vector<double> rewards, values;
    std::vector<bool> dones;
    for (std::size_t r : it->second) {
      rewards.push_back(batch.records[r].reward);
      values.push_back(batch.records[r].value);
      dones.push_back(batch.records[r].done);
    }
    const auto g = compute_gae(rewards, values, dones, bootstrap, ppo_.gamma, ppo_.lambda);
    for (std::size_t k = 0; k < it->second.size(); ++k) {
      batch.records[it->second[k]].advantage = g.advantages[k];
      batch.records[it->second[k]].target = g.targets[k];
    }
    open.erase(it);
  }

  Runner& runner_;
  Learner learner_;
  PpoSettings ppo_;
  std::map<std::pair<int, int>, double> running_return_;
  std::map<std::pair<int, int>, std::uint64_t> lives_;
};

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double reg_loss = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  int updates = 0;
  int skipped = 0;
};

// Clipped-surrogate updates of one policy network. With `guided` set the
// loss adds reg_weight times the summed KL to the recorded guiding
// distributions of matched records.
class PpoTrainer {
 public:
  PpoTrainer(nets::PolicyNet<float>& net, const PpoSettings& ppo, std::int64_t total_updates,
             std::uint64_t seed, bool guided = false, double reg_weight = 0.0,
             bool per_head_normalization = false)
      : net_(net), ppo_(ppo), schedule_{ppo.lr, total_updates}, rng_(seed), guided_(guided),
        reg_weight_(reg_weight), per_head_(per_head_normalization) {}

  std::int64_t updates_done() const { return updates_; }

  UpdateStats update(RolloutBatch& batch) {
    UpdateStats stats;
    auto& recs = batch.records;
    const std::size_t n = recs.size();
    if (n == 0) return stats;
    std::vector<double> adv(n);
    for (std::size_t i = 0; i < n; ++i) adv[i] = recs[i].advantage;
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < n; ++i) groups[per_head_ ? recs[i].head : 0].push_back(i);
    for (const auto& [head, idx] : groups) normalize(adv, idx);

    std::vector<std::size_t> order(n);
    const std::size_t mb = std::size_t(ppo_.minibatch);
    int terms = 0;
    for (int epoch = 0; epoch < ppo_.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), std::size_t(0));
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng_.below(i)]);
      for (std::size_t start = 0; start < n; start += mb) {
        const std::size_t stop = std::min(n, start + mb);
        std::vector<std::size_t> idx(order.begin() + start, order.begin() + stop);
        const double lr = schedule_.at(updates_);
        ++updates_;
        stats.lr = lr;
        const auto m = minibatch_step(recs, adv, idx, lr);
        if (!m.applied) {
          ++stats.skipped;
          if (++consecutive_drops_ >= 5) {
            throw TrainingDiverged("ppo: 5 consecutive non-finite losses");
          }
          continue;
        }
        consecutive_drops_ = 0;
        stats.policy_loss += m.policy;
        stats.value_loss += m.value;
        stats.entropy += m.entropy;
        stats.reg_loss += m.reg;
        stats.approx_kl += m.approx_kl;
        stats.clip_fraction += m.clip_fraction;
        stats.grad_norm += m.grad_norm;
        ++terms;
      }
    }
    stats.updates = terms;
    if (terms > 0) {
      for (double* v : {&stats.policy_loss, &stats.value_loss, &stats.entropy, &stats.reg_loss,
                        &stats.approx_kl, &stats.clip_fraction, &stats.grad_norm}) {
        *v /= terms;
      }
    }
    return stats;
  }

 private:
  struct MinibatchResult {
    bool applied = false;
    double policy = 0.0, value = 0.0, entropy = 0.0, reg = 0.0;
    double approx_kl = 0.0, clip_fraction = 0.0, grad_norm = 0.0;
  };

  MinibatchResult minibatch_step(const std::vector<Record>& recs, const std::vector<double>& adv,
                                 const std::vector<std::size_t>& idx, double lr) {
    MinibatchResult res;
    const std::size_t count = idx.size();
    nets::SetBatch batch(net_.row_width());
    Tensor<float> h(count, net_.hidden_width());
    std::vector<double> betas(count);
    for (std::size_t k = 0; k < count; ++k) {
      const Record& r = recs[idx[k]];
      batch.append(r.rows, r.viewer);
      std::copy(r.hidden.begin(), r.hidden.end(), h.row(k).begin());
      betas[k] = r.beta;
    }
    const auto enc = net_.encode(batch, h);
    const auto beta_col = nets::PolicyNet<float>::beta_column(betas);
    std::map<int, std::vector<int>> by_head;
    for (std::size_t k = 0; k < count; ++k) by_head[recs[idx[k]].head].push_back(int(k));

    Var<float> policy, value, entropy, reg;
    double kl_sum = 0.0;
    int clipped = 0;
    for (const auto& [head, rows] : by_head) {
      const bool all = rows.size() == count;
      const auto feat = all ? enc.hidden : ad::gather_rows(enc.hidden, rows);
      const auto beta = all ? beta_col : ad::gather_rows(beta_col, rows);
      const auto out = net_.head(std::size_t(head), feat, beta);
      PpoTargets t;
      std::vector<int> guided_rows;
      Tensor<double> targets;
      std::vector<std::array<double, 3>> guide_probs;
      for (std::size_t j = 0; j < rows.size(); ++j) {
        const std::size_t i = idx[rows[j]];
        t.actions.push_back(recs[i].action);
        t.old_log_prob.push_back(recs[i].log_prob);
        t.advantages.push_back(adv[i]);
        t.returns.push_back(recs[i].target);
        if (guided_ && recs[i].has_guide) {
          guided_rows.push_back(int(j));
          guide_probs.push_back(recs[i].guide);
        }
      }
      const auto s = ppo_sums(out.logits, out.value, t, ppo_.loss());
      policy = policy.valid() ? ad::add(policy, s.policy) : s.policy;
      value = value.valid() ? ad::add(value, s.value) : s.value;
      entropy = entropy.valid() ? ad::add(entropy, s.entropy) : s.entropy;
      if (guided_) {
        targets = Tensor<double>(guide_probs.size(), 3);
        for (std::size_t g = 0; g < guide_probs.size(); ++g) {
          for (int c = 0; c < 3; ++c) targets(g, c) = guide_probs[g][c];
        }
        const auto r = reg_loss<float>(targets, out.logits, guided_rows);
        reg = reg.valid() ? ad::add(reg, r) : r;
      }
      const auto logp = ad::log_softmax_rows(out.logits).value();
      for (std::size_t j = 0; j < rows.size(); ++j) {
        const double new_lp = logp(j, t.actions[j]);
        kl_sum += t.old_log_prob[j] - new_lp;
        if (std::abs(std::exp(new_lp - t.old_log_prob[j]) - 1.0) > ppo_.clip) ++clipped;
      }
    }
    Var<float> loss = ppo_combine(policy, value, entropy, count, ppo_.loss());
    if (guided_) loss = ad::add(loss, ad::scale(reg, float(reg_weight_)));
    if (!std::isfinite(double(loss.item()))) {
      std::cerr << "ppo: non-finite loss, minibatch dropped\n";
      return res;
    }
    net_.store().zero_grad();
    ad::backward(loss);
    res.grad_norm = ad::clip_grad_norm(net_.store(), ppo_.max_grad_norm);
    if (!ad::adam_step(net_.store(), lr)) return res;
    res.applied = true;
    res.policy = double(policy.item()) / double(count);
    res.value = double(value.item()) / double(count);
    res.entropy = double(entropy.item()) / double(count);
    res.reg = guided_ ? double(reg.item()) : 0.0;
    res.approx_kl = kl_sum / double(count);
    res.clip_fraction = double(clipped) / double(count);
    return res;
  }

  nets::PolicyNet<float>& net_;
  PpoSettings ppo_;
  ad::LinearDecay schedule_;
  Rng rng_;
  bool guided_;
  double reg_weight_;
  bool per_head_;
  std::int64_t updates_ = 0;
  int consecutive_drops_ = 0;
};

// Pre-trains the trajectory autoencoder on history windows (rows of H*4).
// Returns the final epoch's mean reconstruction loss.
inline double train_autoencoder(nets::TrajectoryAutoencoder<float>& ae,
                                const std::vector<float>& windows,
                                const InferenceSettings& s, std::uint64_t seed) {
  const std::size_t width = ae.input_width();
  const std::size_t n = windows.size() / width;
  if (n == 0) return 0.0;
  Rng rng(seed);
  std::vector<std::size_t> order(n);
  const std::int64_t per_epoch = std::int64_t((n + s.minibatch - 1) / s.minibatch);
  const ad::LinearDecay schedule{s.lr, per_epoch * s.epochs};
  std::int64_t step = 0;
  double last = 0.0;
  for (int epoch = 0; epoch < s.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t(0));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < n; start += std::size_t(s.minibatch)) {
      const std::size_t stop = std::min(n, start + std::size_t(s.minibatch));
      Tensor<float> x(stop - start, width);
      for (std::size_t k = start; k < stop; ++k) {
        std::copy_n(windows.begin() + std::ptrdiff_t(order[k] * width), width,
                    x.row(k - start).begin());
      }
      ae.store().zero_grad();
      const auto loss = ae.recon_loss(Var<float>::constant(std::move(x)));
      ad::backward(loss);
      ad::adam_step(ae.store(), schedule.at(step++));
      sum += double(loss.item());
      ++batches;
    }
    last = sum / double(std::max(1, batches));
  }
  return last;
}

}  // namespace gmrl::rl
