#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "gmrl/ad/graph.hpp"
#include "json.hpp"

namespace gmrl::rl {

using ad::Tensor;
using ad::Var;

struct PpoConfig {
  double clip = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
};

// Per-record inputs of the clipped surrogate for one group of rows.
struct PpoTargets {
  std::vector<int> actions;
  std::vector<double> old_log_prob;
  std::vector<double> advantages;
  std::vector<double> returns;
};

// Sums over the rows of one group. Minimising
//   (policy + value_coef * value - entropy_coef * entropy) / N
// maximises the clipped surrogate and the entropy while fitting the value.
template <typename T>
struct PpoSums {
  Var<T> policy;   // -sum min(rho A, clip(rho) A)
  Var<T> value;    // sum (V - R)^2
  Var<T> entropy;  // sum H(pi)
};

template <typename T>
Var<T> column(const std::vector<double>& v) {
  Tensor<T> t(v.size(), 1);
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = T(v[i]);
  return Var<T>::constant(std::move(t));
}

template <typename T>
Var<T> entropy_rows(const Var<T>& logits) {
  const Var<T> logp = ad::log_softmax_rows(logits);
  return ad::neg(ad::sum_cols(ad::mul(ad::softmax_rows(logits), logp)));
}

template <typename T>
PpoSums<T> ppo_sums(const Var<T>& logits, const Var<T>& values, const PpoTargets& t,
                    const PpoConfig& cfg) {
  const std::size_t n = logits.rows();
  if (t.actions.size() != n || t.old_log_prob.size() != n || t.advantages.size() != n ||
      t.returns.size() != n || values.rows() != n) {
    throw std::invalid_argument("ppo_sums: record count mismatch");
  }
  const Var<T> logp = ad::gather_cols(ad::log_softmax_rows(logits), t.actions);
  const Var<T> ratio = ad::exp(ad::sub(logp, column<T>(t.old_log_prob)));
  const Var<T> adv = column<T>(t.advantages);
  const Var<T> unclipped = ad::mul(ratio, adv);
  const Var<T> clipped =
      ad::mul(ad::clamp(ratio, T(1.0 - cfg.clip), T(1.0 + cfg.clip)), adv);
  PpoSums<T> s;
  s.policy = ad::neg(ad::sum_all(ad::minimum(unclipped, clipped)));
  s.value = ad::sum_all(ad::square(ad::sub(values, column<T>(t.returns))));
  s.entropy = ad::sum_all(entropy_rows(logits));
  return s;
}

template <typename T>
Var<T> ppo_combine(const Var<T>& policy, const Var<T>& value, const Var<T>& entropy,
                   std::size_t count, const PpoConfig& cfg) {
  const T inv = T(1.0 / double(count));
  return ad::scale(ad::add(ad::add(policy, ad::scale(value, T(cfg.value_coef))),
                           ad::scale(entropy, T(-cfg.entropy_coef))),
                   inv);
}

// Mean PPO loss over one group of records.
template <typename T>
Var<T> ppo_loss(const Var<T>& logits, const Var<T>& values, const PpoTargets& t,
                const PpoConfig& cfg) {
  const auto s = ppo_sums(logits, values, t, cfg);
  return ppo_combine(s.policy, s.value, s.entropy, logits.rows(), cfg);
}

// Row-wise KL(p || softmax(logits)) -> (rows x 1). Zero-probability
// entries of p contribute nothing.
template <typename T>
Var<T> kl_rows(const Tensor<double>& p, const Var<T>& logits) {
  if (p.rows() != logits.rows() || p.cols() != logits.cols()) {
    throw std::invalid_argument("kl_rows: target shape " + p.shape_string());
  }
  std::vector<double> self_term(p.rows(), 0.0);
  Tensor<T> pt(p.rows(), p.cols());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    for (std::size_t j = 0; j < p.cols(); ++j) {
      const double v = p(i, j);
      pt(i, j) = T(v);
      if (v > 0.0) self_term[i] += v * std::log(v);
    }
  }
  const Var<T> cross = ad::sum_cols(ad::mul(Var<T>::constant(std::move(pt)),
                                            ad::log_softmax_rows(logits)));
  return ad::sub(column<T>(self_term), cross);
}

// Sum over matched records of KL(guide || meta). `targets` holds the frozen
// guiding distributions of the matched rows of `logits` listed in `rows`.
template <typename T>
Var<T> reg_loss(const Tensor<double>& targets, const Var<T>& logits,
                const std::vector<int>& rows) {
  if (rows.empty()) return Var<T>::constant(Tensor<T>::scalar(T(0)));
  return ad::sum_all(kl_rows(targets, ad::gather_rows(logits, rows)));
}

inline void to_json(nlohmann::json& j, const PpoConfig& c) {
  j = {{"clip", c.clip}, {"value_coef", c.value_coef}, {"entropy_coef", c.entropy_coef}};
}

}  // namespace gmrl::rl
