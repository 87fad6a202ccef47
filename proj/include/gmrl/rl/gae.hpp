#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace gmrl::rl {

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> targets;
};

// Generalised advantage estimation over one agent's trajectory segment.
//   delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t
//   A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}
// V_T is `bootstrap`, used only when the last step is not done.
inline GaeResult compute_gae(const std::vector<double>& rewards,
                             const std::vector<double>& values,
                             const std::vector<bool>& dones, double bootstrap,
                             double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) {
    throw std::invalid_argument("compute_gae: rewards, values and dones must align");
  }
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.targets.assign(n, 0.0);
  double next_value = bootstrap;
  double next_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double live = dones[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * next_value * live - values[i];
    next_adv = delta + gamma * lambda * live * next_adv;
    out.advantages[i] = next_adv;
    out.targets[i] = next_adv + values[i];
    next_value = values[i];
  }
  return out;
}

// Shifts and scales to mean 0, standard deviation 1 (population).
inline void normalize(std::vector<double>& x, const std::vector<std::size_t>& idx) {
  if (idx.size() < 2) {
    for (std::size_t i : idx) x[i] = 0.0;
    return;
  }
  double mean = 0.0;
  for (std::size_t i : idx) mean += x[i];
  mean /= double(idx.size());
  double var = 0.0;
  for (std::size_t i : idx) var += (x[i] - mean) * (x[i] - mean);
  const double sd = std::sqrt(var / double(idx.size()));
  for (std::size_t i : idx) x[i] = (x[i] - mean) / (sd + 1e-8);
}

}  // namespace gmrl::rl
