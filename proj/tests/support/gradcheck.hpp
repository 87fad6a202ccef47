#pragma once

// Central finite-difference oracle for gradient checks. Test-only: it
// touches parameters directly and never calls backward().

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gmrl/ad/param_store.hpp"
#include "gmrl/util/random.hpp"

namespace gmrl::testing {

struct GradCheckResult {
  int checked = 0;
  double worst_relative_error = 0.0;
  std::string worst_name;
  std::size_t worst_index = 0;
};

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  if (scale < 1e-9) return std::abs(analytic - numeric);
  return std::abs(analytic - numeric) / scale;
}

// `loss` must rebuild the graph from the store on every call. `analytic`
// holds the gradient snapshot taken after one backward pass. Coordinates are
// drawn at random from parameters whose name starts with `prefix`.
inline GradCheckResult finite_difference_check(
    ad::ParamStore<double>& store, const std::function<double()>& loss,
    const std::vector<std::vector<double>>& analytic, int coordinates,
    Rng& rng, double h = 1e-5, const std::string& prefix = "") {
  GradCheckResult out;
  std::vector<std::size_t> eligible;
  for (std::size_t k = 0; k < store.entries().size(); ++k) {
    if (store.entries()[k].name.rfind(prefix, 0) == 0) eligible.push_back(k);
  }
  if (eligible.empty()) return out;
  for (int c = 0; c < coordinates; ++c) {
    const std::size_t k = eligible[rng.below(eligible.size())];
    auto& entry = store.entries()[k];
    auto& values = entry.param.mutable_value();
    const std::size_t i = rng.below(values.size());
    const double saved = values[i];
    values[i] = saved + h;
    const double plus = loss();
    values[i] = saved - h;
    const double minus = loss();
    values[i] = saved;
    const double numeric = (plus - minus) / (2.0 * h);
    const double err = relative_error(analytic[k][i], numeric);
    ++out.checked;
    if (err > out.worst_relative_error) {
      out.worst_relative_error = err;
      out.worst_name = entry.name;
      out.worst_index = i;
    }
  }
  return out;
}

inline std::vector<std::vector<double>> snapshot_grads(const ad::ParamStore<double>& store) {
  std::vector<std::vector<double>> g;
  for (const auto& e : store.entries()) g.push_back(e.param.grad().values());
  return g;
}

}  // namespace gmrl::testing
