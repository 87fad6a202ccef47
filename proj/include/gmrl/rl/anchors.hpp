#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gmrl/util/errors.hpp"
#include "json.hpp"

namespace gmrl::rl {

// Anchor preferences with their guide distance and regularisation weight.
struct PreferenceAnchors {
  std::vector<double> anchors{-1.0, 0.0, 1.0, 2.0, 3.0};
  double guide_distance = 0.1;
  double reg_weight = 0.01;

  void validate() const {
    if (anchors.empty()) throw ConfigError("anchors: empty set");
    for (std::size_t k = 1; k < anchors.size(); ++k) {
      if (!(anchors[k] > anchors[k - 1])) {
        throw ConfigError("anchors: must be sorted and distinct");
      }
    }
    if (!(guide_distance > 0.0)) throw ConfigError("anchors: guide_distance must be > 0");
    if (!(reg_weight >= 0.0)) throw ConfigError("anchors: reg_weight must be >= 0");
  }

  // Index of the anchor within guide_distance of beta, or -1. When two
  // anchors qualify the nearer wins, ties going to the lower anchor.
  int match(double beta) const {
    const int k = nearest(beta);
    return std::abs(anchors[k] - beta) <= guide_distance ? k : -1;
  }

  // Nearest anchor; ties go to the lower anchor.
  int nearest(double beta) const {
    int best = 0;
    for (int k = 1; k < int(anchors.size()); ++k) {
      if (std::abs(anchors[k] - beta) < std::abs(anchors[best] - beta)) best = k;
    }
    return best;
  }

  // Exact index of an anchor value, or -1.
  int index_of(double beta) const {
    for (int k = 0; k < int(anchors.size()); ++k) {
      if (anchors[k] == beta) return k;
    }
    return -1;
  }
};

inline void to_json(nlohmann::json& j, const PreferenceAnchors& a) {
  j = {{"anchors", a.anchors}, {"guide_distance", a.guide_distance},
       {"reg_weight", a.reg_weight}};
}

inline void from_json(const nlohmann::json& j, PreferenceAnchors& a) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() != "anchors" && it.key() != "guide_distance" && it.key() != "reg_weight") {
      throw ConfigError("anchors: unknown key '" + it.key() + "'");
    }
  }
  a.anchors = j.value("anchors", a.anchors);
  a.guide_distance = j.value("guide_distance", a.guide_distance);
  a.reg_weight = j.value("reg_weight", a.reg_weight);
  a.validate();
}

}  // namespace gmrl::rl
