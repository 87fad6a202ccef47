#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "gmrl/ad/tensor.hpp"
#include "gmrl/sim/types.hpp"

namespace gmrl::nets {

inline constexpr double kPositionScale = 10.0;
inline constexpr double kSpeedScale = 3.0;

// Row layout seen by a social viewer:
//   [x, y, vx, vy, dx, dy, is_ego, beta], positions relative to the viewer
//   in dx, dy.
inline constexpr std::size_t kSocialRowWidth = 8;
// Row layout seen by the ego: [x, y, vx, vy, dx, dy, is_ego, latent...].
inline constexpr std::size_t kEgoBaseWidth = 7;
// Per-step history features: [x - x_now, y - y_now, vx, vy].
inline constexpr std::size_t kHistoryWidth = 4;

// Variable-size observation sets packed row-wise for batched evaluation.
// Set s owns rows [offsets[s], offsets[s+1]); viewer[s] is the absolute
// row index of the viewer's own row.
struct SetBatch {
  std::size_t width = 0;
  std::vector<float> rows;
  std::vector<int> offsets{0};
  std::vector<int> viewer;

  explicit SetBatch(std::size_t w = 0) : width(w) {}

  std::size_t size() const { return viewer.size(); }
  std::size_t row_count() const { return std::size_t(offsets.back()); }

  // Appends one set; `viewer_row` is relative to the set.
  void append(std::span<const float> set_rows, int viewer_row) {
    if (width == 0 || set_rows.empty() || set_rows.size() % width != 0) {
      throw std::invalid_argument("SetBatch: malformed set");
    }
    const int n = int(set_rows.size() / width);
    if (viewer_row < 0 || viewer_row >= n) {
      throw std::invalid_argument("SetBatch: viewer row out of range");
    }
    viewer.push_back(offsets.back() + viewer_row);
    rows.insert(rows.end(), set_rows.begin(), set_rows.end());
    offsets.push_back(offsets.back() + n);
  }

  template <typename T>
  ad::Tensor<T> tensor() const {
    ad::Tensor<T> t(row_count(), width);
    for (std::size_t i = 0; i < rows.size(); ++i) t[i] = T(rows[i]);
    return t;
  }
};

inline void append_kinematics(std::vector<float>& out, const sim::ObservationRow& r,
                              const sim::ObservationRow& self) {
  out.push_back(float(r.x / kPositionScale));
  out.push_back(float(r.y / kPositionScale));
  out.push_back(float(r.vx / kSpeedScale));
  out.push_back(float(r.vy / kSpeedScale));
  out.push_back(float((r.x - self.x) / kPositionScale));
  out.push_back(float((r.y - self.y) / kPositionScale));
  out.push_back(r.role == sim::Role::kEgo ? 1.0f : 0.0f);
}

// Feature rows for a social viewer, one per observation row.
inline std::vector<float> social_rows(const sim::Observation& obs) {
  if (obs.viewer_role != sim::Role::kSocial) {
    throw std::invalid_argument("social_rows: viewer must be social");
  }
  const auto& self = obs.rows.at(obs.viewer);
  std::vector<float> out;
  out.reserve(obs.rows.size() * kSocialRowWidth);
  for (const auto& r : obs.rows) {
    append_kinematics(out, r, self);
    out.push_back(float(r.preference.value_or(0.0)));
  }
  return out;
}

// Feature rows for the ego viewer. `latents` holds latent_dim values per
// observation row (the ego's own slot is ignored and written as zeros).
inline std::vector<float> ego_rows(const sim::Observation& obs,
                                   std::span<const float> latents,
                                   std::size_t latent_dim) {
  if (obs.viewer_role != sim::Role::kEgo) {
    throw std::invalid_argument("ego_rows: viewer must be the ego");
  }
  if (latents.size() != obs.rows.size() * latent_dim) {
    throw std::invalid_argument("ego_rows: latent block has wrong size");
  }
  const auto& self = obs.rows.at(obs.viewer);
  std::vector<float> out;
  out.reserve(obs.rows.size() * (kEgoBaseWidth + latent_dim));
  for (std::size_t i = 0; i < obs.rows.size(); ++i) {
    const auto& r = obs.rows[i];
    append_kinematics(out, r, self);
    for (std::size_t k = 0; k < latent_dim; ++k) {
      out.push_back(r.role == sim::Role::kEgo ? 0.0f : latents[i * latent_dim + k]);
    }
  }
  return out;
}

// One physical state of a social vehicle as seen by the ego.
struct HistoryPoint {
  double x = 0.0, y = 0.0, vx = 0.0, vy = 0.0;
};

// Last `length` points relative to the newest one, oldest first, padded at
// the front with the earliest known point.
inline std::vector<float> history_features(std::span<const HistoryPoint> history,
                                           std::size_t length) {
  if (history.empty()) throw std::invalid_argument("history_features: empty history");
  const HistoryPoint& now = history.back();
  std::vector<float> out;
  out.reserve(length * kHistoryWidth);
  const std::size_t have = history.size();
  for (std::size_t k = 0; k < length; ++k) {
    const std::ptrdiff_t idx = std::ptrdiff_t(have) - std::ptrdiff_t(length) + std::ptrdiff_t(k);
    const HistoryPoint& p = history[std::size_t(std::max<std::ptrdiff_t>(0, idx))];
    out.push_back(float((p.x - now.x) / kPositionScale));
    out.push_back(float((p.y - now.y) / kPositionScale));
    out.push_back(float(p.vx / kSpeedScale));
    out.push_back(float(p.vy / kSpeedScale));
  }
  return out;
}

}  // namespace gmrl::nets
